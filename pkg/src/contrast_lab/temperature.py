"""Alignment estimates and the alignment-adaptive temperature rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    SIM_TOL,
    DimensionMismatch,
    EmptyInput,
    SimilarityOutOfRange,
    TemperatureConfig,
    UnitEmbeddingBatch,
)


@dataclass(frozen=True)
class AlignmentEstimate:
    A: float
    align_loss: float
    n_pairs: int


def alignment_loss(anchors: UnitEmbeddingBatch, pos_keys: UnitEmbeddingBatch) -> float:
    """Mean squared Euclidean distance between paired rows."""
    if anchors.data.shape != pos_keys.data.shape:
        raise DimensionMismatch(
            f"anchor shape {anchors.data.shape} != positive key shape {pos_keys.data.shape}"
        )
    diff = anchors.data - pos_keys.data
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


def alignment_magnitude(pos_sims) -> AlignmentEstimate:
    """Mean positive similarity ``A`` and the matching alignment loss ``2 - 2A``."""
    sims = np.asarray(pos_sims, dtype=np.float64).reshape(-1)
    if sims.size == 0:
        raise EmptyInput("alignment_magnitude needs at least one positive similarity")
    bad = np.flatnonzero(~(np.abs(sims) <= 1.0 + SIM_TOL))
    if bad.size:
        raise SimilarityOutOfRange(float(sims[bad[0]]))
    A = float(np.mean(sims))
    return AlignmentEstimate(A=A, align_loss=2.0 - 2.0 * A, n_pairs=int(sims.size))


def adaptive_temperature(A: float, cfg: TemperatureConfig) -> tuple[float, bool]:
    """Return ``(tau_a, clamped)`` with ``tau_a = [1 + alpha (A - A0)] tau0``.

    The result is floored at ``tau_floor_ratio * tau0`` so large ``alpha``
    with poor alignment cannot produce a non-positive temperature.
    """
    A = float(A)
    if not abs(A) <= 1.0 + SIM_TOL:
        raise SimilarityOutOfRange(A)
    raw = (1.0 + cfg.alpha * (A - cfg.A0)) * cfg.tau0
    floor = cfg.tau_floor_ratio * cfg.tau0
    if raw < floor:
        return floor, True
    return raw, False
