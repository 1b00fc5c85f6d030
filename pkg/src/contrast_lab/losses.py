"""Forward values of InfoNCE, DCL and MACL, plus the symmetric in-batch construction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    BatchTooSmall,
    DimensionMismatch,
    EmptyBatch,
    EmptyNegatives,
    LogitsRow,
    LossSpec,
    UnitEmbeddingBatch,
    Variant,
    check_tau,
    validate_logits,
)
from .gradients import _softmax_parts
from .temperature import adaptive_temperature


@dataclass(frozen=True, eq=False)
class BatchLossResult:
    mean_loss: float
    per_anchor_loss: np.ndarray
    tau_used: float
    A_batch: float
    V: np.ndarray
    clamped: bool


def _neg_log_p_pos(pos: float, negs: np.ndarray, tau: float) -> float:
    # -log P_pos = log(1 + sum_j exp(gap_j)); log1p keeps precision when the
    # positive dominates, the shifted form avoids overflow when it does not.
    gaps = (np.asarray(negs, dtype=np.float64) - pos) / tau
    top = float(gaps.max())
    if top <= 0.0:
        return math.log1p(float(np.exp(gaps).sum()))
    return top + math.log(math.exp(-top) + float(np.exp(gaps - top).sum()))


def _logsumexp(x: np.ndarray) -> float:
    top = float(x.max())
    return top + math.log(float(np.exp(x - top).sum()))


def _dcl_raw(pos: float, negs: np.ndarray, tau: float) -> float:
    return _logsumexp((np.asarray(negs, dtype=np.float64) - pos) / tau)


def cosine_logits(
    anchors: UnitEmbeddingBatch,
    pos_keys: UnitEmbeddingBatch,
    neg_keys: UnitEmbeddingBatch | Sequence[UnitEmbeddingBatch],
) -> list[LogitsRow]:
    """Build one :class:`LogitsRow` per anchor.

    ``neg_keys`` is either a shared pool (a single batch, e.g. a queue) that
    every anchor is contrasted against, or a sequence holding one batch of
    negatives per anchor.
    """
    if anchors.N != pos_keys.N:
        raise DimensionMismatch(f"{anchors.N} anchors but {pos_keys.N} positive keys")
    if anchors.m != pos_keys.m:
        raise DimensionMismatch(f"anchor dim {anchors.m} != key dim {pos_keys.m}")
    pos = np.einsum("ij,ij->i", anchors.data, pos_keys.data)

    if isinstance(neg_keys, UnitEmbeddingBatch):
        if neg_keys.m != anchors.m:
            raise DimensionMismatch(f"anchor dim {anchors.m} != negative dim {neg_keys.m}")
        negs = anchors.data @ neg_keys.data.T
        return [LogitsRow(p, n) for p, n in zip(pos, negs)]

    neg_keys = list(neg_keys)
    if len(neg_keys) != anchors.N:
        raise DimensionMismatch(f"{anchors.N} anchors but {len(neg_keys)} negative sets")
    if not neg_keys:
        raise EmptyNegatives("no negatives supplied")
    rows = []
    for f, p, negs in zip(anchors.data, pos, neg_keys):
        if negs.m != anchors.m:
            raise DimensionMismatch(f"anchor dim {anchors.m} != negative dim {negs.m}")
        rows.append(LogitsRow(p, negs.data @ f))
    return rows


def infonce_value(row: LogitsRow, tau: float) -> float:
    """InfoNCE loss ``-log softmax(pos)`` of one anchor."""
    tau = check_tau(tau)
    validate_logits(row)
    return _neg_log_p_pos(row.pos, row.negs, tau)


def dcl_value(row: LogitsRow, tau: float) -> float:
    """Decoupled loss ``-pos/tau + log sum_j exp(neg_j/tau)``; can be negative."""
    tau = check_tau(tau)
    validate_logits(row)
    return _dcl_raw(row.pos, row.negs, tau)


def anchor_loss(f_i, g_pos, g_negs, spec: LossSpec, tau: float, V: float | None = None) -> float:
    """Per-anchor loss as a function of free (not necessarily unit) vectors.

    No range validation is done so finite-difference probes may leave the
    sphere. ``tau`` is taken as given; for reweighted MACL ``V`` is held at
    the supplied value, or computed at this point when omitted.
    """
    f_i = np.asarray(f_i, dtype=np.float64)
    pos = float(f_i @ np.asarray(g_pos, dtype=np.float64))
    negs = np.atleast_2d(np.asarray(g_negs, dtype=np.float64)) @ f_i
    if spec.variant is Variant.DCL:
        return _dcl_raw(pos, negs, tau)
    value = _neg_log_p_pos(pos, negs, tau)
    if spec.uses_reweight:
        if V is None:
            V = 1.0 / _softmax_parts(pos, negs, tau)[2]
        value *= V
    return value


def _pos_column(rows: Sequence[LogitsRow]) -> np.ndarray:
    return np.fromiter((r.pos for r in rows), dtype=np.float64, count=len(rows))


def macl_batch_value(rows: Sequence[LogitsRow], spec: LossSpec) -> BatchLossResult:
    """MACL over a batch: adaptive temperature from the detached mean positive,
    per-anchor ``-V_i log P_pos`` with ``V_i = 1 / W_i`` held constant."""
    if not rows:
        raise EmptyBatch("MACL needs at least one row")
    for r in rows:
        validate_logits(r)
    A = float(np.mean(_pos_column(rows)))
    if spec.adaptive:
        tau, clamped = adaptive_temperature(A, spec.temperature)
    else:
        tau, clamped = spec.temperature.tau0, False
    tau = check_tau(tau)

    losses = np.empty(len(rows))
    V = np.ones(len(rows))
    for i, r in enumerate(rows):
        losses[i] = _neg_log_p_pos(r.pos, r.negs, tau)
        if spec.reweight:
            V[i] = 1.0 / _softmax_parts(r.pos, r.negs, tau)[2]
    per_anchor = V * losses
    return BatchLossResult(
        mean_loss=float(np.mean(per_anchor)),
        per_anchor_loss=per_anchor,
        tau_used=tau,
        A_batch=A,
        V=V,
        clamped=clamped,
    )


def batch_value(rows: Sequence[LogitsRow], spec: LossSpec) -> BatchLossResult:
    """Mean loss of any variant over a list of rows."""
    if spec.is_macl:
        return macl_batch_value(rows, spec)
    if not rows:
        raise EmptyBatch("need at least one row")
    tau = check_tau(spec.temperature.tau0)
    value = dcl_value if spec.variant is Variant.DCL else infonce_value
    per_anchor = np.array([value(r, tau) for r in rows])
    return BatchLossResult(
        mean_loss=float(np.mean(per_anchor)),
        per_anchor_loss=per_anchor,
        tau_used=tau,
        A_batch=float(np.mean(_pos_column(rows))),
        V=np.ones(len(rows)),
        clamped=False,
    )


def inbatch_partner(n: int) -> np.ndarray:
    """Index of each of the 2n stacked embeddings' positive counterpart."""
    idx = np.arange(2 * n)
    return (idx + n) % (2 * n)


def inbatch_rows(view1: UnitEmbeddingBatch, view2: UnitEmbeddingBatch) -> list[LogitsRow]:
    """Rows for the 2N anchors of the symmetric in-batch construction.

    Anchor ``k`` (view1 first, then view2) has its other-view counterpart as
    positive and the remaining 2N - 2 embeddings, in stacking order, as negatives.
    """
    if view1.N != view2.N or view1.m != view2.m:
        raise DimensionMismatch(f"views have shapes {view1.data.shape} and {view2.data.shape}")
    n = view1.N
    if n < 2:
        raise BatchTooSmall(f"in-batch contrast needs N >= 2, got {n}")
    z = np.vstack([view1.data, view2.data])
    sims = z @ z.T
    partner = inbatch_partner(n)
    rows = []
    for k in range(2 * n):
        keep = np.ones(2 * n, dtype=bool)
        keep[k] = keep[partner[k]] = False
        rows.append(LogitsRow(sims[k, partner[k]], sims[k, keep]))
    return rows


def inbatch_contrast(view1: UnitEmbeddingBatch, view2: UnitEmbeddingBatch, spec: LossSpec) -> BatchLossResult:
    """Symmetric in-batch loss averaged over all 2N anchors."""
    return batch_value(inbatch_rows(view1, view2), spec)
