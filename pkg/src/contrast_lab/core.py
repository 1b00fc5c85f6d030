"""Shared domain types and validation for embeddings and similarity rows."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-6
SIM_TOL = 1e-9
ZERO_NORM = 1e-12


class ContrastLabError(Exception):
    """Base class for every error raised by this package."""


class ZeroNormRow(ContrastLabError):
    def __init__(self, index):
        super().__init__(f"row {index} has (near) zero norm")
        self.index = index


class SimilarityOutOfRange(ContrastLabError):
    def __init__(self, value):
        super().__init__(f"similarity {value!r} outside [-1, 1]")
        self.value = value


class EmptyNegatives(ContrastLabError):
    pass


class EmptyBatch(ContrastLabError):
    pass


class EmptyInput(ContrastLabError):
    pass


class EmptyGrid(ContrastLabError):
    pass


class BatchTooSmall(ContrastLabError):
    pass


class DimensionMismatch(ContrastLabError):
    pass


class ShapeMismatch(ContrastLabError):
    pass


class NotUnitNorm(ContrastLabError):
    pass


class NonPositiveTau(ContrastLabError):
    def __init__(self, tau):
        super().__init__(f"temperature must be positive and finite, got {tau!r}")
        self.tau = tau


class NonFiniteLoss(ContrastLabError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class NonFiniteOutput(ContrastLabError):
    pass


class InvalidConfig(ContrastLabError):
    pass


class MalformedRecord(ContrastLabError):
    pass


class LabelOutOfRange(ContrastLabError):
    pass


def check_tau(tau) -> float:
    tau = float(tau)
    if not (tau > 0.0 and math.isfinite(tau)):
        raise NonPositiveTau(tau)
    return tau


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UnitEmbeddingBatch:
    """N row vectors on the unit sphere S^{m-1}, stored as float64."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatch(f"expected an N x m matrix, got shape {data.shape}")
        n, m = data.shape
        if n < 1 or m < 2:
            raise ShapeMismatch(f"need N >= 1 and m >= 2, got {data.shape}")
        norms = np.linalg.norm(data, axis=1)
        bad = np.flatnonzero(~(np.abs(norms - 1.0) <= NORM_TOL))
        if bad.size:
            raise NotUnitNorm(f"row {int(bad[0])} has norm {norms[bad[0]]!r}, expected 1")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.N


def make_unit_batch(raw) -> UnitEmbeddingBatch:
    """Row-normalize ``raw`` into a :class:`UnitEmbeddingBatch`.

    Raises :class:`ZeroNormRow` for the first row whose norm is <= 1e-12.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    norms, scaled, scaled_norms = row_norms(raw)
    bad = np.flatnonzero(~(norms > ZERO_NORM))
    if bad.size:
        raise ZeroNormRow(int(bad[0]))
    return UnitEmbeddingBatch(scaled / scaled_norms[:, None])


def row_norms(raw: np.ndarray):
    """Overflow-safe row norms.

    Returns ``(norms, scaled, scaled_norms)`` where ``scaled`` is each row divided
    by its largest magnitude; ``norms`` may be ``inf`` for huge finite rows.
    """
    peak = np.max(np.abs(raw), axis=1)
    safe = np.where(peak > 0, peak, 1.0)
    scaled = raw / safe[:, None]
    scaled_norms = np.linalg.norm(scaled, axis=1)
    with np.errstate(over="ignore"):
        norms = peak * scaled_norms
    return norms, scaled, scaled_norms


@dataclass(frozen=True, eq=False)
class LogitsRow:
    """One anchor's positive similarity and its K negative similarities.

    Construction does not validate; call :func:`validate_logits` (the loss
    functions do this on entry).
    """

    pos: float
    negs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pos", float(self.pos))
        negs = np.array(self.negs, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "negs", _readonly(negs))

    @property
    def K(self) -> int:
        return self.negs.shape[0]


def validate_logits(row: LogitsRow) -> None:
    if row.K < 1:
        raise EmptyNegatives("a logits row needs at least one negative")
    if not abs(row.pos) <= 1.0 + SIM_TOL:
        raise SimilarityOutOfRange(row.pos)
    bad = np.flatnonzero(~(np.abs(row.negs) <= 1.0 + SIM_TOL))
    if bad.size:
        raise SimilarityOutOfRange(float(row.negs[bad[0]]))


@dataclass(frozen=True)
class TemperatureConfig:
    tau0: float = 0.1
    alpha: float = 0.5
    A0: float = 0.0
    tau_floor_ratio: float = 0.05

    def __post_init__(self):
        for name in ("tau0", "alpha", "A0", "tau_floor_ratio"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidConfig(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.tau0 <= 0:
            raise InvalidConfig(f"tau0 must be > 0, got {self.tau0}")
        if self.alpha < 0:
            raise InvalidConfig(f"alpha must be >= 0, got {self.alpha}")
        if not -1.0 <= self.A0 <= 1.0:
            raise InvalidConfig(f"A0 must lie in [-1, 1], got {self.A0}")
        if not 0.0 < self.tau_floor_ratio < 1.0:
            raise InvalidConfig(f"tau_floor_ratio must lie in (0, 1), got {self.tau_floor_ratio}")


class Variant(str, enum.Enum):
    INFONCE = "INFONCE"
    NTXENT_INBATCH = "NTXENT_INBATCH"
    DCL = "DCL"
    MACL = "MACL"


@dataclass(frozen=True)
class LossSpec:
    """Loss variant plus temperature settings.

    ``adaptive`` and ``reweight`` only affect MACL; with both off MACL is
    InfoNCE at ``temperature.tau0``.
    """

    variant: Variant = Variant.INFONCE
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)
    adaptive: bool = False
    reweight: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError:
            raise InvalidConfig(f"unknown loss variant {self.variant!r}") from None

    @property
    def is_macl(self) -> bool:
        return self.variant is Variant.MACL

    @property
    def uses_adaptive(self) -> bool:
        return self.is_macl and self.adaptive

    @property
    def uses_reweight(self) -> bool:
        return self.is_macl and self.reweight

    @property
    def drops_scaling_factor(self) -> bool:
        """True when the anchor gradient has no W factor (DCL, reweighted MACL)."""
        return self.variant is Variant.DCL or self.uses_reweight


@dataclass(frozen=True, eq=False)
class GradientReport:
    d_anchor: np.ndarray
    d_pos_key: np.ndarray
    d_neg_keys: np.ndarray
    W: float
    P_pos: float
    P_neg: np.ndarray
    P_hat: np.ndarray
