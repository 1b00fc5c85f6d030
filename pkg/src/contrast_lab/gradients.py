"""Closed-form gradients of the contrastive loss family and a finite-difference oracle.

All probabilities are computed from logit gaps ``(s_j - s_pos) / tau`` so that
tiny scaling factors keep full relative precision instead of being formed as
``1 - P_pos``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    NORM_TOL,
    DimensionMismatch,
    EmptyNegatives,
    GradientReport,
    InvalidConfig,
    LogitsRow,
    LossSpec,
    NonFiniteLoss,
    NotUnitNorm,
    check_tau,
    validate_logits,
)


@dataclass(frozen=True)
class FiniteDiffConfig:
    step: float = 1e-5
    scheme: str = "central"
    rel_tol: float = 1e-5
    abs_tol: float = 1e-8

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidConfig(f"finite-difference step must be > 0, got {self.step}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidConfig("finite-difference tolerances must be > 0")
        if self.scheme != "central":
            raise InvalidConfig(f"only the central scheme is supported, got {self.scheme!r}")


def _softmax_parts(pos: float, negs: np.ndarray, tau: float):
    """Return ``(P_pos, P_neg, W)`` without validating the inputs."""
    gaps = (np.asarray(negs, dtype=np.float64) - pos) / tau
    top = gaps.max()
    if top <= 0.0:
        e = np.exp(gaps)
        denom = 1.0 + e.sum()
        p_pos = 1.0 / denom
    else:
        # a negative dominates: rescale by it so nothing overflows
        e = np.exp(gaps - top)
        e_pos = math.exp(-top)
        denom = e_pos + e.sum()
        p_pos = e_pos / denom
    p_neg = e / denom
    return p_pos, p_neg, float(e.sum() / denom)


def _hardness(negs: np.ndarray, tau: float) -> np.ndarray:
    x = np.asarray(negs, dtype=np.float64) / tau
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax_probs(row: LogitsRow, tau: float) -> tuple[float, np.ndarray]:
    """Softmax probability of the positive and of every negative at temperature ``tau``."""
    tau = check_tau(tau)
    validate_logits(row)
    p_pos, p_neg, _ = _softmax_parts(row.pos, row.negs, tau)
    return p_pos, p_neg


def scaling_factor(row: LogitsRow, tau: float) -> float:
    """Gradient scaling factor ``W = sum_j P_neg_j = 1 - P_pos``."""
    tau = check_tau(tau)
    validate_logits(row)
    return _softmax_parts(row.pos, row.negs, tau)[2]


def hardness_weights(row: LogitsRow, tau: float) -> np.ndarray:
    """Softmax over the negatives alone: the weight each negative gets in the push term."""
    tau = check_tau(tau)
    validate_logits(row)
    return _hardness(row.negs, tau)


def dW_dtau(row: LogitsRow, tau: float) -> float:
    """Derivative of the scaling factor with respect to the temperature.

    Uses ``(1/tau^2) * P_pos * sum_j (s_pos - s_j) P_neg_j``, which is the
    exp-sum expression with numerator and denominator both divided by the
    squared partition function.
    """
    tau = check_tau(tau)
    validate_logits(row)
    p_pos, p_neg, _ = _softmax_parts(row.pos, row.negs, tau)
    return float(p_pos * np.dot(row.pos - row.negs, p_neg) / tau**2)


def _as_vectors(f_i, g_pos, g_negs):
    f_i = np.asarray(f_i, dtype=np.float64).reshape(-1)
    g_pos = np.asarray(g_pos, dtype=np.float64).reshape(-1)
    g_negs = np.atleast_2d(np.asarray(g_negs, dtype=np.float64))
    m = f_i.shape[0]
    if g_pos.shape[0] != m or g_negs.shape[1] != m:
        raise DimensionMismatch(
            f"anchor dim {m}, positive dim {g_pos.shape[0]}, negative dim {g_negs.shape[1]}"
        )
    if g_negs.shape[0] < 1:
        raise EmptyNegatives("need at least one negative key")
    return f_i, g_pos, g_negs


def analytic_gradients(f_i, g_pos, g_negs, spec: LossSpec, tau_used: float) -> GradientReport:
    """Gradients of one anchor's loss w.r.t. the anchor, its positive key and each negative key.

    The embeddings are treated as free variables of the dot-product loss.
    For MACL the temperature ``tau_used`` and the reweighting factor are held
    constant, so reweighted MACL and DCL share the InfoNCE expressions with the
    scaling factor replaced by one.
    """
    tau = check_tau(tau_used)
    f_i, g_pos, g_negs = _as_vectors(f_i, g_pos, g_negs)
    for name, v in (("anchor", f_i[None, :]), ("positive key", g_pos[None, :]), ("negative key", g_negs)):
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise NotUnitNorm(f"{name} vectors must be unit norm")

    pos = float(f_i @ g_pos)
    negs = g_negs @ f_i
    p_pos, p_neg, W = _softmax_parts(pos, negs, tau)
    p_hat = _hardness(negs, tau)

    scale = (1.0 if spec.drops_scaling_factor else W) / tau
    d_anchor = -scale * (g_pos - p_hat @ g_negs)
    d_pos_key = -scale * f_i
    d_neg_keys = scale * p_hat[:, None] * f_i[None, :]
    return GradientReport(
        d_anchor=d_anchor,
        d_pos_key=d_pos_key,
        d_neg_keys=d_neg_keys,
        W=W,
        P_pos=p_pos,
        P_neg=p_neg,
        P_hat=p_hat,
    )


def finite_difference(loss_fn, point, cfg: FiniteDiffConfig | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    cfg = cfg or FiniteDiffConfig()
    x = np.array(point, dtype=np.float64).reshape(-1)
    h = cfg.step
    grad = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        up = float(loss_fn(x.copy()))
        x[k] = orig - h
        down = float(loss_fn(x.copy()))
        x[k] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NonFiniteLoss(f"loss is not finite when probing coordinate {k}")
        grad[k] = (up - down) / (2.0 * h)
    return grad


def gradients_agree(analytic, numeric, cfg: FiniteDiffConfig | None = None) -> bool:
    """``|analytic - numeric| <= abs_tol + rel_tol * |numeric|`` componentwise."""
    cfg = cfg or FiniteDiffConfig()
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return bool(np.all(np.abs(a - n) <= cfg.abs_tol + cfg.rel_tol * np.abs(n)))


def worst_violation(analytic, numeric, cfg: FiniteDiffConfig | None = None) -> float:
    """Largest ``|a - n| / (abs_tol + rel_tol |n|)``; agreement means <= 1."""
    cfg = cfg or FiniteDiffConfig()
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / (cfg.abs_tol + cfg.rel_tol * np.abs(n))))
