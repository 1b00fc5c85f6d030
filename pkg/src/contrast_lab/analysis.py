"""Sweeps of the gradient scaling factor over temperature and negative count,
hardness-weight entropy, and CSV/JSON emission of the results."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EmptyGrid, InvalidConfig, LogitsRow, check_tau, validate_logits
from .gradients import _softmax_parts, dW_dtau, hardness_weights


@dataclass(frozen=True, eq=False)
class SweepResult:
    axis: np.ndarray
    W: np.ndarray
    closed_form: np.ndarray | None
    bound: float
    max_abs_gap_to_bound: float
    complement: np.ndarray  # 1 - W, computed directly as P_pos
    trend: str


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _trend(values: np.ndarray) -> str:
    if values.size < 2:
        return "constant"
    d = np.diff(values)
    if np.all(d == 0):
        return "constant"
    if np.all(d >= 0):
        return "increasing"
    if np.all(d <= 0):
        return "decreasing"
    return "mixed"


def _check_axis(grid, name) -> np.ndarray:
    axis = np.asarray(grid, dtype=np.float64).reshape(-1)
    if axis.size == 0:
        raise EmptyGrid(f"{name} grid is empty")
    if axis.size > 1 and not np.all(np.diff(axis) > 0):
        raise InvalidConfig(f"{name} grid must be strictly increasing")
    return axis


def is_symmetric_scenario(row: LogitsRow) -> bool:
    """Positive similarity exactly 1 and every negative exactly -1."""
    return row.pos == 1.0 and bool(np.all(row.negs == -1.0))


def symmetric_closed_form(tau, K) -> np.ndarray:
    """``K / (exp(2/tau) + K)``, the scaling factor when pos = 1 and all negatives are -1."""
    tau = np.asarray(tau, dtype=np.float64)
    with np.errstate(over="ignore"):
        return K / (np.exp(2.0 / tau) + K)


def sweep_tau(row: LogitsRow, tau_grid) -> SweepResult:
    """Scaling factor across temperatures; the large-temperature bound is K/(K+1)."""
    validate_logits(row)
    axis = _check_axis(tau_grid, "tau")
    for t in axis:
        check_tau(t)
    parts = [_softmax_parts(row.pos, row.negs, t) for t in axis]
    W = np.array([p[2] for p in parts])
    comp = np.array([p[0] for p in parts])
    K = row.K
    bound = K / (K + 1.0)
    closed = symmetric_closed_form(axis, K) if is_symmetric_scenario(row) else None
    return SweepResult(
        axis=axis,
        W=W,
        closed_form=closed,
        bound=bound,
        max_abs_gap_to_bound=float(abs(W[-1] - bound)),
        complement=comp,
        trend=_trend(W),
    )


def sweep_K(pos: float, neg: float, tau: float, K_grid) -> SweepResult:
    """Scaling factor for rows holding K copies of one negative similarity.

    The upper bound is 1; ``max_abs_gap_to_bound`` is ``1 - W`` at the largest K.
    """
    tau = check_tau(tau)
    axis = _check_axis(K_grid, "K")
    if axis[0] < 1 or np.any(axis != np.round(axis)):
        raise InvalidConfig("K grid must hold integers >= 1")
    W = np.empty(axis.size)
    comp = np.empty(axis.size)
    for i, K in enumerate(axis.astype(np.int64)):
        row = LogitsRow(pos, np.full(int(K), neg))
        validate_logits(row)
        p_pos, _, w = _softmax_parts(row.pos, row.negs, tau)
        W[i] = w
        comp[i] = p_pos
    closed = None
    if pos == 1.0 and neg == -1.0:
        closed = axis * math.exp(-2.0 / tau) / (1.0 + axis * math.exp(-2.0 / tau))
    return SweepResult(
        axis=axis,
        W=W,
        closed_form=closed,
        bound=1.0,
        max_abs_gap_to_bound=float(comp[-1]),
        complement=comp,
        trend=_trend(W),
    )


def weight_entropy(row: LogitsRow, tau: float) -> float:
    """Shannon entropy (nats) of the hardness weights; lies in [0, ln K]."""
    p = hardness_weights(row, tau)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def entropy_curve(row: LogitsRow, tau_grid) -> tuple[np.ndarray, np.ndarray]:
    axis = _check_axis(tau_grid, "tau")
    return axis, np.array([weight_entropy(row, t) for t in axis])


def penalty_ratio(s_a: float, s_b: float, tau: float) -> float:
    """Ratio of the hardness weights of two negatives: ``exp((s_a - s_b)/tau)``."""
    tau = check_tau(tau)
    return math.exp((s_a - s_b) / tau)


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def write_csv(path, header: Sequence[str], columns: Sequence[Sequence | None]) -> None:
    """Write columns as CSV with 17 significant digits and LF endings.

    A ``None`` column is written as empty cells.
    """
    n = max(len(c) for c in columns if c is not None)
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(_fmt(c[i]) if c is not None else "" for c in columns))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def write_sweep_csv(result: SweepResult, path) -> None:
    write_csv(
        path,
        ("axis", "W", "closed_form", "bound"),
        (result.axis, result.W, result.closed_form, [result.bound] * result.axis.size),
    )


def write_entropy_csv(axis, entropy, path) -> None:
    write_csv(path, ("axis", "entropy"), (axis, entropy))


@dataclass(frozen=True)
class PropositionConfig:
    seed: int = 0
    n_rows: int = 50
    K_choices: tuple = (1, 4, 64)
    probe_taus: tuple = (0.05, 0.1, 0.5, 1.0, 2.0, 10.0)
    tau_limit: float = 1e4
    limit_tol: float = 1e-3
    K_grid: tuple = tuple(2**k for k in range(21))
    n_K_rows: int = 20


def _direct_sign_terms(row: LogitsRow, tau: float) -> np.ndarray:
    # unshifted exponentials; safe because |s|/tau <= 20 on the probes
    return (row.pos - row.negs) * np.exp(row.negs / tau)


def proposition_report(config: PropositionConfig | None = None) -> list[dict]:
    """Check both scaling-factor limits and the temperature-derivative sign rule
    on random rows; one ``{assertion, status, worst_gap}`` entry per check."""
    cfg = config or PropositionConfig()
    if min(cfg.probe_taus) < 0.05:
        raise InvalidConfig("probe temperatures below 0.05 overflow the direct sign check")
    rng = np.random.default_rng(cfg.seed)
    report = []

    # W -> 1 as K grows: 1 - W strictly decreasing along the K grid
    ok, worst = True, 0.0
    scenarios = [(1.0, -1.0, 1.0)]  # slowest convergence
    for _ in range(cfg.n_K_rows):
        pos, neg = rng.uniform(-1.0, 1.0, size=2)
        scenarios.append((float(pos), float(neg), float(rng.choice(cfg.probe_taus))))
    for pos, neg, tau in scenarios:
        res = sweep_K(pos, neg, tau, cfg.K_grid)
        ok &= bool(np.all(np.diff(res.complement) < 0))
        worst = max(worst, res.max_abs_gap_to_bound)
    report.append({"assertion": "W increases toward 1 as K grows", "status": "pass" if ok else "fail", "worst_gap": worst})

    rows = []
    for i in range(cfg.n_rows):
        K = int(cfg.K_choices[i % len(cfg.K_choices)])
        sims = rng.uniform(-1.0, 1.0, size=K + 1)
        rows.append(LogitsRow(sims[0], sims[1:]))

    gaps = [sweep_tau(r, [cfg.tau_limit]).max_abs_gap_to_bound for r in rows]
    worst = float(max(gaps))
    report.append(
        {
            "assertion": f"|W(tau={cfg.tau_limit:g}) - K/(K+1)| < {cfg.limit_tol:g}",
            "status": "pass" if worst < cfg.limit_tol else "fail",
            "worst_gap": worst,
        }
    )

    ok, n_mismatch = True, 0
    for r in rows:
        for tau in cfg.probe_taus:
            d = dW_dtau(r, tau)
            terms = _direct_sign_terms(r, tau)
            ref = terms.sum()
            # a reference sum within rounding of zero carries no sign
            if np.sign(d) != np.sign(ref) and abs(ref) > 1e-12 * np.abs(terms).sum():
                ok = False
                n_mismatch += 1
    report.append(
        {
            "assertion": "sign(dW/dtau) == sign(sum_j (s_pos - s_j) exp(s_j/tau))",
            "status": "pass" if ok else "fail",
            "worst_gap": float(n_mismatch),
        }
    )

    axis = log_grid(0.01, 1e4, 33)
    worst = 0.0
    for K in cfg.K_choices:
        res = sweep_tau(LogitsRow(1.0, -np.ones(K)), axis)
        worst = max(worst, float(np.max(np.abs(res.W - res.closed_form))))
    report.append(
        {
            "assertion": "symmetric scenario matches K/(exp(2/tau)+K) to 1e-12",
            "status": "pass" if worst <= 1e-12 else "fail",
            "worst_gap": worst,
        }
    )
    return report


def write_report_json(report, path) -> None:
    Path(path).write_bytes((json.dumps(report, indent=2, sort_keys=True) + "\n").encode("ascii"))


def hardness_entropy_monotone(row: LogitsRow, tau_grid) -> bool:
    """Entropy of the hardness weights is nondecreasing along ``tau_grid``."""
    _, h = entropy_curve(row, tau_grid)
    return bool(np.all(np.diff(h) >= -1e-12))

