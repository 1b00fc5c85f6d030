"""Verification suites: gradient oracle agreement, exact identities, monotonicity
laws and an end-to-end trainer gradient check.

Each suite returns a list of ``{"check", "status", "worst", "tol", "n"}`` dicts so
callers (the CLI, the acceptance tests) can report and assert on them uniformly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .analysis import entropy_curve, log_grid, penalty_ratio
from .core import LogitsRow, LossSpec, TemperatureConfig, UnitEmbeddingBatch, Variant, make_unit_batch
from .gradients import (
    FiniteDiffConfig,
    analytic_gradients,
    finite_difference,
    hardness_weights,
    scaling_factor,
    softmax_probs,
    worst_violation,
)
from .losses import anchor_loss, batch_value, infonce_value
from .temperature import adaptive_temperature, alignment_loss, alignment_magnitude
from .trainer import encoder_forward, inbatch_step_grads, init_encoder

ORACLE_DIMS = (2, 8, 64)
ORACLE_KS = (1, 4, 64)
ORACLE_TAUS = (0.07, 0.1, 0.5, 1.0)


def oracle_specs(tau0: float) -> list[LossSpec]:
    """Every loss variant, with MACL in all four adaptive/reweight combinations."""
    temp = TemperatureConfig(tau0=tau0)
    specs = [LossSpec(v, temp) for v in (Variant.INFONCE, Variant.NTXENT_INBATCH, Variant.DCL)]
    for adaptive, reweight in itertools.product((False, True), repeat=2):
        specs.append(LossSpec(Variant.MACL, temp, adaptive=adaptive, reweight=reweight))
    return specs


def _entry(check, ok, worst, tol, n) -> dict:
    return {"check": check, "status": "pass" if ok else "fail", "worst": float(worst), "tol": tol, "n": int(n)}


def _unit(rng, rows, m) -> np.ndarray:
    return make_unit_batch(rng.standard_normal((rows, m))).data


@dataclass(frozen=True)
class OracleCase:
    m: int
    K: int
    tau: float
    spec: LossSpec
    worst: float  # worst_violation ratio; <= 1 passes


def gradient_oracle_cases(seed: int = 0, fd: FiniteDiffConfig | None = None) -> list[OracleCase]:
    """Analytic vs central-difference gradients over the full (m, K, tau, spec) grid.

    The point is one anchor, one positive key and K negative keys drawn
    uniformly on the sphere. For adaptive MACL the temperature is derived from
    the anchor's own positive similarity and then held fixed, like ``V``.
    """
    fd = fd or FiniteDiffConfig()
    rng = np.random.default_rng(seed)
    cases = []
    for m, K, tau0 in itertools.product(ORACLE_DIMS, ORACLE_KS, ORACLE_TAUS):
        for spec in oracle_specs(tau0):
            f = _unit(rng, 1, m)[0]
            g_pos = _unit(rng, 1, m)[0]
            g_negs = _unit(rng, K, m)
            pos = float(f @ g_pos)
            tau = adaptive_temperature(pos, spec.temperature)[0] if spec.uses_adaptive else tau0
            rep = analytic_gradients(f, g_pos, g_negs, spec, tau)
            V = 1.0 / rep.W if spec.uses_reweight else None

            def loss(x, m=m, K=K, spec=spec, tau=tau, V=V):
                return anchor_loss(x[:m], x[m : 2 * m], x[2 * m :].reshape(K, m), spec, tau, V)

            point = np.concatenate([f, g_pos, g_negs.ravel()])
            numeric = finite_difference(loss, point, fd)
            analytic = np.concatenate([rep.d_anchor, rep.d_pos_key, rep.d_neg_keys.ravel()])
            cases.append(OracleCase(m, K, tau0, spec, worst_violation(analytic, numeric, fd)))
    return cases


def gradient_oracle_suite(seed: int = 0, fd: FiniteDiffConfig | None = None) -> list[dict]:
    fd = fd or FiniteDiffConfig()
    cases = gradient_oracle_cases(seed, fd)
    worst = max(c.worst for c in cases)
    return [_entry("analytic gradients match central differences", worst <= 1.0, worst, 1.0, len(cases))]


def _random_rows(rng, n, K_choices=ORACLE_KS) -> list[LogitsRow]:
    rows = []
    for i in range(n):
        K = int(K_choices[i % len(K_choices)])
        s = rng.uniform(-1.0, 1.0, size=K + 1)
        rows.append(LogitsRow(s[0], s[1:]))
    return rows


def identity_suite(seed: int = 0, n: int = 1000, tol: float = 1e-12) -> list[dict]:
    """Exact algebraic identities of the loss family, each over ``n`` random draws.

    Differences are measured as ``|a - b| / max(1, |b|)``.
    """
    rng = np.random.default_rng(seed)

    def gap(a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))

    out = []

    worst = 0.0
    for _ in range(n):
        m = int(rng.choice(ORACLE_DIMS))
        N = int(rng.integers(1, 9))
        f = _unit(rng, N, m)
        g = _unit(rng, N, m)
        est = alignment_magnitude(np.einsum("ij,ij->i", f, g))
        worst = max(worst, gap(est.A, 1.0 - alignment_loss(UnitEmbeddingBatch(f), UnitEmbeddingBatch(g)) / 2.0))
    out.append(_entry("A = 1 - L_align/2", worst <= tol, worst, tol, n))

    rows = _random_rows(rng, n)
    taus = rng.choice(ORACLE_TAUS, size=n)
    w_sum = w_ratio = 0.0
    for r, tau in zip(rows, taus):
        p_hat = hardness_weights(r, tau)
        _, p_neg = softmax_probs(r, tau)
        W = scaling_factor(r, tau)
        w_sum = max(w_sum, abs(p_hat.sum() - 1.0))
        w_ratio = max(w_ratio, gap(p_hat, p_neg / W))
    out.append(_entry("hardness weights sum to 1", w_sum <= tol, w_sum, tol, n))
    out.append(_entry("hardness weight = P_neg / W", w_ratio <= tol, w_ratio, tol, n))

    rw = dcl = 0.0
    for i in range(n):
        m = int(ORACLE_DIMS[i % 3])
        K = int(ORACLE_KS[(i // 3) % 3])
        tau = float(ORACLE_TAUS[i % 4])
        f = _unit(rng, 1, m)[0]
        g_pos = _unit(rng, 1, m)[0]
        g_negs = _unit(rng, K, m)
        temp = TemperatureConfig(tau0=tau)
        base = analytic_gradients(f, g_pos, g_negs, LossSpec(Variant.INFONCE, temp), tau)
        macl = analytic_gradients(f, g_pos, g_negs, LossSpec(Variant.MACL, temp, reweight=True), tau)
        d = analytic_gradients(f, g_pos, g_negs, LossSpec(Variant.DCL, temp), tau)
        rw = max(rw, gap(macl.d_anchor, base.d_anchor / base.W))
        dcl = max(dcl, gap(d.d_anchor, macl.d_anchor))
    out.append(_entry("reweighted MACL anchor gradient = InfoNCE anchor gradient / W", rw <= tol, rw, tol, n))
    out.append(_entry("DCL anchor gradient = reweighted MACL anchor gradient at fixed tau", dcl <= tol, dcl, tol, n))

    worst = 0.0
    for r, tau in zip(rows, taus):
        spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=float(tau)))
        worst = max(worst, gap(batch_value([r], spec).mean_loss, infonce_value(r, tau)))
    out.append(_entry("MACL with adaptive and reweight off equals InfoNCE", worst <= tol, worst, tol, n))

    worst = 0.0
    for _ in range(n):
        tau0 = float(np.exp(rng.uniform(math.log(0.01), math.log(10.0))))
        cfg = TemperatureConfig(tau0=tau0, alpha=0.0, A0=float(rng.uniform(-1, 1)))
        worst = max(worst, gap(adaptive_temperature(float(rng.uniform(-1, 1)), cfg)[0], tau0))
    out.append(_entry("alpha = 0 gives tau_a = tau0", worst <= tol, worst, tol, n))
    return out


def _sorted_pairs(rng, n) -> list[tuple[float, float]]:
    pairs = []
    while len(pairs) < n:
        s = rng.uniform(-1.0, 1.0, size=2)
        if s[0] != s[1]:
            pairs.append((float(s.max()), float(s.min())))
    return pairs


def monotonicity_suite(seed: int = 0, n: int = 100) -> list[dict]:
    """Temperature is nondecreasing in alignment; hardness ratios flatten and
    hardness entropy grows as the temperature rises."""
    rng = np.random.default_rng(seed)
    out = []

    worst = 0.0
    for _ in range(n):
        cfg = TemperatureConfig(
            tau0=float(np.exp(rng.uniform(math.log(0.01), math.log(10.0)))),
            alpha=float(rng.uniform(0.0, 3.0)),
            A0=float(rng.uniform(-1.0, 1.0)),
            tau_floor_ratio=float(rng.uniform(0.01, 0.5)),
        )
        A = np.sort(rng.uniform(-1.0, 1.0, size=64))
        taus = np.array([adaptive_temperature(a, cfg)[0] for a in A])
        worst = max(worst, float(max(0.0, -np.diff(taus).min())))
    out.append(_entry("tau_a nondecreasing in A", worst == 0.0, worst, 0.0, n))

    probe = (0.05, 0.1, 0.5, 1.0, 10.0, 1e3)
    strict = True
    for s_a, s_b in _sorted_pairs(rng, n):
        ratios = np.array([penalty_ratio(s_a, s_b, t) for t in probe])
        strict &= bool(np.all(np.diff(ratios) < 0) and np.all(ratios > 1.0))
    out.append(_entry("hardness ratio strictly decreasing in tau", strict, 0.0 if strict else 1.0, 0.0, n))

    grid = log_grid(0.01, 1e4, 33)
    worst = 0.0
    for r in _random_rows(rng, n):
        _, h = entropy_curve(r, grid)
        worst = max(worst, float(max(0.0, -np.diff(h).min())))
    out.append(_entry("hardness entropy nondecreasing in tau", worst <= 1e-12, worst, 1e-12, n))
    return out


def ratio_limit_check(seed: int = 0, n: int = 100, tau: float = 1e3, tol: float = 1e-3) -> list[dict]:
    """Largest ``ratio - 1`` at a large temperature over random similarity pairs.

    The ratio is ``exp((s_a - s_b)/tau)``, so the gap is about ``(s_a - s_b)/tau``
    and depends on how far apart the sampled pair is.
    """
    rng = np.random.default_rng(seed)
    pairs = _sorted_pairs(rng, n)
    gap = max(penalty_ratio(s_a, s_b, tau) - 1.0 for s_a, s_b in pairs)
    spread = max(s_a - s_b for s_a, s_b in pairs)
    entry = _entry(f"hardness ratio within {tol:g} of 1 at tau = {tau:g}", gap < tol, gap, tol, n)
    entry["max_pair_gap"] = spread
    return [entry]


def pipeline_specs(tau0: float = 0.5) -> list[LossSpec]:
    return oracle_specs(tau0)


def pipeline_gradient_cases(seed: int = 0, fd: FiniteDiffConfig | None = None,
                            d_in: int = 4, hidden: int | None = 5, m: int = 3, N: int = 4,
                            tau0: float = 0.5) -> list[tuple[LossSpec, float]]:
    """Parameter gradients of the full in-batch pipeline against central differences.

    Returns ``(spec, worst_violation)`` per spec. The temperature and the
    reweighting factors are pinned at their values at the unperturbed point.
    """
    fd = fd or FiniteDiffConfig(rel_tol=1e-4)
    rng = np.random.default_rng(seed)
    params = init_encoder(d_in, m, hidden, rng)
    va = rng.standard_normal((N, d_in))
    vb = va + 0.3 * rng.standard_normal((N, d_in))
    out = []
    for spec in pipeline_specs(tau0):
        result, grads = inbatch_step_grads(params, va, vb, spec)
        tau, V = result.tau_used, result.V if spec.uses_reweight else None

        def loss(vec, spec=spec, tau=tau, V=V):
            p = params.with_flat(vec)
            return inbatch_step_grads(p, va, vb, spec, tau_fixed=tau, V_fixed=V)[0].mean_loss

        numeric = finite_difference(loss, params.flat(), fd)
        out.append((spec, worst_violation(grads.flat(), numeric, fd)))
    return out


def pipeline_gradient_suite(seed: int = 0, fd: FiniteDiffConfig | None = None) -> list[dict]:
    cases = pipeline_gradient_cases(seed, fd)
    worst = max(w for _, w in cases)
    return [_entry("end-to-end parameter gradients match central differences", worst <= 1.0, worst, 1.0, len(cases))]


def degeneracy_suite(seed: int = 0, n: int = 200, tol: float = 1e-12) -> list[dict]:
    """MACL with both switches off, or with alpha = 0, reduces to InfoNCE."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in _random_rows(rng, n):
        tau0 = float(rng.choice(ORACLE_TAUS))
        base = infonce_value(r, tau0)
        plain = batch_value([r], LossSpec(Variant.MACL, TemperatureConfig(tau0=tau0))).mean_loss
        frozen = batch_value([r], LossSpec(Variant.MACL, TemperatureConfig(tau0=tau0, alpha=0.0), adaptive=True))
        worst = max(worst, abs(plain - base), abs(frozen.mean_loss - base), abs(frozen.tau_used - tau0))
    return [_entry("MACL degenerates to InfoNCE", worst <= tol, worst, tol, n)]


def encoder_identity_check() -> list[dict]:
    """A square identity layer maps unit rows to themselves."""
    from .trainer import EncoderParams

    x = make_unit_batch(np.random.default_rng(0).standard_normal((5, 4))).data
    emb, _ = encoder_forward(EncoderParams([(np.eye(4), np.zeros(4))]), x)
    worst = float(np.max(np.abs(emb.data - x)))
    return [_entry("identity encoder preserves unit rows", worst <= 1e-15, worst, 1e-15, 5)]
