import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from contrast_lab.analysis import weight_entropy
from contrast_lab.core import LogitsRow, LossSpec, TemperatureConfig, Variant, make_unit_batch
from contrast_lab.gradients import hardness_weights, scaling_factor, softmax_probs
from contrast_lab.losses import batch_value, dcl_value, infonce_value
from contrast_lab.temperature import adaptive_temperature, alignment_loss, alignment_magnitude

sims = st.floats(-1.0, 1.0, allow_nan=False)
half_sims = st.floats(-0.5, 0.5, allow_nan=False)
taus = st.floats(0.05, 10.0, allow_nan=False)
neg_lists = st.lists(sims, min_size=1, max_size=64)
matrices = st.integers(1, 6).flatmap(
    lambda n: st.integers(2, 8).flatmap(
        lambda m: arrays(np.float64, (n, m), elements=st.floats(-10, 10, allow_nan=False)).filter(
            lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)
        )
    )
)


def naive_infonce(pos, negs, tau):
    e_pos = math.exp(pos / tau)
    return -math.log(e_pos / (e_pos + sum(math.exp(s / tau) for s in negs)))


@given(half_sims, st.lists(half_sims, min_size=1, max_size=32), half_sims, taus)
def test_infonce_shift_invariant(pos, negs, c, tau):
    base = LogitsRow(pos, negs)
    shifted = LogitsRow(pos + c, [s + c for s in negs])
    assert abs(infonce_value(base, tau) - infonce_value(shifted, tau)) <= 1e-12 * max(1.0, infonce_value(base, tau))
    spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=tau), reweight=True)
    a = batch_value([base], spec).mean_loss
    b = batch_value([shifted], spec).mean_loss
    assert abs(a - b) <= 1e-12 * max(1.0, a)


@given(sims, neg_lists, taus)
def test_macl_switches_off_is_infonce(pos, negs, tau):
    row = LogitsRow(pos, negs)
    spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=tau))
    assert batch_value([row], spec).mean_loss == infonce_value(row, tau)


@given(sims, neg_lists, taus)
def test_stable_matches_naive(pos, negs, tau):
    row = LogitsRow(pos, negs)
    assert abs(infonce_value(row, tau) - naive_infonce(pos, negs, tau)) <= 1e-10


@given(sims, neg_lists, taus)
def test_dcl_matches_brute_force(pos, negs, tau):
    brute = -pos / tau + math.log(sum(math.exp(s / tau) for s in negs))
    assert abs(dcl_value(LogitsRow(pos, negs), tau) - brute) <= 1e-12 * max(1.0, abs(brute))


@given(sims, neg_lists, taus)
def test_probability_invariants(pos, negs, tau):
    row = LogitsRow(pos, negs)
    p_pos, p_neg = softmax_probs(row, tau)
    W = scaling_factor(row, tau)
    p_hat = hardness_weights(row, tau)
    assert abs(p_pos + p_neg.sum() - 1.0) <= 1e-12
    assert abs(W - p_neg.sum()) <= 1e-12
    assert 0.0 < W < 1.0
    assert abs(p_hat.sum() - 1.0) <= 1e-12
    assert np.all(np.abs(p_hat - p_neg / W) <= 1e-12)
    reweighted = batch_value([row], LossSpec(Variant.MACL, TemperatureConfig(tau0=tau), reweight=True)).mean_loss
    assert abs(reweighted - infonce_value(row, tau) / W) <= 1e-12 * max(1.0, reweighted)


@given(sims, sims, taus)
def test_hardness_ratio_law(s_a, s_b, tau):
    p = hardness_weights(LogitsRow(0.0, [s_a, s_b]), tau)
    assert math.isclose(p[0] / p[1], math.exp((s_a - s_b) / tau), rel_tol=1e-12)


@given(matrices)
def test_make_unit_batch_idempotent(raw):
    once = make_unit_batch(raw)
    twice = make_unit_batch(once.data)
    assert np.all(np.abs(once.data - twice.data) <= 1e-12)
    G = once.data @ once.data.T
    assert np.all(np.abs(G) <= 1.0 + 1e-9)


@given(st.floats(0.01, 10), st.floats(0, 3), st.floats(-1, 1), st.floats(0.01, 0.99), sims, sims)
def test_adaptive_temperature_monotone(tau0, alpha, A0, floor, a, b):
    cfg = TemperatureConfig(tau0, alpha, A0, floor)
    lo, hi = sorted((a, b))
    t_lo, _ = adaptive_temperature(lo, cfg)
    t_hi, _ = adaptive_temperature(hi, cfg)
    assert t_lo <= t_hi
    assert t_lo >= floor * tau0 * (1 - 1e-15)


@given(sims, st.lists(sims, min_size=1, max_size=16), st.floats(0.01, 100), st.floats(1.0, 100.0))
def test_entropy_nondecreasing(pos, negs, tau, factor):
    row = LogitsRow(pos, negs)
    h1 = weight_entropy(row, tau)
    h2 = weight_entropy(row, tau * factor)
    assert h2 >= h1 - 1e-12
    assert 0.0 <= h1 <= math.log(len(negs)) + 1e-12


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_alignment_identity(n, m, seed):
    rng = np.random.default_rng(seed)
    f = make_unit_batch(rng.standard_normal((n, m)))
    g = make_unit_batch(rng.standard_normal((n, m)))
    est = alignment_magnitude(np.sum(f.data * g.data, axis=1))
    assert abs(est.A - (1 - alignment_loss(f, g) / 2)) <= 1e-12
    assert abs(est.A - (1 - est.align_loss / 2)) <= 1e-12
