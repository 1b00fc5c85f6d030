import math

import numpy as np
import pytest

from contrast_lab.core import (
    BatchTooSmall,
    DimensionMismatch,
    EmptyBatch,
    LogitsRow,
    LossSpec,
    NonPositiveTau,
    TemperatureConfig,
    UnitEmbeddingBatch,
    Variant,
    make_unit_batch,
)
from contrast_lab.gradients import scaling_factor
from contrast_lab.losses import (
    anchor_loss,
    batch_value,
    cosine_logits,
    dcl_value,
    inbatch_contrast,
    inbatch_partner,
    inbatch_rows,
    infonce_value,
    macl_batch_value,
)

# 50-digit reference evaluations, frozen
INFONCE_08_02 = 0.26328246733803117
V_08_02 = 4.3201169227365477
MACL_08_02 = 1.1374110426068609
INBATCH_ORTHO = 0.55144471393205109  # -log(e / (e + 2))


def _b(rows):
    return UnitEmbeddingBatch(np.array(rows, dtype=float))


def test_cosine_logits_shared_pool():
    rows = cosine_logits(_b([[1, 0]]), _b([[1, 0]]), _b([[0, 1]]))
    assert rows[0].pos == 1.0 and list(rows[0].negs) == [0.0]
    rows = cosine_logits(_b([[1, 0]]), _b([[0, 1]]), _b([[-1, 0]]))
    assert rows[0].pos == 0.0 and list(rows[0].negs) == [-1.0]


def test_cosine_logits_per_anchor_negatives():
    anchors = _b([[1, 0], [0, 1]])
    rows = cosine_logits(anchors, anchors, [_b([[0, 1]]), _b([[1, 0], [0, -1]])])
    assert list(rows[0].negs) == [0.0]
    assert list(rows[1].negs) == [0.0, -1.0]


def test_cosine_logits_dimension_errors():
    with pytest.raises(DimensionMismatch):
        cosine_logits(_b([[1, 0]]), _b([[1, 0, 0]]), _b([[0, 1, 0]]))
    with pytest.raises(DimensionMismatch):
        cosine_logits(_b([[1, 0]]), _b([[1, 0]]), _b([[0, 1, 0]]))
    with pytest.raises(DimensionMismatch):
        cosine_logits(_b([[1, 0]]), _b([[1, 0], [0, 1]]), _b([[0, 1]]))
    with pytest.raises(DimensionMismatch):
        cosine_logits(_b([[1, 0]]), _b([[1, 0]]), [_b([[0, 1]]), _b([[0, 1]])])


def test_infonce_examples():
    assert infonce_value(LogitsRow(0.8, [0.2]), 0.5) == pytest.approx(INFONCE_08_02, abs=1e-12)
    for K in (1, 4, 64):
        assert infonce_value(LogitsRow(0.3, [0.3] * K), 0.7) == pytest.approx(math.log(K + 1), abs=1e-12)
    with pytest.raises(NonPositiveTau):
        infonce_value(LogitsRow(0.8, [0.2]), 0.0)


def test_infonce_positive_even_when_tiny():
    v = infonce_value(LogitsRow(1.0, [-1.0]), 0.01)
    assert v > 0
    assert v == pytest.approx(math.exp(-200), rel=1e-12)


def test_dcl_examples():
    assert dcl_value(LogitsRow(0.8, [0.2]), 0.5) == pytest.approx(-1.2, abs=1e-12)
    assert dcl_value(LogitsRow(0.4, [0.4]), 0.3) == 0.0
    assert dcl_value(LogitsRow(0.4, [0.4] * 5), 0.3) == pytest.approx(math.log(5), abs=1e-12)
    with pytest.raises(NonPositiveTau):
        dcl_value(LogitsRow(0.8, [0.2]), -1.0)


def test_macl_reweighted_example():
    spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=0.5), reweight=True)
    res = macl_batch_value([LogitsRow(0.8, [0.2])], spec)
    assert res.V[0] == pytest.approx(V_08_02, abs=1e-10)
    assert res.mean_loss == pytest.approx(MACL_08_02, abs=1e-10)
    assert res.tau_used == 0.5 and not res.clamped


def test_macl_plain_equals_infonce(rng):
    spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=0.2))
    rows = [LogitsRow(rng.uniform(-1, 1), rng.uniform(-1, 1, 4)) for _ in range(10)]
    res = macl_batch_value(rows, spec)
    expected = [infonce_value(r, 0.2) for r in rows]
    assert np.array_equal(res.per_anchor_loss, expected)
    assert np.all(res.V == 1.0)


def test_macl_adaptive_uses_batch_mean():
    spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=0.1, alpha=0.5, A0=0.0), adaptive=True)
    res = macl_batch_value([LogitsRow(0.9, [0.1]), LogitsRow(0.7, [0.3])], spec)
    assert res.A_batch == pytest.approx(0.8, abs=1e-15)
    assert res.tau_used == pytest.approx(0.14, abs=1e-15)
    assert res.per_anchor_loss[0] == pytest.approx(infonce_value(LogitsRow(0.9, [0.1]), res.tau_used), abs=1e-15)


def test_macl_clamp_reported():
    spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=0.05, alpha=2.0, A0=0.8), adaptive=True)
    res = macl_batch_value([LogitsRow(-0.9, [0.0])], spec)
    assert res.clamped and res.tau_used == pytest.approx(0.05 * 0.05)


def test_macl_empty_batch():
    with pytest.raises(EmptyBatch):
        macl_batch_value([], LossSpec(Variant.MACL))
    with pytest.raises(EmptyBatch):
        batch_value([], LossSpec(Variant.DCL))


def test_mean_is_mean_of_per_anchor(rng):
    rows = [LogitsRow(rng.uniform(-1, 1), rng.uniform(-1, 1, 4)) for _ in range(7)]
    for spec in (LossSpec(Variant.INFONCE), LossSpec(Variant.DCL),
                 LossSpec(Variant.MACL, adaptive=True, reweight=True)):
        res = batch_value(rows, spec)
        assert res.mean_loss == pytest.approx(res.per_anchor_loss.sum() / 7, abs=1e-12)
        assert res.tau_used > 0


def test_reweighted_value_is_infonce_over_W(rng):
    for _ in range(20):
        row = LogitsRow(rng.uniform(-1, 1), rng.uniform(-1, 1, 4))
        spec = LossSpec(Variant.MACL, TemperatureConfig(tau0=0.3), reweight=True)
        got = batch_value([row], spec).mean_loss
        want = infonce_value(row, 0.3) / scaling_factor(row, 0.3)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_inbatch_partner():
    assert list(inbatch_partner(3)) == [3, 4, 5, 0, 1, 2]


def test_inbatch_orthonormal_example():
    views = _b([[1, 0], [0, 1]])
    rows = inbatch_rows(views, views)
    assert len(rows) == 4
    for r in rows:
        assert r.pos == 1.0 and list(r.negs) == [0.0, 0.0]
    res = inbatch_contrast(views, views, LossSpec(Variant.INFONCE, TemperatureConfig(tau0=1.0)))
    assert res.mean_loss == pytest.approx(INBATCH_ORTHO, abs=1e-12)


def test_inbatch_too_small_and_mismatch():
    one = _b([[1, 0]])
    with pytest.raises(BatchTooSmall):
        inbatch_contrast(one, one, LossSpec())
    with pytest.raises(DimensionMismatch):
        inbatch_contrast(_b([[1, 0], [0, 1]]), _b([[1, 0, 0], [0, 1, 0]]), LossSpec())


def test_inbatch_swap_symmetry(rng):
    v1 = make_unit_batch(rng.standard_normal((5, 3)))
    v2 = make_unit_batch(rng.standard_normal((5, 3)))
    for spec in (LossSpec(Variant.NTXENT_INBATCH), LossSpec(Variant.MACL, adaptive=True, reweight=True)):
        a = inbatch_contrast(v1, v2, spec).mean_loss
        b = inbatch_contrast(v2, v1, spec).mean_loss
        assert a == pytest.approx(b, abs=1e-12)


def test_inbatch_A_uses_all_rows(rng):
    v1 = make_unit_batch(rng.standard_normal((4, 3)))
    v2 = make_unit_batch(rng.standard_normal((4, 3)))
    res = inbatch_contrast(v1, v2, LossSpec(Variant.MACL, adaptive=True))
    assert res.A_batch == pytest.approx(np.mean(np.sum(v1.data * v2.data, axis=1)), abs=1e-15)


def test_anchor_loss_matches_row_values(rng):
    f = make_unit_batch(rng.standard_normal((1, 4))).data[0]
    g = make_unit_batch(rng.standard_normal((3, 4))).data
    row = LogitsRow(f @ g[0], g[1:] @ f)
    assert anchor_loss(f, g[0], g[1:], LossSpec(), 0.2) == pytest.approx(infonce_value(row, 0.2), abs=1e-14)
    assert anchor_loss(f, g[0], g[1:], LossSpec(Variant.DCL), 0.2) == pytest.approx(dcl_value(row, 0.2), abs=1e-14)
    rw = LossSpec(Variant.MACL, reweight=True)
    assert anchor_loss(f, g[0], g[1:], rw, 0.2) == pytest.approx(
        infonce_value(row, 0.2) / scaling_factor(row, 0.2), rel=1e-12)
    assert anchor_loss(f, g[0], g[1:], rw, 0.2, V=2.0) == pytest.approx(2 * infonce_value(row, 0.2), rel=1e-12)
