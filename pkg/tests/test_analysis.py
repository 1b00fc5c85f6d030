import json
import math

import numpy as np
import pytest

from contrast_lab.analysis import (
    PropositionConfig,
    entropy_curve,
    hardness_entropy_monotone,
    log_grid,
    penalty_ratio,
    proposition_report,
    sweep_K,
    sweep_tau,
    symmetric_closed_form,
    weight_entropy,
    write_csv,
    write_entropy_csv,
    write_report_json,
    write_sweep_csv,
)
from contrast_lab.core import EmptyGrid, InvalidConfig, LogitsRow, NonPositiveTau

# 50-digit reference evaluations of K / (exp(2/tau) + K), K = 4, frozen
SYM_K4 = {0.2: 1.8156674657977181e-4, 1.0: 0.35121435571606070, 10.0: 0.76607765868064405,
          1e4: 0.79996799807999147}
W_K_1E6 = 0.99196204826989942  # 1e6 / (1e6 + e^9)


def test_sweep_tau_symmetric_scenario():
    res = sweep_tau(LogitsRow(1.0, [-1.0] * 4), [0.2, 1.0, 10.0, 1e4])
    for tau, w in zip(res.axis, res.W):
        assert w == pytest.approx(SYM_K4[tau], rel=1e-12)
    np.testing.assert_allclose(res.W, res.closed_form, rtol=1e-12, atol=0)
    assert res.bound == 0.8
    assert res.max_abs_gap_to_bound < 1e-3
    assert res.trend == "increasing"


def test_sweep_tau_uniform_row_is_flat():
    res = sweep_tau(LogitsRow(0.3, [0.3] * 5), log_grid(0.01, 100, 9))
    np.testing.assert_allclose(res.W, 5 / 6, atol=1e-15)
    assert res.closed_form is None
    assert res.max_abs_gap_to_bound == pytest.approx(0.0, abs=1e-15)


def test_sweep_tau_errors():
    with pytest.raises(EmptyGrid):
        sweep_tau(LogitsRow(1.0, [-1.0]), [])
    with pytest.raises(NonPositiveTau):
        sweep_tau(LogitsRow(1.0, [-1.0]), [-1.0, 1.0])
    with pytest.raises(InvalidConfig):
        sweep_tau(LogitsRow(1.0, [-1.0]), [1.0, 0.5])


def test_sweep_K_examples():
    res = sweep_K(0.9, 0.0, 0.1, [1, 10, 10**6])
    assert res.W[-1] == pytest.approx(W_K_1E6, abs=1e-12)
    assert res.bound == 1.0
    assert res.max_abs_gap_to_bound == pytest.approx(1 - W_K_1E6, rel=1e-10)
    res = sweep_K(1.0, -1.0, 1.0, [1, 4])
    assert res.W[0] == pytest.approx(1 / (math.e**2 + 1), abs=1e-15)
    assert res.W[1] == pytest.approx(SYM_K4[1.0], abs=1e-15)
    np.testing.assert_allclose(res.W, res.closed_form, rtol=1e-12)


def test_sweep_K_strictly_increasing(rng):
    grid = [2**k for k in range(21)]
    for _ in range(10):
        pos, neg = rng.uniform(-1, 1, 2)
        res = sweep_K(pos, neg, float(rng.choice([0.05, 0.5, 5.0])), grid)
        assert np.all(np.diff(res.complement) < 0)
        assert res.trend == "increasing"


def test_sweep_K_errors():
    with pytest.raises(EmptyGrid):
        sweep_K(0.9, 0.0, 0.1, [])
    with pytest.raises(NonPositiveTau):
        sweep_K(0.9, 0.0, 0.0, [1])
    with pytest.raises(InvalidConfig):
        sweep_K(0.9, 0.0, 0.1, [0, 1])
    with pytest.raises(InvalidConfig):
        sweep_K(0.9, 0.0, 0.1, [1.5, 2])


def test_symmetric_closed_form_no_overflow():
    assert symmetric_closed_form(1e-4, 4) == 0.0


def test_weight_entropy_examples():
    assert weight_entropy(LogitsRow(0.0, [0.3, 0.3]), 0.5) == pytest.approx(math.log(2), abs=1e-9)
    assert weight_entropy(LogitsRow(0.0, [0.3] * 7), 0.05) == pytest.approx(math.log(7), abs=1e-12)
    assert weight_entropy(LogitsRow(0.0, [0.3]), 0.5) == 0.0
    row = LogitsRow(0.0, [0.4, 0.2])
    assert weight_entropy(row, 1.0) > weight_entropy(row, 0.1)


def test_entropy_curve_monotone(rng):
    grid = log_grid(0.01, 1e4, 33)
    for _ in range(20):
        row = LogitsRow(0.0, rng.uniform(-1, 1, 8))
        axis, h = entropy_curve(row, grid)
        assert np.array_equal(axis, grid)
        assert np.all(h >= 0) and np.all(h <= math.log(8) + 1e-12)
        assert hardness_entropy_monotone(row, grid)


def test_penalty_ratio_examples():
    assert penalty_ratio(0.3, 0.3, 0.1) == 1.0
    assert penalty_ratio(0.4, 0.2, 0.1) == pytest.approx(7.3890560989306502, abs=1e-6)
    assert penalty_ratio(0.4, 0.2, 10.0) == pytest.approx(1.0202013400267558, abs=1e-6)
    with pytest.raises(NonPositiveTau):
        penalty_ratio(0.4, 0.2, 0.0)


def test_proposition_report_default_passes():
    report = proposition_report()
    assert len(report) == 4
    for entry in report:
        assert set(entry) == {"assertion", "status", "worst_gap"}
        assert entry["status"] == "pass", entry


def test_proposition_report_rejects_overflowing_probes():
    with pytest.raises(InvalidConfig):
        proposition_report(PropositionConfig(probe_taus=(0.01, 1.0)))


def test_log_grid_endpoints():
    g = log_grid(0.01, 1e4, 33)
    assert g.size == 33 and g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(1e4)
    assert np.all(np.diff(g) > 0)


def test_sweep_csv_format(tmp_path):
    res = sweep_tau(LogitsRow(1.0, [-1.0] * 4), [1.0, 10.0])
    write_sweep_csv(res, tmp_path / "s.csv")
    blob = (tmp_path / "s.csv").read_bytes()
    assert b"\r" not in blob and blob.endswith(b"\n")
    lines = blob.decode().splitlines()
    assert lines[0] == "axis,W,closed_form,bound"
    fields = lines[1].split(",")
    assert float(fields[1]) == res.W[0]  # 17 significant digits round-trip exactly
    assert fields[3] == "0.80000000000000004"


def test_csv_empty_column_and_determinism(tmp_path):
    res = sweep_K(0.9, 0.0, 0.1, [1, 2, 4])
    write_sweep_csv(res, tmp_path / "a.csv")
    write_sweep_csv(sweep_K(0.9, 0.0, 0.1, [1, 2, 4]), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[1].split(",")[2] == ""
    write_entropy_csv([1.0], [0.5], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "axis,entropy\n1,0.5\n"
    write_csv(tmp_path / "c.csv", ("x",), ([0.1],))
    assert (tmp_path / "c.csv").read_text() == "x\n0.10000000000000001\n"


def test_report_json_roundtrip(tmp_path):
    report = proposition_report(PropositionConfig(n_rows=6, n_K_rows=2))
    write_report_json(report, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == report
