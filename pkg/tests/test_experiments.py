import csv
import json
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dopplerfisher.errors import AxisEmpty, ConfigError, SweepPointFailed, ThetaOutOfRange
from dopplerfisher.experiments import (DEFAULTS, FIDELITY_HEADER, FIG1_SUMMARY_HEADER, FIG2_HEADER,
                                       FIG2_POINTS_HEADER, PRO_SUMMARY_HEADER, QFI_HEADER, RABI_HEADER,
                                       SWEEP_HEADER, ExperimentSpec, linear_fit, ratio_spread, run,
                                       slope_trend, sweep_points)
from dopplerfisher.fisher import RECORD_HEADER, cfi_ideal_pro, qfi_doppler, qfi_ideal, read_records_csv
from dopplerfisher.model import build_params
from dopplerfisher.observables import DISTRIBUTION_HEADER, TIMESERIES_HEADER
from dopplerfisher.propagators import TRAJECTORY_HEADER

SMALL_FIG3 = {"n_values": [0, 1]}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- spec handling ------------------------------------------------------------------

def test_unknown_experiment():
    with pytest.raises(ConfigError):
        ExperimentSpec("fig9")


def test_unknown_setting():
    with pytest.raises(ConfigError, match="omega"):
        ExperimentSpec("qfi", settings={"omega": 1.0})


def test_unknown_axis():
    with pytest.raises(ConfigError):
        ExperimentSpec("sweep", axes={"phi": [0.0]})


def test_settings_override_defaults():
    spec = ExperimentSpec("fig3", settings={"sigma_p": 3.0})
    s = spec.resolved()
    assert s["sigma_p"] == 3.0
    assert s["omega_t"] == DEFAULTS["fig3"]["omega_t"]
    assert DEFAULTS["fig3"]["sigma_p"] == 2.0


def test_figure_defaults():
    assert DEFAULTS["fig1"]["delta0_values"] == [-0.5, -7.0]
    assert DEFAULTS["fig1"]["sigma_values"] == [0.5, 2.0, 5.0]
    assert DEFAULTS["fig2"]["sigma_p"] == 2.45
    assert DEFAULTS["fig2"]["omega_t"] == pytest.approx(1000 * math.pi)
    assert DEFAULTS["fig2"]["n_values"] == list(range(11))
    assert DEFAULTS["fig3"]["omega_t"] == pytest.approx(2.5 * math.pi)
    assert DEFAULTS["fig3"]["n_values"] == list(range(31))
    assert DEFAULTS["fig4"]["sigma_values"] == [0.5, 2.0, 3.5, 5.0]


# -- sweeps ------------------------------------------------------------------------

def test_sweep_points_canonical_order():
    a = sweep_points({**DEFAULTS["sweep"], "axes": {"sigma_p": [2.0, 0.5], "n": [3, 1, 3]}})
    b = sweep_points({**DEFAULTS["sweep"], "axes": {"n": [1, 3], "sigma_p": [0.5, 2.0]}})
    assert a == b
    assert [(p["n"], p["sigma_p"]) for p in a] == [(1, 0.5), (1, 2.0), (3, 0.5), (3, 2.0)]


@settings(max_examples=30, deadline=None)
@given(st.permutations(["n", "sigma_p", "delta0"]), st.lists(st.integers(0, 5), min_size=1, max_size=4))
def test_sweep_points_independent_of_axis_order(order, ns):
    values = {"n": ns, "sigma_p": [1.0, 0.5], "delta0": [0.0, -1.0, 2.0]}
    pts = sweep_points({**DEFAULTS["sweep"], "axes": {k: values[k] for k in order}})
    ref = sweep_points({**DEFAULTS["sweep"], "axes": values})
    assert pts == ref
    assert len(pts) == len(set(ns)) * 2 * 3


def test_sweep_empty_axis():
    with pytest.raises(AxisEmpty):
        sweep_points({**DEFAULTS["sweep"], "axes": {"n": []}})


def test_sweep_needs_axis():
    with pytest.raises(AxisEmpty):
        sweep_points({**DEFAULTS["sweep"], "axes": {}})


def test_sweep_values_match_direct_calls(tmp_path):
    spec = ExperimentSpec("sweep", settings={"quantity": "F_C", "scenario": "Ideal"},
                          axes={"n": [0, 2], "theta": [0.5, 1.2]}, out=tmp_path)
    res = run(spec)
    rows = read_rows(tmp_path / "sweep.csv")
    assert rows[0] == SWEEP_HEADER
    assert len(rows) == 5
    p = build_params({**{k: DEFAULTS["sweep"][k] for k in ("omega_rabi", "phi", "g", "omega_trap", "delta0",
                                                           "sigma_p")}, "t": 0.0})
    t = DEFAULTS["sweep"]["omega_t"] / p.omega_rabi
    for row in rows[1:]:
        n, theta = int(row[0]), float(row[1])
        assert float(row[-1]) == cfi_ideal_pro(p, n, t, theta)
    assert all(r.satisfies_cramer_rao() for r in res.data["records"])
    assert len(read_records_csv(tmp_path / "sweep_records.csv")) == 4


def test_sweep_doppler_fq(tmp_path):
    run(ExperimentSpec("sweep", settings={"quantity": "F_Q"}, axes={"sigma_p": [0.5, 2.0]}, out=tmp_path))
    rows = read_rows(tmp_path / "sweep.csv")[1:]
    for row in rows:
        p = build_params({**{k: DEFAULTS["sweep"][k] for k in ("omega_rabi", "phi", "g", "omega_trap",
                                                               "delta0")}, "sigma_p": float(row[2]), "t": 0.0})
        assert float(row[-1]) == qfi_doppler(p, 0, float(row[4]))[0]


def test_sweep_ideal_population(tmp_path):
    run(ExperimentSpec("sweep", settings={"quantity": "P_a", "scenario": "Ideal"}, axes={"t": [0.0, 0.1]},
                       out=tmp_path))
    rows = read_rows(tmp_path / "sweep.csv")[1:]
    assert float(rows[0][-1]) == 1.0
    assert float(rows[1][-1]) == pytest.approx(math.cos(0.5) ** 2, rel=1e-15)


def test_sweep_theta_max_ideal(tmp_path):
    res = run(ExperimentSpec("sweep", settings={"quantity": "theta_max", "scenario": "Ideal"},
                             axes={"n": [0, 4]}, out=tmp_path))
    rows = res.data["rows"]
    assert rows[0][-1] == pytest.approx(rows[1][-1], abs=1e-5)
    assert all(r.ratio == pytest.approx(1.0, rel=1e-8) for r in res.data["records"])


def test_sweep_point_failure_reports_point(tmp_path):
    spec = ExperimentSpec("sweep", settings={"quantity": "F_C"}, axes={"theta": [1.0, 4.0]}, out=tmp_path)
    with pytest.raises(SweepPointFailed) as info:
        run(spec)
    assert info.value.point["theta"] == 4.0
    assert isinstance(info.value.cause, ThetaOutOfRange)
    d = info.value.to_dict()
    assert d["error"] == "sweep_point_failed" and d["cause"] == "theta_out_of_range"


def test_sweep_unknown_quantity(tmp_path):
    with pytest.raises(ConfigError):
        run(ExperimentSpec("sweep", settings={"quantity": "entropy"}, axes={"n": [0]}, out=tmp_path))


# -- figure runs ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_fig3(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig3")
    return run(ExperimentSpec("fig3", settings=SMALL_FIG3, out=out, workers=1))


def test_fig3_outputs(small_fig3):
    names = sorted(p.name for p in small_fig3.files)
    assert names == ["fig3_records.csv", "fig3_summary.csv", "metadata.json"]
    out = small_fig3.files[0].parent
    assert sorted(p.name for p in out.iterdir()) == names


def test_fig3_records(small_fig3):
    recs = read_records_csv(small_fig3.files[0])
    assert len(recs) == 2 * (64 + 2)
    assert all(r.satisfies_cramer_rao() for r in recs)
    best = [r for r in recs if r.method == "pipeline-max"]
    scans = [r for r in recs if r.method == "pipeline"]
    for b in best:
        assert b.F_C >= max(r.F_C for r in scans if r.n == b.n)


def test_fig3_summary(small_fig3):
    rows = read_rows(small_fig3.files[1])
    assert rows[0] == PRO_SUMMARY_HEADER
    for row in rows[1:]:
        vals = dict(zip(PRO_SUMMARY_HEADER, map(float, row)))
        assert vals["gain"] == pytest.approx(vals["F_C_max"] / vals["F_C_nopro"], rel=1e-15)
        assert vals["gain"] > 2.0
        assert 0.0 < vals["theta_max"] < math.pi


def test_fig3_metadata(small_fig3):
    meta = json.loads(small_fig3.files[-1].read_text())
    assert meta["experiment"] == "fig3"
    assert meta["resonance"]["quoted_delta0"] == -0.5
    assert meta["resonance"]["b0_zero_delta0"] == pytest.approx(-1.0)
    assert meta["seed"] is None
    assert set(meta["versions"]) == {"package", "python", "numpy", "scipy"}
    assert "omega_trap" in meta["inferred_defaults"]
    assert meta["settings"]["n_values"] == [0, 1]


def test_fig3_worker_count_invariance(small_fig3, tmp_path):
    run(ExperimentSpec("fig3", settings=SMALL_FIG3, out=tmp_path, workers=2))
    for name in ("fig3_records.csv", "fig3_summary.csv"):
        assert (tmp_path / name).read_bytes() == (small_fig3.files[0].parent / name).read_bytes()


def test_fig3_rerun_identical(small_fig3, tmp_path):
    run(ExperimentSpec("fig3", settings=SMALL_FIG3, out=tmp_path, workers=1))
    assert (tmp_path / "fig3_records.csv").read_bytes() == small_fig3.files[0].read_bytes()


def test_fig4_panels_and_plot(tmp_path):
    res = run(ExperimentSpec("fig4", settings={"n_values": [0, 2], "sigma_values": [0.5, 2.0]}, out=tmp_path,
                             plot=True))
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["fig4.svg", "fig4_records.csv", "fig4_summary.csv", "metadata.json"]
    assert (tmp_path / "fig4.svg").read_text().startswith("<svg")
    rows = read_rows(tmp_path / "fig4_summary.csv")[1:]
    assert [(float(r[0]), int(r[1])) for r in rows] == [(0.5, 0), (0.5, 2), (2.0, 0), (2.0, 2)]
    assert set(res.data["panels"]) == {0.5, 2.0}
    gain = {float(r[0]): float(r[-1]) for r in rows}
    assert gain[2.0] > gain[0.5]


def test_fig1_small(tmp_path):
    res = run(ExperimentSpec("fig1", settings={"samples": 101, "sigma_values": [0.5], "delta0_values": [-0.5],
                                               "omega_t_max": 4 * math.pi}, out=tmp_path))
    path = tmp_path / "fig1_delta-0.5_sigma0.5.csv"
    rows = read_rows(path)
    assert rows[0] == TIMESERIES_HEADER
    assert len(rows) == 102
    first = dict(zip(TIMESERIES_HEADER, map(float, rows[1])))
    assert first["P_a"] == pytest.approx(1.0, abs=1e-12)
    assert first["fidelity"] == pytest.approx(1.0, abs=1e-12)
    assert first["dF_Q"] == 0.0 and first["dF_Q_rel"] == 0.0
    summary = read_rows(tmp_path / "fig1_summary.csv")
    assert summary[0] == FIG1_SUMMARY_HEADER
    data = res.data[(-0.5, 0.5)]
    # a 101-sample axis over two Rabi periods gives a 50-sample window
    assert res.metadata["contrast_window_samples"] == 50
    assert np.all(data["contrast"] >= 0)
    assert data["late_contrast"] > 0.8


def test_rabi_and_fidelity(tmp_path):
    run(ExperimentSpec("rabi", settings={"samples": 51, "sigma_p": 0.5}, out=tmp_path / "r"))
    rows = read_rows(tmp_path / "r" / "rabi.csv")
    assert rows[0] == RABI_HEADER
    for row in rows[1:]:
        assert float(row[2]) + float(row[3]) == pytest.approx(1.0, abs=1e-14)
    run(ExperimentSpec("fidelity", settings={"samples": 51}, out=tmp_path / "f", plot=True))
    rows = read_rows(tmp_path / "f" / "fidelity.csv")
    assert rows[0] == FIDELITY_HEADER
    assert all(0.0 <= float(r[2]) <= 1.0 for r in rows[1:])
    assert (tmp_path / "f" / "fidelity.svg").exists()


def test_qfi_run(tmp_path):
    run(ExperimentSpec("qfi", settings={"n_values": [0, 3], "oracle": True}, out=tmp_path))
    rows = read_rows(tmp_path / "qfi.csv")
    assert rows[0] == QFI_HEADER
    for row in rows[1:]:
        v = dict(zip(QFI_HEADER, row))
        assert float(v["F_Q"]) == pytest.approx(float(v["F_Q_ideal"]) + float(v["dF_Q"]), rel=1e-14)
        assert float(v["F_Q"]) == pytest.approx(float(v["F_Q_oracle"]), rel=1e-4)


def test_cfi_run(tmp_path):
    res = run(ExperimentSpec("cfi", settings={"n_values": [0], "theta": 0.9}, out=tmp_path))
    recs = res.data["records"]
    assert [r.method for r in recs] == ["analytic", "pipeline"]
    assert recs[1].F_C > recs[0].F_C
    assert all(r.satisfies_cramer_rao() for r in recs)


def test_fig2_small(tmp_path):
    res = run(ExperimentSpec("fig2", settings={"n_values": [0, 1], "delta0_values": [-2.0, 0.0, 2.0],
                                               "omega_t": 20 * math.pi}, out=tmp_path))
    assert read_rows(tmp_path / "fig2.csv")[0] == FIG2_HEADER
    pts = read_rows(tmp_path / "fig2_points.csv")
    assert pts[0] == FIG2_POINTS_HEADER and len(pts) == 7
    assert "trend" in res.metadata


# -- helpers -------------------------------------------------------------------------

def test_linear_fit_exact_line():
    x = np.linspace(-3, 3, 9)
    fit = linear_fit(x, 2.5 * x - 1.0)
    assert fit["slope"] == pytest.approx(2.5, rel=1e-13)
    assert fit["intercept"] == pytest.approx(-1.0, rel=1e-13)
    assert fit["residual_rms"] < 1e-13


def test_linear_fit_stderr_scales_with_noise():
    rng = np.random.default_rng(5)
    x = np.linspace(-10, 10, 41)
    small = linear_fit(x, x + 0.01 * rng.standard_normal(41))
    big = linear_fit(x, x + 1.0 * rng.standard_normal(41))
    assert big["slope_stderr"] > 10 * small["slope_stderr"]


def test_slope_trend_rise_then_plateau():
    tr = slope_trend([-1, -2, -3, -3.05, -3.0, -2.95], [0.01] * 6)
    assert tr["peak_index"] == 3 and tr["rising_to_peak"] and tr["saturated"] and tr["ok"]
    assert tr["strict_falls"] == [3, 4]


def test_slope_trend_fall_before_peak():
    tr = slope_trend([-1, -2, -1.5, -3], [0.01] * 4)
    assert not tr["rising_to_peak"] and not tr["ok"]


def test_slope_trend_fall_within_errors():
    assert slope_trend([-1, -2, -1.99, -3], [0.01] * 4)["rising_to_peak"]


def test_slope_trend_collapse_after_peak():
    tr = slope_trend([-1, -3, -1.0], [0.01] * 3)
    assert tr["plateau_drop"] == pytest.approx(2 / 3)
    assert not tr["saturated"]


def test_ratio_spread():
    assert ratio_spread([1.0, 1.0]) == 0.0
    assert ratio_spread([0.9, 1.1]) == pytest.approx(0.2)


# -- CSV schema -------------------------------------------------------------------------

def test_schema_matches_headers():
    schema = json.loads((resources.files("dopplerfisher") / "csv_schema.json").read_text())
    expected = {"timeseries": TIMESERIES_HEADER, "fig1_summary": FIG1_SUMMARY_HEADER, "rabi": RABI_HEADER,
                "fidelity": FIDELITY_HEADER, "fig2": FIG2_HEADER, "fig2_points": FIG2_POINTS_HEADER,
                "records": RECORD_HEADER, "pro_summary": PRO_SUMMARY_HEADER, "qfi": QFI_HEADER,
                "sweep": SWEEP_HEADER, "distribution": DISTRIBUTION_HEADER, "trajectory": TRAJECTORY_HEADER}
    assert set(schema) == set(expected)
    for key, header in expected.items():
        assert list(schema[key]["columns"]) == header, key
