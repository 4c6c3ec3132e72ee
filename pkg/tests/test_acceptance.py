"""Acceptance criteria 1-13.

Each check prints a PASS/FAIL line (collected in the terminal summary).
Criteria that this model cannot meet run their real check under a strict
xfail, so the reason is on record and an unexpected pass is reported.

Run alone with ``python tests/test_acceptance.py`` or ``pytest -v
tests/test_acceptance.py``. The figure runs take about seven minutes on one
core; DOPPLERFISHER_WORKERS sets the worker count for the figure runs.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dopplerfisher.experiments import ExperimentSpec, ratio_spread, run
from dopplerfisher.fisher import (MeasurementPipeline, cfi_ideal_pro, find_theta_max, j_integrals, pipeline_grid,
                                  qfi_doppler, qfi_ideal, qfi_overlap_oracle, read_records_csv, resonant_delta0,
                                  theta_max_ideal)
from dopplerfisher.model import K0, MASS, MomentumGrid, analytic_moments, build_params, initial_state
from dopplerfisher.propagators import (abc_coefficients, abc_column, apply_doppler_pulse, apply_gravity,
                                       apply_ideal_pulse, apply_pro, apply_state_selective_kick,
                                       apply_two_level_propagator, integrate_trajectory, integrate_two_level,
                                       riccati_residual, shifted_propagator)

SEED = 20261019
FIG3 = dict(omega_rabi=10.0, delta0=-0.5, phi=0.0, g=0.0, sigma_p=2.0, omega_trap=1.0, t=0.0)
T_FIG3 = 2.5 * math.pi / 10.0


def params(**kw):
    return build_params({**FIG3, **kw})


# -- shared figure runs ----------------------------------------------------------------

@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def fig1(outdir):
    start = time.time()
    res = run(ExperimentSpec("fig1", out=outdir / "fig1"))
    return res, time.time() - start


@pytest.fixture(scope="module")
def fig2(outdir):
    start = time.time()
    res = run(ExperimentSpec("fig2", out=outdir / "fig2"))
    return res, time.time() - start


@pytest.fixture(scope="module")
def fig3(outdir):
    start = time.time()
    res = run(ExperimentSpec("fig3", out=outdir / "fig3_w1", workers=1))
    return res, time.time() - start


@pytest.fixture(scope="module")
def fig3_w8(outdir):
    start = time.time()
    res = run(ExperimentSpec("fig3", out=outdir / "fig3_w8", workers=8))
    return res, time.time() - start


@pytest.fixture(scope="module")
def fig4(outdir):
    start = time.time()
    res = run(ExperimentSpec("fig4", out=outdir / "fig4"))
    return res, time.time() - start


def panels(fig4_result):
    return {sg: sorted(rows, key=lambda r: r["n"]) for sg, rows in fig4_result.data["panels"].items()}


# -- 1. unitarity ------------------------------------------------------------------------

def test_c01_unitarity(report):
    start = time.time()
    rng = np.random.default_rng(SEED)
    base = params()
    worst = 0.0
    # 1000 parameter draws times 1000 momenta
    draws = zip(rng.uniform(-20, 20, 1000), rng.uniform(0.1, 50, 1000), rng.uniform(0, 20, 1000))
    for delta0, omega, t in draws:
        p = base.replace(delta0=float(delta0), omega_rabi=float(omega))
        a_, b_, c_, _ = abc_coefficients(rng.uniform(-50, 50, 1000), p, float(t))
        worst = max(worst, float(np.max(np.abs(a_ * a_ + b_ * b_ + c_ * c_ - 1.0))))

    p = params(g=0.3, chirp_rate=0.3 * K0)
    grid = pipeline_grid(p, 4, T_FIG3)
    s0 = initial_state(4, p, grid)
    n0 = s0.norm()
    stages = {
        "doppler pulse": apply_doppler_pulse(s0, p, T_FIG3),
        "ideal pulse": apply_ideal_pulse(s0, p, T_FIG3),
        "integrated pulse": apply_two_level_propagator(s0, shifted_propagator(p, None, grid, T_FIG3)),
    }
    s = stages["doppler pulse"]
    stages["gravity"] = s = apply_gravity(s, p, T_FIG3)
    stages["kick"] = s = apply_state_selective_kick(s)
    stages["rotation"] = apply_pro(s, 0.9, p.omega_trap, K0 * T_FIG3 / (2 * MASS))
    drift = max(abs(st.norm() - n0) for st in stages.values())
    elapsed = time.time() - start
    ok = worst <= 1e-12 and drift <= 1e-10 and elapsed < 10
    report("Criterion 1 (unitarity)", ok,
           f"max|A2+B2+C2-1|={worst:.1e} over 1e6 draws; max norm drift={drift:.1e}; {elapsed:.1f}s")
    assert worst <= 1e-12 and drift <= 1e-10
    assert elapsed < 10


# -- 2. integrated propagator against the closed form --------------------------------------

def test_c02_riccati_analytic_equivalence(report):
    start = time.time()
    p = params(g=0.4, chirp_rate=0.4 * K0, delta0=1.5)
    dp = 0.01
    grid = MomentumGrid(-2048 * dp, 4096, dp)
    t = 1.1
    prop = integrate_two_level(p, None, grid, t, rtol=1e-10)
    alpha, beta = abc_column(grid.p, p, t)
    exact = np.empty((grid.n_points, 2, 2), dtype=complex)
    exact[:, 0, 0], exact[:, 1, 0] = alpha, beta
    exact[:, 0, 1], exact[:, 1, 1] = -np.conj(beta), np.conj(alpha)
    err = float(np.max(np.abs(prop.U - exact)))

    traj = integrate_trajectory(p, None, [-1.0, 0.0, 0.7], np.linspace(0.0, t, 4401), rtol=1e-12)
    _, res, rhs = riccati_residual(traj)
    ok_pts = np.isfinite(res)
    rel = float(np.max(np.abs(res[ok_pts]) / (1.0 + np.abs(rhs[ok_pts]))))
    elapsed = time.time() - start
    ok = err <= 1e-8 and rel <= 1e-6 and elapsed < 60
    report("Criterion 2 (Riccati/analytic)", ok,
           f"max elementwise error={err:.1e} on 4096 points; Riccati residual={rel:.1e} on "
           f"{ok_pts.mean():.0%} non-singular samples; {elapsed:.1f}s")
    assert err <= 1e-8 and rel <= 1e-6 and elapsed < 60


# -- 3. ideal CFI pipeline against the closed form ---------------------------------------------

def test_c03_ideal_cfi_closed_form(report):
    start = time.time()
    p = params()
    thetas = (np.arange(8) + 0.5) * math.pi / 8
    worst = {}
    for n in (0, 1, 2, 5, 15, 30):
        pipe = MeasurementPipeline(p, n, T_FIG3, scenario="Ideal", pro=True)
        worst[n] = max(abs(pipe(th) / cfi_ideal_pro(p, n, T_FIG3, th) - 1.0) for th in thetas)
    elapsed = time.time() - start
    low = max(worst[n] for n in (0, 1, 2))
    high = max(worst[n] for n in (5, 15, 30))
    ok = low <= 1e-4 and high <= 1e-3 and elapsed < 300
    report("Criterion 3 (ideal CFI closed form)", ok,
           f"max rel error n<=2: {low:.1e}, n in 5,15,30: {high:.1e}; {elapsed:.1f}s")
    assert ok


# -- 4. QCRB saturation -------------------------------------------------------------------------

def test_c04_qcrb_saturation(report):
    start = time.time()
    dev, dtheta = 0.0, 0.0
    for sigma, t in ((2.0, T_FIG3), (0.5, 1.0), (5.0, 0.3)):
        p = params(sigma_p=sigma)
        th = theta_max_ideal(p, t)
        for n in (0, 3, 30):
            dev = max(dev, abs(cfi_ideal_pro(p, n, t, th) / qfi_ideal(p, n, t) - 1.0))
        num, _ = find_theta_max(lambda x: cfi_ideal_pro(p, 0, t, x))
        dtheta = max(dtheta, abs(num - th))
    elapsed = time.time() - start
    ok = dev <= 1e-10 and dtheta <= 1e-5 and elapsed < 1
    report("Criterion 4 (QCRB saturation)", ok,
           f"max|F_C/F_Q-1| at theta_max={dev:.1e}; numeric argmax offset={dtheta:.1e} rad; {elapsed:.2f}s")
    assert ok


# -- 5. ideal universality ------------------------------------------------------------------------

def test_c05_ideal_universality(report):
    start = time.time()
    p = params()
    worst = 0.0
    for th in (0.2, 0.9, 1.6, 2.7):
        ratios = [cfi_ideal_pro(p, n, T_FIG3, th) / qfi_ideal(p, n, T_FIG3) for n in range(31)]
        worst = max(worst, ratio_spread(ratios))
    elapsed = time.time() - start
    ok = worst < 1e-10 and elapsed < 1
    report("Criterion 5 (ideal universality)", ok, f"max spread over n=0..30: {worst:.1e}; {elapsed:.2f}s")
    assert ok


# -- 6. J3 at resonance ----------------------------------------------------------------------------

def test_c06_j3_resonance(report):
    start = time.time()
    worst, quoted = 0.0, 0.0
    for sigma in (0.5, 2.0, 5.0):
        p = params(sigma_p=sigma)
        p = p.replace(delta0=resonant_delta0(p))
        for n in range(11):
            j = j_integrals(p, n, T_FIG3)
            var_p = analytic_moments(n, sigma)[1]
            worst = max(worst, abs(j.J3) / (math.sqrt(j.J2) * math.sqrt(var_p)))
        jq = j_integrals(p.replace(delta0=-0.5), 0, T_FIG3)
        quoted = max(quoted, abs(jq.J3) / (math.sqrt(jq.J2) * math.sqrt(analytic_moments(0, sigma)[1])))
    elapsed = time.time() - start
    ok = worst <= 1e-10 and elapsed < 30
    report("Criterion 6 (J3 resonance)", ok,
           f"max |J3|/(sqrt(J2) sqrt(Var p)) at delta0=-1: {worst:.1e} (at -0.5: {quoted:.1e}); {elapsed:.1f}s")
    assert ok


# -- 7. QFI cross-validation -------------------------------------------------------------------------

def test_c07_qfi_cross_validation(report):
    start = time.time()
    rng = np.random.default_rng(SEED)
    worst, cases = 0.0, []
    for _ in range(20):
        n = int(rng.integers(0, 11))
        p = params(sigma_p=float(rng.uniform(0.3, 5.0)), delta0=float(rng.uniform(-8.0, 4.0)),
                   omega_rabi=float(rng.uniform(2.0, 20.0)))
        t = float(rng.uniform(0.5, 6.0)) * math.pi / p.omega_rabi
        fq = qfi_doppler(p, n, t)[0]
        oracle, err = qfi_overlap_oracle(p, n, t)
        rel = abs(fq / oracle - 1.0)
        worst = max(worst, rel)
        cases.append((n, p.sigma_p, p.delta0, p.omega_rabi, t, rel, err / oracle))
    elapsed = time.time() - start
    ok = worst <= 1e-3 and elapsed < 600
    report("Criterion 7 (QFI cross-validation)", ok,
           f"max rel difference over 20 tuples (seed {SEED}): {worst:.1e}; {elapsed:.1f}s")
    assert ok, cases


# -- 8. Fig. 1 ----------------------------------------------------------------------------------------

def test_c08a_narrow_resonant_contrast(fig1, report):
    res, elapsed = fig1
    d = res.data[(-0.5, 0.5)]
    first = float(np.max(d["contrast"][: d["contrast"].size // 10]))
    ok = first > 0.95 and d["late_contrast"] > 0.9 and elapsed < 600
    report("Criterion 8a (near-unit contrast, sigma_p=0.5, delta0=-0.5)", ok,
           f"first-period contrast={first:.4f}, final contrast={d['late_contrast']:.4f}; fig1 run {elapsed:.0f}s")
    assert ok


def test_c08b_broad_contrast_lower(fig1, report):
    res, _ = fig1
    c = {sg: res.data[(-0.5, sg)]["late_contrast"] for sg in (0.5, 2.0, 5.0)}
    ok = c[5.0] < c[0.5]
    report("Criterion 8b (late contrast lower at sigma_p=5)", ok,
           f"late contrast sigma 0.5/2/5 = {c[0.5]:.3f}/{c[2.0]:.3f}/{c[5.0]:.3f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="fidelity of the detuned narrow panel revives only to about 0.64 "
                                       "after its first drop below 0.9")
def test_c08c_detuned_fidelity_revival(fig1, report):
    res, _ = fig1
    d = res.data[(-7.0, 0.5)]
    f = d["F"]
    drop = int(np.flatnonzero(f < 0.9)[0])
    revival = float(np.max(f[drop:]))
    ok = revival > 0.9
    report("Criterion 8c (fidelity transiently > 0.9, delta0=-7, sigma_p=0.5)", ok,
           f"max fidelity after first drop below 0.9 (Omega t={d['omega_t'][drop]:.2f}) = {revival:.4f}; "
           f"the t=0 value 1 is excluded")
    assert ok


@pytest.mark.xfail(strict=True, reason="raw dF_Q grows like t^4 at late times; only dF_Q/F_Q^Ideal levels off")
def test_c08d_dfq_plateau(fig1, report):
    res, _ = fig1
    raw = {k: v["dF_Q_late_relstd"] for k, v in res.data.items()}
    norm = {k: v["dF_Q_rel_late_relstd"] for k, v in res.data.items()}
    ok = max(raw.values()) < 0.05
    worst_norm = max(norm, key=norm.get)
    report("Criterion 8d (dF_Q late-window rel std < 5%)", ok,
           f"raw: {min(raw.values()):.3f}..{max(raw.values()):.3f}; normalized by F_Q^Ideal: "
           f"{min(norm.values()):.4f}..{norm[worst_norm]:.4f} (worst panel delta0,sigma={worst_norm})")
    assert ok


# -- 9. Fig. 2 ----------------------------------------------------------------------------------------

def test_c09_fig2_slopes(fig2, report):
    res, elapsed = fig2
    rows = res.data["rows"]
    trend = res.data["trend"]
    slopes = [r["slope"] for r in rows]
    negative = all(s < 0 for s in slopes)
    ok = negative and trend["ok"] and elapsed < 900
    report("Criterion 9 (Fig. 2 slopes)", ok,
           f"all negative={negative}; |slope| rises to n={trend['peak_index']} then stays within "
           f"{trend['plateau_drop']:.1%} of the peak; significant post-peak falls at steps "
           f"{trend['strict_falls']}; {elapsed:.0f}s")
    assert ok


# -- 10. Fig. 3 --------------------------------------------------------------------------------------

def test_c10_fig3_gain(fig3, report):
    res, elapsed = fig3
    rows = res.data["rows"]
    gains = np.array([r["F_C_max"] / r["F_C_nopro"] for r in rows])
    scan_gain = np.array([np.max(r["F_C_scan"]) / r["F_C_nopro"] for r in rows])
    th = np.array([r["theta_max"] for r in rows])
    relstd = float(np.std(th) / np.mean(th))
    ok = len(rows) == 31 and scan_gain.min() >= 2.0 and relstd < 0.25 and elapsed < 1800
    report("Criterion 10 (Fig. 3 rotation gain)", ok,
           f"min scan gain={scan_gain.min():.2f} (refined {gains.min():.2f}); theta_max mean={th.mean():.4f}, "
           f"rel std={relstd:.2%}; {elapsed:.0f}s")
    assert ok


# -- 11. Fig. 4 --------------------------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="the Doppler CFI without rotation has an n-independent additive part, "
                                       "so its ratio to F_Q drifts with n once sigma_p is large")
def test_c11a_nopro_ratio_spread(fig4, report):
    res, elapsed = fig4
    spread = {sg: ratio_spread([r["F_C_nopro"] / r["F_Q"] for r in rows]) for sg, rows in panels(res).items()}
    ok = max(spread.values()) < 0.05
    report("Criterion 11a (no-rotation ratio spread < 5%)", ok,
           "spread by sigma_p: " + ", ".join(f"{sg:g}: {v:.2%}" for sg, v in sorted(spread.items()))
           + f"; fig4 run {elapsed:.0f}s")
    assert ok


def test_c11b_gain_grows_with_sigma(fig4, report):
    res, _ = fig4
    ps = panels(res)
    sigmas = sorted(ps)
    mean_gain = [float(np.mean([r["F_C_max"] / r["F_C_nopro"] for r in ps[sg]])) for sg in sigmas]
    per_n = all(np.all(np.diff([ps[sg][i]["F_C_max"] / ps[sg][i]["F_C_nopro"] for sg in sigmas]) > 0)
                for i in range(len(ps[sigmas[0]])))
    ok = bool(np.all(np.diff(mean_gain) > 0)) and per_n
    report("Criterion 11b (gain grows with sigma_p)", ok,
           "mean gain " + ", ".join(f"{sg:g}: {g:.1f}" for sg, g in zip(sigmas, mean_gain))
           + f"; monotone at every n={per_n}")
    assert ok


def test_c11c_broad_pro_ratio_band(fig4, report):
    res, elapsed = fig4
    ratios = np.array([r["F_C_max"] / r["F_Q"] for r in panels(res)[5.0]])
    dev = float(np.max(np.abs(ratios / ratios.mean() - 1.0)))
    ok = dev <= 0.15 and elapsed < 2700
    report("Criterion 11c (sigma_p=5 rotation ratio within +-15%)", ok,
           f"ratio {ratios.min():.3f}..{ratios.max():.3f}, max deviation from mean {dev:.1%}; {elapsed:.0f}s")
    assert ok


# -- 12. information inequality ----------------------------------------------------------------------

def test_c12_information_inequality(fig3, fig4, outdir, report, tmp_path):
    run(ExperimentSpec("cfi", settings={"n_values": [0, 5]}, out=tmp_path / "cfi"))
    run(ExperimentSpec("sweep", settings={"quantity": "F_C"}, axes={"theta": [0.3, 0.9, 2.0],
                                                                   "sigma_p": [0.5, 5.0]},
                       out=tmp_path / "sweep"))
    paths = sorted(outdir.rglob("*records.csv")) + [tmp_path / "cfi" / "cfi.csv",
                                                     tmp_path / "sweep" / "sweep_records.csv"]
    recs = [r for path in paths for r in read_records_csv(path)]
    bad = [r for r in recs if not r.satisfies_cramer_rao()]
    worst = max(r.F_C / r.F_Q for r in recs)
    ok = not bad and len(recs) > 0
    report("Criterion 12 (F_C <= F_Q)", ok, f"{len(recs)} records from {len(paths)} files; max F_C/F_Q={worst:.6f}")
    assert ok, bad[:5]


# -- 13. determinism ----------------------------------------------------------------------------------

def test_c13_determinism(fig3, fig3_w8, report):
    (r1, t1), (r8, t8) = fig3, fig3_w8
    names = ("fig3_records.csv", "fig3_summary.csv")
    d1, d8 = r1.files[0].parent, r8.files[0].parent
    same = all((d1 / n).read_bytes() == (d8 / n).read_bytes() for n in names)
    report("Criterion 13 (determinism)", same, f"fig3 CSVs identical at 1 and 8 workers; {t1:.0f}s vs {t8:.0f}s")
    assert same


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-v", "-p", "no:cacheprovider"]))
