"""Quantum and classical Fisher information for estimating the slope g.

Throughout, g varies with the chirp kept matched, so g enters the final
state only through the free-fall propagator. The analytic routes (oscillator
moments, pulse-coefficient integrals, closed-form CFIs) are paired with
numerical oracles that differentiate explicit states in g.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import (AliasingDetected, DegenerateDistribution, FlatObjective, GridTooNarrow, NoConvergence,
                     ThetaOutOfRange)
from .model import HBAR, K0, MASS, MomentumGrid, PhysParams, SpinorState, analytic_moments, build_grid, \
    ho_momentum_amplitude, initial_state
from .numerics import central_diff_richardson, csum, golden_section, simpson_integrate
from .observables import quadrature_grid
from .propagators import (GUARD_FRACTION, abc_coefficients, apply_doppler_pulse, apply_gravity, apply_ideal_pulse,
                          apply_state_selective_kick, apply_two_level_propagator, pro_rotate,
                          require_matched_chirp, shifted_propagator)

PROBABILITY_FLOOR = 1e-14
SCENARIOS = ("Ideal", "Doppler")


@dataclass(frozen=True)
class JIntegrals:
    J1: float
    J2: float
    J3: float
    errors: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FisherRecord:
    n: int
    theta: float | None
    sigma_p: float
    delta0: float
    t: float
    F_Q: float
    F_C: float
    scenario: str
    method: str
    ratio: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ratio", self.F_C / self.F_Q if self.F_Q != 0 else float("nan"))

    def satisfies_cramer_rao(self, slack: float = 1e-6) -> bool:
        return self.F_C <= self.F_Q * (1.0 + slack)


# -- ideal closed forms -----------------------------------------------------

def qfi_ideal(params: PhysParams, n: int, t: float) -> float:
    """4 (m^2 t^2 Var z + t^4 Var p / 4) / hbar^2 for the n-th oscillator state."""
    var_z, var_p = analytic_moments(n, params.sigma_p)
    m = MASS
    return 4.0 * (m * m * t * t * var_z + t**4 * var_p / 4.0) / HBAR**2


def cfi_ideal_nopro(params: PhysParams, n: int, t: float) -> float:
    """Joint momentum-population CFI of the Doppler-free pipeline."""
    x = t * params.sigma_p**2 / (2.0 * MASS * HBAR)
    return qfi_ideal(params, n, t) / (1.0 + x * x)


def cfi_ideal_pro(params: PhysParams, n: int, t: float, theta: float) -> float:
    """Doppler-free CFI after a phase-space rotation by ``theta``."""
    if not 0.0 < theta < math.pi:
        raise ThetaOutOfRange(f"theta must lie in (0, pi), got {theta}")
    m, s, w = MASS, params.sigma_p, params.omega_trap
    cot = math.cos(theta) / math.sin(theta)
    num = (2 * n + 1) * (m * s * t * (t * w - 2.0 * cot)) ** 2
    den = 2.0 * w * w * (m * m * HBAR**2 + s**4 * t * t) + 2.0 * s**4 * cot * (cot - 2.0 * t * w)
    return num / den


def theta_max_ideal(params: PhysParams, t: float) -> float:
    s4 = params.sigma_p**4
    return math.atan(s4 * t / (params.omega_trap * (2.0 * MASS**2 * HBAR**2 + s4 * t * t)))


def resonant_delta0(params: PhysParams, center_momentum: float = 0.0) -> float:
    """delta0 zeroing B0 at the a-frame momentum center + hbar k0 / 2."""
    return -K0 * (center_momentum + 0.5 * K0) / MASS


# -- Doppler analytic routes ------------------------------------------------

def j_integrals(params: PhysParams, n: int, t: float, grid: MomentumGrid | None = None) -> JIntegrals:
    """Oscillator-weighted integrals of p-derivatives of A, B, C at p + hbar k0/2."""
    require_matched_chirp(params)
    if grid is None:
        grid = quadrature_grid(params, n, t)
    psi = ho_momentum_amplitude(n, params.sigma_p, grid.p)
    missing = 1.0 - csum(psi * psi) * grid.dp
    if abs(missing) > 1e-12:
        raise GridTooNarrow(f"grid holds only {1 - missing:.3e} of the oscillator weight")
    w = psi * psi
    a_, b_, c_, _, da, db, dc = abc_coefficients(grid.p + 0.5 * K0, params, t, derivatives=True)
    cross = b_ * da - a_ * db
    r1 = simpson_integrate(w * cross, grid.dp)
    r2 = simpson_integrate(w * (da * da + db * db + dc * dc), grid.dp)
    r3 = simpson_integrate(w * grid.p * cross, grid.dp)
    return JIntegrals(r1.value, r2.value, r3.value, (r1.error_estimate, r2.error_estimate, r3.error_estimate))


def delta_qfi(j: JIntegrals, t: float) -> float:
    m = MASS
    return 4.0 * m * m * t * t * (j.J2 - j.J1 * j.J1) + 4.0 * m * t**3 * j.J3 / HBAR


def qfi_doppler(params: PhysParams, n: int, t: float, grid: MomentumGrid | None = None) -> tuple[float, float]:
    """(F_Q, Delta F_Q) of the Doppler pipeline."""
    d = delta_qfi(j_integrals(params, n, t, grid), t)
    return qfi_ideal(params, n, t) + d, d


def _fill_isolated(integrand: np.ndarray, keep: np.ndarray) -> None:
    """An isolated sub-floor node inside the support is a removable
    singularity of (dPr)^2/Pr; take its value from the four neighbours."""
    k = np.flatnonzero(~keep[2:-2]) + 2
    k = k[keep[k - 2] & keep[k - 1] & keep[k + 1] & keep[k + 2]]
    integrand[k] = (4.0 * (integrand[k - 1] + integrand[k + 1]) - integrand[k - 2] - integrand[k + 2]) / 6.0


def _distribution_fisher(prob_rows, dprob_rows, dp: float, floor: float):
    """sum_s int (dPr)^2 / Pr dp over bins above floor * max Pr.

    Returns (value, dropped_mass, retained_mass).
    """
    peak = max(float(np.max(r)) for r in prob_rows)
    total = 0.0
    dropped = 0.0
    retained = 0.0
    for pr, dpr in zip(prob_rows, dprob_rows):
        keep = pr >= floor * peak
        integrand = np.zeros_like(pr)
        integrand[keep] = dpr[keep] ** 2 / pr[keep]
        _fill_isolated(integrand, keep)
        total += simpson_integrate(integrand, dp).value
        dropped += csum(pr[~keep]) * dp
        retained += csum(pr[keep]) * dp
    return total, dropped, retained


def cfi_doppler_nopro(params: PhysParams, n: int, t: float, grid: MomentumGrid | None = None,
                      floor: float = PROBABILITY_FLOOR, return_info: bool = False):
    """Joint momentum-population CFI with the Doppler pulse and no rotation.

    The integrand K P (d log(K P)/dp)^2 is evaluated as (K' P + K P')^2/(K P)
    from the closed-form K' and the ladder-form oscillator derivative.
    """
    require_matched_chirp(params)
    if grid is None:
        grid = quadrature_grid(params, n, t)
    psi, dpsi = ho_momentum_amplitude(n, params.sigma_p, grid.p, derivative=True)
    a_, b_, c_, _, da, db, dc = abc_coefficients(grid.p + 0.5 * K0, params, t, derivatives=True)
    k_a, dk_a = a_ * a_ + b_ * b_, 2.0 * (a_ * da + b_ * db)
    # psi^2 cancels between numerator and denominator, so oscillator nodes
    # need no floor; only zeros of K_a remain divisions
    keep = k_a >= floor * float(np.max(k_a))
    integrand_a = np.zeros_like(k_a)
    integrand_a[keep] = (dk_a[keep] * psi[keep] + 2.0 * k_a[keep] * dpsi[keep]) ** 2 / k_a[keep]
    _fill_isolated(integrand_a, keep)
    integrand_b = 4.0 * (dc * psi + c_ * dpsi) ** 2
    value = simpson_integrate(integrand_a, grid.dp).value + simpson_integrate(integrand_b, grid.dp).value
    dropped = csum(k_a[~keep] * psi[~keep] ** 2) * grid.dp
    retained = 1.0 - dropped
    if retained < 1.0 - 1e-6:
        raise DegenerateDistribution(f"only {retained:.3e} of the probability lies above the floor")
    value *= (MASS * t) ** 2
    if return_info:
        return value, {"dropped_mass": dropped, "grid_points": grid.n_points, "dp": grid.dp}
    return value


# -- state-based oracles ----------------------------------------------------

def pipeline_grid(params: PhysParams, n: int, t: float, pro: bool = True, margin: float = 1.1,
                  cap: int | None = None) -> MomentumGrid:
    """Grid holding the pipeline state in both representations.

    The bulk of |psi_n> spans (sqrt(2n+1) + 8) natural widths. Its
    free-flight image is sheared by p t / m and displaced by the pulse
    (at most t), gravity and the rotation center; with a rotation the
    windows must hold every intermediate quadrature, and the outer
    guard band of each window must stay empty.
    """
    m = MASS
    ext = math.sqrt(2 * n + 1) + 8.0
    p_bulk = ext * params.sigma_p + K0 + m * abs(params.g) * t
    z_bulk = ext * HBAR / params.sigma_p + p_bulk * t / m + t + 0.5 * abs(params.g) * t * t
    z_need, p_need = z_bulk, p_bulk
    if pro:
        mw = m * params.omega_trap
        z0 = HBAR * K0 * t / (2.0 * m)
        r = p_bulk / mw
        z_need = max(math.hypot(z_bulk, r), z_bulk + math.tan(math.pi / 8) * r) + 2.0 * z0
        p_need = math.hypot(p_bulk, mw * z_bulk) + 2.0 * mw * z0
    usable = 1.0 - 2.0 * GUARD_FRACTION
    kwargs = {} if cap is None else {"cap": cap}
    return build_grid(params, n, z_half_width=margin * z_need / usable,
                      p_half_width=margin * p_need / usable, **kwargs)


def _pulse(state: SpinorState, params: PhysParams, t: float, scenario: str) -> SpinorState:
    if scenario == "Ideal":
        return apply_ideal_pulse(state, params, t)
    if scenario == "Doppler":
        return apply_doppler_pulse(state, params, t)
    raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")


def qfi_overlap_oracle(params: PhysParams, n: int, t: float, grid: MomentumGrid | None = None,
                       scenario: str = "Doppler", rtol: float = 1e-4, eps0: float | None = None,
                       max_halvings: int = 12) -> tuple[float, float]:
    """Pure-state QFI from the fidelity of neighbouring states.

    F(eps) = 8 (1 - |<Psi_{g-eps/2}|Psi_{g+eps/2}>|) / eps^2 is even in eps,
    so it is Richardson-extrapolated in eps^2 while halving eps until two
    successive extrapolants agree to ``rtol``. Returns (F_Q, error).
    """
    if grid is None:
        grid = pipeline_grid(params, n, t, pro=False)
    prepared = _pulse(initial_state(n, params, grid), params, t, scenario)
    g0 = params.g

    def amp(g):
        s = apply_gravity(prepared, params, t, g)
        return s.stacked()

    def estimate(eps):
        lo, hi = amp(g0 - 0.5 * eps), amp(g0 + 0.5 * eps)
        prod = np.conj(lo) * hi
        ov = complex(csum(prod.real), csum(prod.imag)) * grid.dp
        return 8.0 * (1.0 - abs(ov)) / (eps * eps)

    if eps0 is None:
        eps0 = math.sqrt(0.08 / max(qfi_ideal(params, n, t), 1e-300))
    rows: list[list[float]] = []
    eps = eps0
    for i in range(max_halvings + 1):
        row = [estimate(eps)]
        for j in range(1, i + 1):
            row.append(row[j - 1] + (row[j - 1] - rows[i - 1][j - 1]) / (4.0**j - 1.0))
        rows.append(row)
        if i > 0:
            spread = abs(row[-1] - rows[i - 1][-1])
            floor = 8.0 * 4.0 * np.finfo(float).eps / (eps * eps)
            if spread <= rtol * abs(row[-1]):
                return row[-1], max(spread, floor)
        eps *= 0.5
    raise NoConvergence(f"overlap QFI did not settle to rtol={rtol} after {max_halvings} halvings")


class MeasurementPipeline:
    """Joint momentum-population readout of the gravimeter state.

    prepare |psi_n, a> -> pulse (Ideal or Doppler) -> free fall in g ->
    state-selective kick -> optional rotation. The state and its
    g-derivative before the rotation are computed once, the derivative by
    Richardson-extrapolated central differences on the amplitudes; the
    rotation is linear, so each angle rotates both and forms
    dPr = 2 Re(conj(psi) dpsi).

    ``chirp="fixed"`` keeps the sweep rate at its configured value while g
    varies, so the pulse itself depends on g and is re-integrated.
    """

    def __init__(self, params: PhysParams, n: int, t: float, scenario: str = "Doppler", pro: bool = True,
                 grid: MomentumGrid | None = None, floor: float = PROBABILITY_FLOOR, deriv_rtol: float = 1e-7,
                 chirp: str = "matched", integrator_rtol: float = 1e-10):
        if scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
        if chirp not in ("matched", "fixed"):
            raise ValueError(f"chirp must be 'matched' or 'fixed', got {chirp!r}")
        if chirp == "matched" and scenario == "Doppler":
            require_matched_chirp(params)
        self.params, self.n, self.t = params, n, t
        self.scenario, self.chirp, self.floor = scenario, chirp, floor
        self.grid = grid if grid is not None else pipeline_grid(params, n, t, pro=pro)
        self.z0 = HBAR * K0 * t / (2.0 * MASS)
        start = initial_state(n, params, self.grid)
        self._start = start
        self._integrator_rtol = integrator_rtol
        if chirp == "matched":
            self._prepared = _pulse(start, params, t, scenario)
        g0 = params.g
        h0 = 0.5 * params.sigma_p / (MASS * max(t, 1e-300))
        self.amp = self._state_at(g0)
        self.damp, self.deriv_error = central_diff_richardson(self._state_at, g0, h0, rtol=deriv_rtol)
        self.dropped_mass = 0.0

    def _state_at(self, g: float) -> np.ndarray:
        if self.chirp == "matched":
            s = self._prepared
        else:
            p = self.params.replace(g=g, chirp_rate=self.params.chirp_rate)
            if self.scenario == "Doppler":
                prop = shifted_propagator(p, None, self.grid, self.t, rtol=self._integrator_rtol)
                s = apply_two_level_propagator(self._start, prop)
            else:
                s = apply_ideal_pulse(self._start, p, self.t)
        s = apply_state_selective_kick(apply_gravity(s, self.params, self.t, g))
        return s.stacked()

    def rows(self, theta: float | None):
        """(amplitudes, derivatives) after the optional rotation."""
        if theta is None:
            return self.amp, self.damp
        if not 0.0 < theta < math.pi:
            raise ThetaOutOfRange(f"theta must lie in (0, pi), got {theta}")
        out = pro_rotate(np.concatenate([self.amp, self.damp]), self.grid, theta, self.params.omega_trap, self.z0)
        amp, damp = out[:2], out[2:]
        before = float(np.sum(np.abs(self.amp) ** 2))
        drift = abs(float(np.sum(np.abs(amp) ** 2)) - before) * self.grid.dp
        if drift > 1e-8:
            raise AliasingDetected(f"norm drift {drift:.2e} during phase rotation")
        return amp, damp

    def fisher(self, theta: float | None = None) -> float:
        amp, damp = self.rows(theta)
        prob = np.abs(amp) ** 2
        dprob = 2.0 * np.real(np.conj(amp) * damp)
        value, dropped, retained = _distribution_fisher(list(prob), list(dprob), self.grid.dp, self.floor)
        if retained < 1.0 - 1e-6:
            raise DegenerateDistribution(f"only {retained:.3e} of the probability lies above the floor")
        self.dropped_mass = dropped
        return value

    __call__ = fisher


def cfi_pipeline(params: PhysParams, n: int, t: float, theta: float | None = None, scenario: str = "Doppler",
                 grid: MomentumGrid | None = None, **kwargs) -> float:
    """CFI of the joint readout, by differentiating the explicit pipeline in g."""
    pipe = MeasurementPipeline(params, n, t, scenario=scenario, pro=theta is not None, grid=grid, **kwargs)
    return pipe.fisher(theta)


# -- angle search -----------------------------------------------------------

def theta_scan(evaluator: Callable[[float], float], rng=(0.0, math.pi), coarse_n: int = 64):
    """Interior grid of ``coarse_n`` angles (end points excluded) and values."""
    if coarse_n < 64:
        raise ValueError("coarse_n must be >= 64")
    lo, hi = rng
    thetas = lo + (hi - lo) * (np.arange(coarse_n) + 1.0) / (coarse_n + 1.0)
    return thetas, np.array([evaluator(float(th)) for th in thetas])


def find_theta_max(evaluator: Callable[[float], float], rng=(0.0, math.pi), coarse_n: int = 64,
                   xtol: float = 1e-5, scan=None) -> tuple[float, float]:
    """Global maximum of ``evaluator``: coarse scan, then golden section on
    the bracket around the best coarse point. Ties go to the smaller angle."""
    lo, hi = rng
    thetas, vals = theta_scan(evaluator, rng, coarse_n) if scan is None else scan
    vmax, vmin = float(np.max(vals)), float(np.min(vals))
    if vmax - vmin <= 1e-12 * max(abs(vmax), abs(vmin), 1e-300):
        raise FlatObjective("objective is flat over the angle range")
    i = int(np.argmax(vals))
    a = thetas[i - 1] if i > 0 else lo + 1e-3 * (thetas[0] - lo)
    b = thetas[i + 1] if i + 1 < len(thetas) else hi - 1e-3 * (hi - thetas[-1])
    x, fx = golden_section(evaluator, float(a), float(b), xtol)
    if fx < vals[i]:
        return float(thetas[i]), float(vals[i])
    return float(x), float(fx)


# -- records ----------------------------------------------------------------

RECORD_HEADER = ["n", "theta", "sigma_p", "delta0", "t", "F_Q", "F_C", "ratio", "scenario", "method"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in RECORD_HEADER])


def read_records_csv(path) -> list[FisherRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(FisherRecord(
                n=int(row["n"]), theta=float(row["theta"]) if row["theta"] else None,
                sigma_p=float(row["sigma_p"]), delta0=float(row["delta0"]), t=float(row["t"]),
                F_Q=float(row["F_Q"]), F_C=float(row["F_C"]), scenario=row["scenario"], method=row["method"]))
    return out


def write_metadata_json(path, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
