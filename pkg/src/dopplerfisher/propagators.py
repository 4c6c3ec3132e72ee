"""Unitaries of the driven two-level atom in a linear potential.

Conventions (recoil units, internal basis ordered (a, b)):

* The dressed-frame two-level Hamiltonian is
  h(p, tau) = [[B3/2, (Omega/2) e^{i phi}], [(Omega/2) e^{-i phi}, -B3/2]]
  with B3 = -k0 p/m - k0 g tau - delta(tau). For a matched chirp
  B3 = -B0, B0 = k0 p/m + delta0, and the propagator is the closed form
  U = [[A + iB, -iC e^{i phi}], [-iC e^{-i phi}, A - iB]].
* Every U is in SU(2), so it is carried as its first column
  (alpha, beta) = (U_aa, U_ba); U_ab = -conj(beta), U_bb = conj(alpha).
* Lab-frame action of a dressed-frame U: the a row sees its coefficients at
  p + hbar k0/2 and the b row at p - hbar k0/2, with the b component carried
  hbar k0 higher in momentum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (AliasingDetected, ChirpMismatch, DopplerFisherError, JobError, GaussSingular, KickOffGrid, NonFiniteDetuning,
                     ThetaOutOfRange, ToleranceNotMet)
from .model import HBAR, K0, MASS, MomentumGrid, PhysParams, SpinorState
from .numerics import fourier_pair, parallel_map

TAIL_TOL = 1e-12
GUARD_FRACTION = 1.0 / 32.0


# -- closed-form pulse ------------------------------------------------------

def detuning_b0(q, params: PhysParams):
    return K0 * np.asarray(q, dtype=float) / MASS + params.delta0


def abc_coefficients(q, params: PhysParams, t: float, derivatives: bool = False):
    """A, B, C, Delta at momentum ``q``; with ``derivatives`` also dA/dq,
    dB/dq, dC/dq by the chain rule through B0 and Delta."""
    b0 = detuning_b0(q, params)
    om = params.omega_rabi
    delta = np.sqrt(b0 * b0 + om * om)
    half = 0.5 * delta * t
    s, c = np.sin(half), np.cos(half)
    a_, b_, c_ = c, b0 / delta * s, om / delta * s
    if not derivatives:
        return a_, b_, c_, delta
    db0 = K0 / MASS
    ddelta = b0 * db0 / delta
    dphase = 0.5 * t * ddelta
    da = -s * dphase
    db = db0 * om * om / delta**3 * s + b0 / delta * c * dphase
    dc = -om * ddelta / delta**2 * s + om / delta * c * dphase
    return a_, b_, c_, delta, da, db, dc


@dataclass(frozen=True)
class ABCProfile:
    grid: MomentumGrid
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    Delta: np.ndarray = field(repr=False)
    t: float = 0.0


def require_matched_chirp(params: PhysParams):
    if not params.chirp_matched:
        raise ChirpMismatch(f"closed form needs chirp_rate = k0 g = {K0 * params.g}, got {params.chirp_rate}")


def abc_profile(params: PhysParams, grid: MomentumGrid, t: float) -> ABCProfile:
    """Closed-form propagator coefficients on the raw grid momenta."""
    require_matched_chirp(params)
    if t < 0:
        raise ValueError("t must be >= 0")
    a_, b_, c_, d_ = abc_coefficients(grid.p, params, t)
    return ABCProfile(grid, a_, b_, c_, d_, t)


def abc_column(q, params: PhysParams, t: float):
    a_, b_, c_, _ = abc_coefficients(q, params, t)
    return a_ + 1j * b_, -1j * c_ * np.exp(-1j * params.phi)


# -- array helpers ----------------------------------------------------------

def shift_bins(arr: np.ndarray, k: int, tol: float = TAIL_TOL, dp: float = 1.0) -> np.ndarray:
    """out[..., j] = arr[..., j - k] with zero fill; refuses to drop mass."""
    if k == 0:
        return np.array(arr, dtype=complex)
    n = arr.shape[-1]
    lost = arr[..., n - k:] if k > 0 else arr[..., :-k]
    if np.sum(np.abs(lost) ** 2) * dp > tol:
        raise KickOffGrid(f"momentum kick of {k} bins pushes probability off the grid")
    out = np.zeros(arr.shape, dtype=complex)
    if k > 0:
        out[..., k:] = arr[..., :n - k]
    else:
        out[..., :k] = arr[..., -k:]
    return out


def _edge_mass(arr: np.ndarray, width: int, side: int) -> float:
    if width <= 0:
        return 0.0
    sl = arr[..., -width:] if side > 0 else arr[..., :width]
    return float(np.sum(np.abs(sl) ** 2))


def shift_momentum(arr: np.ndarray, grid: MomentumGrid, shift: float, tol: float = TAIL_TOL) -> np.ndarray:
    """psi(p) -> psi(p - shift): a bin roll when commensurate, otherwise the
    position-space phase e^{i shift z / hbar}."""
    if shift == 0:
        return np.array(arr, dtype=complex)
    k = grid.bins(shift)
    if k is not None:
        return shift_bins(arr, k, tol, grid.dp)
    width = int(math.ceil(abs(shift) / grid.dp)) + 1
    if _edge_mass(arr, width, 1 if shift > 0 else -1) * grid.dp > tol:
        raise KickOffGrid(f"momentum shift {shift} pushes probability off the grid")
    z = fourier_pair(arr, "forward", grid.dp)
    z *= np.exp(1j * shift * grid.z / HBAR)
    return fourier_pair(z, "inverse", grid.dz)


# -- pulses -----------------------------------------------------------------

def apply_columns(state: SpinorState, up, dn) -> SpinorState:
    """Apply the lab-frame image of a dressed-frame SU(2) propagator.

    ``up`` and ``dn`` are (U_aa, U_ba) evaluated at p + hbar k0/2 and
    p - hbar k0/2 respectively.
    """
    grid = state.grid
    k = grid.bins(K0)
    if k is None:
        raise KickOffGrid("hbar k0 is not a whole number of bins on this grid")
    alpha_up, beta_up = up
    alpha_dn, beta_dn = dn
    new_a = alpha_up * state.amp_a - np.conj(beta_up) * shift_bins(state.amp_b, -k, dp=grid.dp)
    new_b = np.conj(alpha_dn) * state.amp_b + beta_dn * shift_bins(state.amp_a, k, dp=grid.dp)
    return SpinorState(grid, new_a, new_b)


def apply_doppler_pulse(state: SpinorState, params: PhysParams, t: float) -> SpinorState:
    """Chirp-matched Raman pulse of duration ``t`` including the Doppler
    dependence of the effective detuning on momentum."""
    require_matched_chirp(params)
    if t == 0:
        return state
    p = state.grid.p
    return apply_columns(state, abc_column(p + 0.5 * K0, params, t), abc_column(p - 0.5 * K0, params, t))


def apply_ideal_pulse(state: SpinorState, params: PhysParams, t: float) -> SpinorState:
    """Doppler-free pulse: resonant rotation by Omega t with the recoil kick."""
    if t < 0:
        raise ValueError("t must be >= 0")
    c = math.cos(0.5 * params.omega_rabi * t)
    s = math.sin(0.5 * params.omega_rabi * t)
    beta = -1j * s * np.exp(-1j * params.phi)
    return apply_columns(state, (c, beta), (c, beta))


def apply_two_level_propagator(state: SpinorState, prop: "TwoLevelPropagator") -> SpinorState:
    """Apply a numerically integrated pulse; ``prop`` must have been computed
    on the grid momenta shifted by +hbar k0/2 and -hbar k0/2 (see
    :func:`shifted_propagator`)."""
    if prop.shifted is None:
        raise ValueError("propagator was not built for lab-frame use")
    up, dn = prop.shifted
    return apply_columns(state, (up[:, 0, 0], up[:, 1, 0]), (dn[:, 0, 0], dn[:, 1, 0]))


# -- free fall --------------------------------------------------------------

def linear_potential_propagator(amp: np.ndarray, grid: MomentumGrid, t: float, g: float,
                                q_offset: float = 0.0) -> np.ndarray:
    """exp(-i t (p^2/2m - m g z) / hbar) in the momentum representation.

    Exact factorization: psi(p) -> psi(p - m g t) exp(-i (q^2 t - q m g t^2 +
    m^2 g^2 t^3 / 3) / (2 m hbar)) with q = p + ``q_offset``. The offset
    realizes the hbar k0/2 frame sandwich without moving the array.
    """
    force = MASS * g
    shifted = shift_momentum(amp, grid, force * t)
    q = grid.p + q_offset
    phase = (q * q * t - q * force * t * t + force * force * t**3 / 3.0) / (2.0 * MASS * HBAR)
    return shifted * np.exp(-1j * phase)


def apply_gravity(state: SpinorState, params: PhysParams, t: float, g: float | None = None) -> SpinorState:
    """Free fall in the linear potential for time ``t`` (frame-sandwiched:
    the a component evolves with momentum argument p + hbar k0/2, b with
    p - hbar k0/2)."""
    g = params.g if g is None else g
    grid = state.grid
    new_a = linear_potential_propagator(state.amp_a, grid, t, g, +0.5 * K0)
    new_b = linear_potential_propagator(state.amp_b, grid, t, g, -0.5 * K0)
    return SpinorState(grid, new_a, new_b)


def apply_state_selective_kick(state: SpinorState) -> SpinorState:
    """|a><a| + |b><b| e^{-i k0 z}: the b component loses hbar k0."""
    grid = state.grid
    k = grid.bins(K0)
    if k is None:
        raise KickOffGrid("hbar k0 is not a whole number of bins on this grid")
    return SpinorState(grid, np.array(state.amp_a), shift_bins(state.amp_b, -k, dp=grid.dp))


# -- phase-space rotation ---------------------------------------------------

def pro_rotate(arr: np.ndarray, grid: MomentumGrid, theta: float, omega: float, z0: float,
               guard_tol: float | None = 1e-10) -> np.ndarray:
    """D(z0) R(theta) D(z0)^dagger on momentum amplitudes (last axis).

    R(theta) = exp(-i (theta/omega) (p^2/2m + m omega^2 z^2/2)) rotates phase
    space by ``theta``. It is split into sub-rotations of at most pi/4, each
    the exact shear product e^{-i a p^2/2} e^{-i b z^2/2} e^{-i a p^2/2} with
    a = tan(angle/2)/(m omega), b = m omega sin(angle). With ``guard_tol``
    set, probability in the outer 1/32 of either window raises
    AliasingDetected.
    """
    p, z = grid.p, grid.z
    steps = max(1, math.ceil(abs(theta) / (math.pi / 4)))
    ang = theta / steps
    mw = MASS * omega
    a = math.tan(0.5 * ang) / mw
    b = mw * math.sin(ang)
    half_chirp = np.exp(-0.5j * a * p * p / HBAR)
    full_chirp = half_chirp * half_chirp
    kick = np.exp(-0.5j * b * z * z / HBAR)
    out = np.asarray(arr, dtype=complex) * (np.exp(-1j * p * z0 / HBAR) * half_chirp)
    band = max(1, int(grid.n_points * GUARD_FRACTION))
    total = float(np.sum(np.abs(out) ** 2))

    def guard(x, where):
        if guard_tol is None or total == 0:
            return
        edge = _edge_mass(x, band, 1) + _edge_mass(x, band, -1)
        if edge > guard_tol * total:
            raise AliasingDetected(f"{edge / total:.2e} of the probability reached the {where} window edge")

    guard(out, "momentum")
    for i in range(steps):
        zr = fourier_pair(out, "forward", grid.dp)
        guard(zr, "position")
        zr *= kick
        out = fourier_pair(zr, "inverse", grid.dz)
        out *= full_chirp if i < steps - 1 else half_chirp
    out *= np.exp(1j * p * z0 / HBAR)
    guard(out, "momentum")
    return out


def apply_pro(state: SpinorState, theta: float, omega: float, z0: float, strict: bool = True,
              guard_tol: float = 1e-10) -> SpinorState:
    """Phase-rotation operation on both internal components."""
    if not 0.0 < theta < math.pi:
        raise ThetaOutOfRange(f"theta must lie in (0, pi), got {theta}")
    before = state.norm()
    out = pro_rotate(state.stacked(), state.grid, theta, omega, z0, guard_tol)
    result = SpinorState(state.grid, out[0], out[1])
    drift = abs(result.norm() - before)
    if drift > 1e-8:
        if strict:
            raise AliasingDetected(f"norm drift {drift:.2e} during phase rotation")
        scale = math.sqrt(before / result.norm())
        result = SpinorState(state.grid, out[0] * scale, out[1] * scale)
    return result


# -- general time-dependent pulse -------------------------------------------

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class TwoLevelPropagator:
    """Per-momentum SU(2) propagators U[j] (basis order a, b) at ``momenta``."""

    grid: MomentumGrid
    U: np.ndarray = field(repr=False)
    t: float = 0.0
    momenta: np.ndarray | None = field(default=None, repr=False)
    shifted: tuple | None = field(default=None, repr=False)
    steps: int = 0


@dataclass(frozen=True)
class Trajectory:
    """Propagators sampled at ``times``: U has shape (len(times), len(momenta), 2, 2)."""

    times: np.ndarray
    momenta: np.ndarray
    U: np.ndarray
    omega_rabi: float
    phi: float
    b3: np.ndarray


def chirp_detuning(params: PhysParams) -> Callable:
    """delta(tau) = delta0 - chirp_rate tau."""
    d0, rate = params.delta0, params.chirp_rate
    return ChirpDetuning(d0, rate)


@dataclass(frozen=True)
class ChirpDetuning:
    """Picklable linear detuning ramp."""

    delta0: float
    rate: float

    def __call__(self, tau):
        return self.delta0 - self.rate * np.asarray(tau, dtype=float)


def _column_to_matrix(alpha, beta):
    u = np.empty(alpha.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = alpha
    u[..., 1, 0] = beta
    u[..., 0, 1] = -np.conj(beta)
    u[..., 1, 1] = np.conj(alpha)
    return u


def _b3(params, detuning_fn, p, tau):
    d = np.asarray(detuning_fn(tau), dtype=float)
    if not np.all(np.isfinite(d)):
        raise NonFiniteDetuning("detuning function returned a non-finite value")
    return -K0 * p / MASS - K0 * params.g * tau - d


def _integrate_columns(params: PhysParams, detuning_fn: Callable, p: np.ndarray, t: float, rtol: float,
                       record_times: np.ndarray | None = None, max_steps: int = 10_000_000):
    """Adaptive Dormand-Prince 5(4) for y' = -i h(p, tau) y, y(0) = (1, 0),
    with an independent step size per momentum point."""
    p = np.asarray(p, dtype=float)
    n = p.size
    cab = 0.5 * params.omega_rabi * np.exp(1j * params.phi)
    cba = np.conj(cab)
    atol = 0.1 * rtol

    def rhs(tau, ya, yb, pp):
        half = 0.5 * _b3(params, detuning_fn, pp, tau)
        return -1j * (half * ya + cab * yb), -1j * (cba * ya - half * yb)

    ya = np.ones(n, dtype=complex)
    yb = np.zeros(n, dtype=complex)
    tau = np.zeros(n)
    if record_times is None:
        stops = np.array([t])
    else:
        stops = np.unique(np.append(np.asarray(record_times, dtype=float), t))
        stops = stops[(stops > 0) & (stops <= t)]
    rec = np.empty((stops.size, n, 2), dtype=complex)
    stop_idx = np.zeros(n, dtype=int)
    if t == 0:
        rec[:] = np.stack([ya, yb], axis=-1)
        return rec, stops, 0
    b_scale = np.abs(_b3(params, detuning_fn, p, np.zeros(n))) + params.omega_rabi
    h = np.minimum(0.05 / np.maximum(b_scale, 1e-300), t)
    ka, kb = rhs(tau, ya, yb, p)
    total = 0
    active = np.arange(n)
    while active.size:
        total += 1
        if total > max_steps:
            raise ToleranceNotMet("step budget exhausted")
        pa, ta, hh = p[active], tau[active], h[active]
        target = stops[stop_idx[active]]
        clipped = hh >= target - ta
        hh = np.where(clipped, target - ta, hh)
        y0a, y0b = ya[active], yb[active]
        ksa, ksb = [ka[active]], [kb[active]]
        for s in range(1, 7):
            sa = y0a.copy()
            sb = y0b.copy()
            for j, coef in enumerate(_A[s]):
                if coef:
                    sa += hh * coef * ksa[j]
                    sb += hh * coef * ksb[j]
            fa, fb = rhs(ta + _C[s] * hh, sa, sb, pa)
            ksa.append(fa)
            ksb.append(fb)
        ya_new, yb_new = sa, sb  # stage 7 abscissa is the 5th-order solution
        ea = hh * sum(_E[j] * ksa[j] for j in range(7))
        eb = hh * sum(_E[j] * ksb[j] for j in range(7))
        scale = atol + rtol * np.maximum(np.maximum(np.abs(y0a), np.abs(ya_new)),
                                         np.maximum(np.abs(y0b), np.abs(yb_new)))
        err = np.maximum(np.abs(ea), np.abs(eb)) / scale
        ok = err <= 1.0
        fac = np.where(err > 0, 0.9 * np.power(np.maximum(err, 1e-30), -0.2), 5.0)
        h_next = hh * np.clip(fac, 0.2, 5.0)
        if np.any(h_next < 1e-14 * t):
            raise ToleranceNotMet(f"step size underflow at rtol={rtol}")
        acc = active[ok]
        if acc.size:
            na, nb = ya_new[ok], yb_new[ok]
            drift = np.abs(np.abs(na) ** 2 + np.abs(nb) ** 2 - 1.0)
            proj = drift > rtol
            if np.any(proj):
                r = 1.0 / np.sqrt(np.abs(na[proj]) ** 2 + np.abs(nb[proj]) ** 2)
                na[proj] *= r
                nb[proj] *= r
            ya[acc], yb[acc] = na, nb
            tau[acc] = np.where(clipped[ok], target[ok], ta[ok] + hh[ok])
            ka[acc], kb[acc] = ksa[6][ok], ksb[6][ok]
            if np.any(proj):
                fa, fb = rhs(tau[acc], ya[acc], yb[acc], p[acc])
                ka[acc], kb[acc] = fa, fb
            landed = acc[clipped[ok]]
            if landed.size:
                rec[stop_idx[landed], landed, 0] = ya[landed]
                rec[stop_idx[landed], landed, 1] = yb[landed]
                stop_idx[landed] += 1
        h[active] = h_next
        active = np.flatnonzero(stop_idx < stops.size)
    return rec, stops, total


def _integrate_chunk(job):
    params, detuning_fn, p, t, rtol = job
    rec, _, steps = _integrate_columns(params, detuning_fn, p, t, rtol)
    return rec[-1], steps


def integrate_two_level(params: PhysParams, detuning_fn: Callable | None, grid: MomentumGrid, t: float,
                        rtol: float = 1e-10, momenta: np.ndarray | None = None, workers: int | None = 1,
                        chunks: int | None = None) -> TwoLevelPropagator:
    """Numerical two-level propagator for an arbitrary detuning history.

    Each momentum point is integrated independently, so splitting the grid
    across workers leaves the result bit-identical. ``momenta`` defaults to
    the raw grid momenta. ``detuning_fn`` must accept arrays of times; None
    means the chirp stored in ``params``.
    """
    if not 1e-12 <= rtol <= 1e-6:
        raise ValueError(f"rtol must lie in [1e-12, 1e-6], got {rtol}")
    detuning_fn = chirp_detuning(params) if detuning_fn is None else detuning_fn
    p = grid.p if momenta is None else np.asarray(momenta, dtype=float)
    nchunk = chunks or 1
    pieces = np.array_split(p, nchunk)
    try:
        out = parallel_map(_integrate_chunk, [(params, detuning_fn, q, t, rtol) for q in pieces], workers)
    except JobError as exc:
        if isinstance(exc.cause, DopplerFisherError):
            raise exc.cause from None
        raise
    col = np.concatenate([o[0] for o in out])
    steps = int(sum(o[1] for o in out))
    return TwoLevelPropagator(grid, _column_to_matrix(col[:, 0], col[:, 1]), t, p, None, steps)


def shifted_propagator(params: PhysParams, detuning_fn: Callable | None, grid: MomentumGrid, t: float,
                       rtol: float = 1e-10) -> TwoLevelPropagator:
    """Integrated propagator at p + hbar k0/2 and p - hbar k0/2, ready for
    :func:`apply_two_level_propagator`."""
    up = integrate_two_level(params, detuning_fn, grid, t, rtol, momenta=grid.p + 0.5 * K0)
    dn = integrate_two_level(params, detuning_fn, grid, t, rtol, momenta=grid.p - 0.5 * K0)
    return TwoLevelPropagator(grid, up.U, t, up.momenta, (up.U, dn.U), up.steps + dn.steps)


def integrate_trajectory(params: PhysParams, detuning_fn: Callable | None, momenta, times,
                         rtol: float = 1e-10) -> Trajectory:
    """Propagators U(p, tau) sampled at ``times`` (stepping lands on each)."""
    detuning_fn = chirp_detuning(params) if detuning_fn is None else detuning_fn
    momenta = np.atleast_1d(np.asarray(momenta, dtype=float))
    times = np.asarray(times, dtype=float)
    rec, stops, _ = _integrate_columns(params, detuning_fn, momenta, float(times.max()), rtol, times)
    u = np.empty((times.size, momenta.size, 2, 2), dtype=complex)
    u[:] = np.eye(2)
    positive = times > 0
    u[positive] = _column_to_matrix(rec[..., 0], rec[..., 1])[np.searchsorted(stops, times[positive])]
    b3 = np.stack([_b3(params, detuning_fn, momenta, np.full(momenta.size, s)) for s in times])
    return Trajectory(times, momenta, u, params.omega_rabi, params.phi, b3)


# -- Gauss (Lie-algebraic) decomposition ------------------------------------

@dataclass(frozen=True)
class SU2Coefficients:
    """U = exp(i f+ S+) exp(i f3 S3) exp(i f- S-) with S+ = |b><a|,
    S- = |a><b|, S3 = (|b><b| - |a><a|)/2."""

    f_plus: np.ndarray
    f_3: np.ndarray
    f_minus: np.ndarray


def su2_coefficients(prop, tol_singular: float = 1e-8) -> SU2Coefficients:
    """Gauss-decomposition coefficients of each U(p).

    Raises GaussSingular where |<a|U|a>| <= ``tol_singular``: f+ has a pole
    there (the Riccati blow-up at an amplitude zero crossing).
    """
    u = prop.U if hasattr(prop, "U") else np.asarray(prop)
    uaa, uba, uab = u[..., 0, 0], u[..., 1, 0], u[..., 0, 1]
    if np.any(np.abs(uaa) <= tol_singular):
        raise GaussSingular("<a|U|a> vanishes; the Gauss decomposition is singular")
    return SU2Coefficients(-1j * uba / uaa, 2j * np.log(uaa), -1j * uab / uaa)


def su2_reconstruct(coeffs: SU2Coefficients) -> np.ndarray:
    """Multiply the three exponentials back together (basis order a, b)."""
    fp, f3, fm = (np.asarray(x, dtype=complex) for x in (coeffs.f_plus, coeffs.f_3, coeffs.f_minus))
    shape = fp.shape + (2, 2)
    # S+ = |b><a| and S- = |a><b| are nilpotent: exp(i f S) = 1 + i f S
    ep = np.zeros(shape, dtype=complex)
    ep[..., 0, 0] = ep[..., 1, 1] = 1.0
    ep[..., 1, 0] = 1j * fp
    e3 = np.zeros(shape, dtype=complex)
    e3[..., 0, 0] = np.exp(-0.5j * f3)
    e3[..., 1, 1] = np.exp(0.5j * f3)
    em = np.zeros(shape, dtype=complex)
    em[..., 0, 0] = em[..., 1, 1] = 1.0
    em[..., 0, 1] = 1j * fm
    return ep @ e3 @ em


def riccati_rhs(f_plus, b3, omega_rabi: float, phi: float):
    """df+/dt implied by the two-level Hamiltonian:
    -h_ba - i (h_bb - h_aa) f+ - h_ab f+^2 with h_aa - h_bb = B3."""
    bp = 0.5 * omega_rabi * np.exp(-1j * phi)
    return -bp + 1j * b3 * f_plus - np.conj(bp) * f_plus**2


_FD8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def riccati_residual(traj: Trajectory, singular_tol: float = 1e-2):
    """Eighth-order central difference of f+ along a uniformly sampled
    trajectory compared with the Riccati right-hand side.

    Returns (times, residual, rhs) on interior samples; samples within four
    steps of a point with |<a|U|a>| < ``singular_tol`` are masked with NaN.
    """
    times = traj.times
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("riccati_residual needs uniformly spaced samples")
    uaa = traj.U[..., 0, 0]
    bad = np.abs(uaa) < singular_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        fp = -1j * traj.U[..., 1, 0] / uaa
    m = len(_FD8) // 2
    near = bad.copy()
    for k in range(1, m + 1):
        near[k:] |= bad[:-k]
        near[:-k] |= bad[k:]
    fp = np.where(near, np.nan, fp)
    inner = slice(m, times.size - m)
    deriv = sum(c * fp[k:times.size - 2 * m + k] for k, c in enumerate(_FD8) if c) / dt[0]
    rhs = riccati_rhs(fp[inner], traj.b3[inner], traj.omega_rabi, traj.phi)
    return times[inner], deriv - rhs, rhs


TRAJECTORY_HEADER = ["time", "p", "f_plus_re", "f_plus_im", "f_3_re", "f_3_im", "f_minus_re", "f_minus_im",
                     "u_aa_re", "u_aa_im", "u_ab_re", "u_ab_im", "u_ba_re", "u_ba_im", "u_bb_re", "u_bb_im"]


def write_trajectory_csv(traj: Trajectory, path, tol_singular: float = 1e-8):
    """Dump f+, f3, f- and matrix entries per (time, p); Gauss coefficients
    are blank where the decomposition is singular."""
    u = traj.U
    uaa = u[..., 0, 0]
    ok = np.abs(uaa) > tol_singular
    with np.errstate(divide="ignore", invalid="ignore"):
        fp = np.where(ok, -1j * u[..., 1, 0] / uaa, np.nan)
        f3 = np.where(ok, 2j * np.log(np.where(ok, uaa, 1.0)), np.nan)
        fm = np.where(ok, -1j * u[..., 0, 1] / uaa, np.nan)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for i, tau in enumerate(traj.times):
            for j, pj in enumerate(traj.momenta):
                row = [tau, pj]
                for val in (fp[i, j], f3[i, j], fm[i, j], u[i, j, 0, 0], u[i, j, 0, 1], u[i, j, 1, 0], u[i, j, 1, 1]):
                    if np.isnan(val):
                        row += ["", ""]
                    else:
                        row += [repr(float(val.real)), repr(float(val.imag))]
                w.writerow(row)
