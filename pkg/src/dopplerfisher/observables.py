"""Diagnostics of the driven atom: populations, momentum-resolved transfer
kernels, final-state fidelity, joint momentum-population distributions and
phase-space moments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import K0, MASS, MomentumGrid, PhysParams, SpinorState, build_grid, ho_eigenstate
from .numerics import csum, fourier_pair, simpson_integrate
from .propagators import abc_coefficients, require_matched_chirp


@dataclass(frozen=True)
class KProfiles:
    """K_a = A^2 + B^2 and K_b = C^2 at argument p + hbar k0/2."""

    grid: MomentumGrid
    K_a: np.ndarray = field(repr=False)
    K_b: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class JointDistribution:
    """Probability densities Pr(s, p) in p for s = a, b."""

    grid: MomentumGrid
    P_a_of_p: np.ndarray = field(repr=False)
    P_b_of_p: np.ndarray = field(repr=False)

    def mass(self) -> float:
        return (csum(self.P_a_of_p) + csum(self.P_b_of_p)) * self.grid.dp


@dataclass(frozen=True)
class ComponentMoments:
    weight: float
    mean_p: float
    var_p: float
    mean_z: float
    var_z: float
    cov_zp: float


@dataclass(frozen=True)
class Moments:
    a: ComponentMoments
    b: ComponentMoments
    total: ComponentMoments


def population_a(state: SpinorState) -> float:
    return csum(np.abs(state.amp_a) ** 2) * state.grid.dp


def population_b(state: SpinorState) -> float:
    return csum(np.abs(state.amp_b) ** 2) * state.grid.dp


def k_profiles(params: PhysParams, grid: MomentumGrid, t: float) -> KProfiles:
    """Momentum-resolved probabilities of ending in a or b after the pulse."""
    require_matched_chirp(params)
    a_, b_, c_, _ = abc_coefficients(grid.p + 0.5 * K0, params, t)
    return KProfiles(grid, a_ * a_ + b_ * b_, c_ * c_)


def kernel_population_a(params: PhysParams, n: int, t: float, grid: MomentumGrid) -> float:
    """Population of a as the weighted kernel integral of P_n(p) K_a(p)."""
    psi = ho_eigenstate(n, params.sigma_p, grid).amp.real
    return simpson_integrate(psi * psi * k_profiles(params, grid, t).K_a, grid.dp).value


def resolving_dp(t: float, points: int = 16) -> float | None:
    """Largest spacing giving ``points`` samples per period of the fastest
    pulse-induced oscillation in p.

    Products of the pulse coefficients oscillate at most like Delta(p) t,
    whose slope in p is bounded by t k0 / m.
    """
    if t <= 0:
        return None
    return 2.0 * math.pi / (points * t * K0 / MASS)


def quadrature_grid(params: PhysParams, n: int, t: float, points: int = 16) -> MomentumGrid:
    """Oscillator-covering grid fine enough for pulse-weighted integrals."""
    return build_grid(params, n, dp_max=resolving_dp(t, points))


def final_state_fidelity(params: PhysParams, n: int, t: float, grid: MomentumGrid | None = None) -> float:
    """Overlap of the Doppler-pulse state with the Doppler-free one.

    The e^{+-i k0 z/2} conjugation makes both propagators diagonal in
    momentum, so F = |int P_n(p) [cos(Omega t/2)(A - iB) + sin(Omega t/2) C]
    dp|^2 with A, B, C at p + hbar k0/2.
    """
    require_matched_chirp(params)
    if grid is None:
        grid = quadrature_grid(params, n, t)
    psi = ho_eigenstate(n, params.sigma_p, grid).amp.real
    a_, b_, c_, _ = abc_coefficients(grid.p + 0.5 * K0, params, t)
    half = 0.5 * params.omega_rabi * t
    kern = math.cos(half) * a_ + math.sin(half) * c_
    w = psi * psi
    re = simpson_integrate(w * kern, grid.dp).value
    im = simpson_integrate(-w * math.cos(half) * b_, grid.dp).value
    return min(1.0, re * re + im * im)


def joint_distribution(state: SpinorState) -> JointDistribution:
    return JointDistribution(state.grid, np.abs(state.amp_a) ** 2, np.abs(state.amp_b) ** 2)


def _component_moments(amp: np.ndarray, grid: MomentumGrid) -> ComponentMoments:
    w = np.abs(amp) ** 2
    mass = csum(w) * grid.dp
    if mass == 0:
        nan = float("nan")
        return ComponentMoments(0.0, nan, nan, nan, nan, nan)
    p = grid.p
    mean_p = csum(w * p) * grid.dp / mass
    var_p = csum(w * (p - mean_p) ** 2) * grid.dp / mass
    psi_z = fourier_pair(amp, "forward", grid.dp)
    wz = np.abs(psi_z) ** 2
    z = grid.z
    mean_z = csum(wz * z) * grid.dz / mass
    var_z = csum(wz * (z - mean_z) ** 2) * grid.dz / mass
    # symmetrized <zp + pz>/2 - <z><p>, with p psi(z) = -i hbar dpsi/dz done spectrally
    p_psi_z = fourier_pair(p * amp, "forward", grid.dp)
    cov = float(np.real(np.sum(np.conj(psi_z) * (z - mean_z) * p_psi_z))) * grid.dz / mass
    return ComponentMoments(mass, mean_p, var_p, mean_z, var_z, cov)


def _combine(parts: list[ComponentMoments]) -> ComponentMoments:
    parts = [c for c in parts if c.weight > 0]
    weight = sum(c.weight for c in parts)
    mp = sum(c.weight * c.mean_p for c in parts) / weight
    mz = sum(c.weight * c.mean_z for c in parts) / weight
    vp = sum(c.weight * (c.var_p + (c.mean_p - mp) ** 2) for c in parts) / weight
    vz = sum(c.weight * (c.var_z + (c.mean_z - mz) ** 2) for c in parts) / weight
    cov = sum(c.weight * (c.cov_zp + (c.mean_z - mz) * (c.mean_p - mp)) for c in parts) / weight
    return ComponentMoments(weight, mp, vp, mz, vz, cov)


def grid_moments(state: SpinorState) -> Moments:
    """Momentum moments by direct sums, position moments through the
    Fourier-conjugate representation, for each component and in total."""
    a = _component_moments(state.amp_a, state.grid)
    b = _component_moments(state.amp_b, state.grid)
    return Moments(a, b, _combine([a, b]))


def contrast_envelope(values, window: int) -> np.ndarray:
    """max - min of ``values`` over a trailing window of ``window`` samples."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    for i in range(v.size):
        seg = v[max(0, i - window + 1):i + 1]
        out[i] = seg.max() - seg.min()
    return out


TIMESERIES_HEADER = ["omega_t", "t", "P_a", "fidelity", "dF_Q", "dF_Q_rel", "contrast"]


def write_timeseries_csv(path, rows) -> None:
    """Rows of (omega_t, t, P_a, fidelity, dF_Q, dF_Q_rel, contrast)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_HEADER)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


DISTRIBUTION_HEADER = ["s", "p", "density"]


def write_distribution_csv(path, dist: JointDistribution) -> None:
    """(s, p, density) rows; the first line records the grid spacing as
    ``# dp=<value>`` so that density * dp is the bin probability."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# dp={dist.grid.dp!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DISTRIBUTION_HEADER)
        for label, dens in (("a", dist.P_a_of_p), ("b", dist.P_b_of_p)):
            for p, d in zip(dist.grid.p, dens):
                w.writerow([label, repr(float(p)), repr(float(d))])
