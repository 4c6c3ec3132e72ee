"""Unit system, physical parameters, momentum grids and harmonic-oscillator
external states.

Everything is expressed in recoil units: hbar = k0 = E0 = 1, so the atomic
mass is m = hbar^2 k0^2 / (2 E0) = 1/2. Momenta are in hbar k0, energies and
angular frequencies in E0 (/hbar), times in hbar/E0.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, GridOverflow, GridTooNarrow, MissingKey, NonFiniteValue, NonPositiveValue

HBAR = 1.0
K0 = 1.0
E0 = 1.0
MASS = HBAR**2 * K0**2 / (2.0 * E0)

DEFAULT_SAFETY = 8.0
DEFAULT_CAP = 2**22

PARAM_KEYS = ("omega_rabi", "delta0", "phi", "g", "chirp_rate", "sigma_p", "omega_trap", "t")
CONFIG_KEYS = PARAM_KEYS + ("n", "grid.safety", "grid.cap")
_REQUIRED = ("omega_rabi", "delta0", "phi", "g", "sigma_p", "omega_trap", "t")


@dataclass(frozen=True)
class PhysParams:
    """Physical constants and pulse parameters (recoil units).

    ``chirp_rate`` is the sweep rate alpha in delta(t) = delta0 - alpha t;
    the matched value k0 g freezes the Doppler-shifted detuning in time.
    """

    omega_rabi: float
    delta0: float
    phi: float
    g: float
    chirp_rate: float
    sigma_p: float
    omega_trap: float
    t: float

    @property
    def mass(self) -> float:
        return MASS

    @property
    def chirp_matched(self) -> bool:
        return math.isclose(self.chirp_rate, K0 * self.g, rel_tol=1e-12, abs_tol=1e-15)

    def replace(self, **changes) -> "PhysParams":
        """Copy with changes; a matched chirp follows ``g`` unless given."""
        if "g" in changes and "chirp_rate" not in changes and self.chirp_matched:
            changes["chirp_rate"] = K0 * changes["g"]
        return build_params({**dataclasses.asdict(self), **changes})

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_params(config: Mapping) -> PhysParams:
    """Validate a flat key-value map into :class:`PhysParams`.

    Keys outside the parameter set (``n``, ``grid.*``) are ignored here;
    unknown keys are rejected by :func:`load_config`.
    """
    missing = [k for k in _REQUIRED if k not in config]
    if missing:
        raise MissingKey(f"missing parameter(s): {', '.join(missing)}")
    values = {}
    for key in PARAM_KEYS:
        if key not in config or config[key] is None:
            continue
        try:
            v = float(config[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be a number, got {config[key]!r}") from exc
        if not math.isfinite(v):
            raise NonFiniteValue(f"{key} must be finite, got {v}")
        values[key] = v
    for key in ("omega_rabi", "sigma_p", "omega_trap"):
        if values[key] <= 0:
            raise NonPositiveValue(f"{key} must be > 0, got {values[key]}")
    if values["t"] < 0:
        raise NonPositiveValue(f"t must be >= 0, got {values['t']}")
    values.setdefault("chirp_rate", K0 * values["g"])
    return PhysParams(**values)


def matched_trap_frequency(sigma_p: float) -> float:
    """Trap frequency whose ground state has momentum width ``sigma_p``."""
    return sigma_p**2 / (MASS * HBAR)


def load_config(path, extra_keys=()) -> dict:
    """Read a UTF-8 JSON configuration into a flat key map.

    Both flat (``"grid.safety"``) and nested (``{"grid": {"safety": ..}}``)
    spellings are accepted. ``extra_keys`` extends the accepted key set.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be an object")
    return flatten_config(raw, extra_keys)


def flatten_config(raw: Mapping, extra_keys=()) -> dict:
    allowed = set(CONFIG_KEYS) | set(extra_keys)
    flat = {}
    for key, value in raw.items():
        if isinstance(value, Mapping) and key not in allowed:
            for sub, v in value.items():
                flat[f"{key}.{sub}"] = v
        else:
            flat[key] = value
    unknown = sorted(set(flat) - allowed)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    return flat


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform momentum grid p_j = p_min + j dp, j = 0..n_points-1.

    ``n_points`` is a power of two and p_min = -(n_points/2) dp, so p = 0 is
    a grid point and the FFT-conjugate position grid has spacing
    dz = 2 pi / (n_points dp).
    """

    p_min: float
    n_points: int
    dp: float

    @property
    def p_max(self) -> float:
        return self.p_min + (self.n_points - 1) * self.dp

    @cached_property
    def p(self) -> np.ndarray:
        p = self.p_min + self.dp * np.arange(self.n_points)
        p.setflags(write=False)
        return p

    @property
    def dz(self) -> float:
        return 2.0 * math.pi / (self.n_points * self.dp)

    @cached_property
    def z(self) -> np.ndarray:
        z = self.dz * (np.arange(self.n_points) - self.n_points // 2)
        z.setflags(write=False)
        return z

    @property
    def z_half_width(self) -> float:
        return self.dz * (self.n_points // 2)

    def bins(self, momentum: float) -> int | None:
        """Number of bins spanned by ``momentum`` if commensurate, else None."""
        k = momentum / self.dp
        r = round(k)
        return int(r) if abs(k - r) < 1e-9 else None


def build_grid(params: PhysParams, n_max: int, safety: float = DEFAULT_SAFETY, cap: int = DEFAULT_CAP,
               z_half_width: float | None = None, dp_max: float | None = None,
               p_half_width: float | None = None) -> MomentumGrid:
    """Smallest commensurate grid covering oscillator states up to ``n_max``.

    Half-width: safety sqrt(n_max + 1/2) sigma_p + 2 hbar k0 + m |g| t. The
    spacing is the largest 2^-j not exceeding sigma_p/16 (and ``dp_max``, and
    pi / ``z_half_width`` when a position window is requested), so hbar k0
    and hbar k0 / 2 are whole numbers of bins.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if safety < 6:
        raise ValueError("safety must be >= 6")
    half = safety * math.sqrt(n_max + 0.5) * params.sigma_p + 2.0 * K0 + MASS * abs(params.g) * params.t
    if p_half_width is not None:
        half = max(half, p_half_width)
    limit = min(params.sigma_p / 16.0, 0.5 * K0)
    if dp_max is not None:
        limit = min(limit, dp_max)
    if z_half_width is not None:
        limit = min(limit, math.pi / z_half_width)
    dp = 2.0 ** math.floor(math.log2(limit))
    half_bins = math.ceil(half / dp) + 1
    n_points = 1 << max(3, math.ceil(math.log2(2 * half_bins)))
    if n_points > cap:
        raise GridOverflow(f"grid needs {n_points} points (> cap {cap})")
    return MomentumGrid(p_min=-(n_points // 2) * dp, n_points=n_points, dp=dp)


@dataclass(frozen=True)
class ExternalWavefunction:
    grid: MomentumGrid
    amp: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.amp, dtype=complex).view()
        a.setflags(write=False)
        object.__setattr__(self, "amp", a)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amp) ** 2) * self.grid.dp)


@dataclass(frozen=True)
class SpinorState:
    """Two-component state: amplitudes on internal states a and b over p."""

    grid: MomentumGrid
    amp_a: np.ndarray = field(repr=False)
    amp_b: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("amp_a", "amp_b"):
            a = np.asarray(getattr(self, name), dtype=complex).view()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_external(cls, psi: ExternalWavefunction, internal: str = "a") -> "SpinorState":
        zero = np.zeros_like(psi.amp)
        if internal == "a":
            return cls(psi.grid, psi.amp, zero)
        return cls(psi.grid, zero, psi.amp)

    def stacked(self) -> np.ndarray:
        return np.stack([self.amp_a, self.amp_b])

    def norm(self) -> float:
        return float((np.sum(np.abs(self.amp_a) ** 2) + np.sum(np.abs(self.amp_b) ** 2)) * self.grid.dp)


def hermite_functions(n_max: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite functions h_0..h_n_max at ``x`` (weight e^{-x^2/2}).

    Uses the normalized three-term recurrence
    h_k = sqrt(2/k) x h_{k-1} - sqrt((k-1)/k) h_{k-2}, which never forms the
    raw polynomials.
    """
    x = np.asarray(x, dtype=float)
    h = np.empty((n_max + 1,) + x.shape)
    h[0] = math.pi**-0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        h[1] = math.sqrt(2.0) * x * h[0]
    for k in range(2, n_max + 1):
        h[k] = math.sqrt(2.0 / k) * x * h[k - 1] - math.sqrt((k - 1) / k) * h[k - 2]
    return h


def ho_momentum_amplitude(n: int, sigma_p: float, p: np.ndarray, derivative: bool = False):
    """psi_n(p) = h_n(p / sigma_p) / sqrt(sigma_p), optionally with d/dp.

    The derivative uses the ladder identity
    h_n' = sqrt(n/2) h_{n-1} - sqrt((n+1)/2) h_{n+1}.
    """
    x = np.asarray(p, dtype=float) / sigma_p
    h = hermite_functions(n + 1, x)
    amp = h[n] / math.sqrt(sigma_p)
    if not derivative:
        return amp
    d = -math.sqrt((n + 1) / 2.0) * h[n + 1]
    if n > 0:
        d = d + math.sqrt(n / 2.0) * h[n - 1]
    return amp, d / sigma_p**1.5


def ho_eigenstate(n: int, sigma_p: float, grid: MomentumGrid) -> ExternalWavefunction:
    """Momentum-space oscillator eigenstate with ground width ``sigma_p``.

    psi_0(p) is proportional to exp(-p^2 / (2 sigma_p^2)), so the momentum
    variance is (n + 1/2) sigma_p^2. Raises GridTooNarrow when the grid misses
    more than 1e-12 of the probability.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    amp = ho_momentum_amplitude(n, sigma_p, grid.p)
    missing = 1.0 - float(np.sum(amp * amp)) * grid.dp
    if abs(missing) > 1e-12:
        raise GridTooNarrow(f"grid holds only {1 - missing:.3e} of |psi_{n}|^2")
    return ExternalWavefunction(grid, amp.astype(complex))


def analytic_moments(n: int, sigma_p: float) -> tuple[float, float]:
    """(Var z, Var p) of the n-th oscillator state of momentum width sigma_p."""
    if n < 0:
        raise ValueError("n must be >= 0")
    var_p = (n + 0.5) * sigma_p**2
    var_z = (n + 0.5) * HBAR**2 / sigma_p**2
    return var_z, var_p


def initial_state(n: int, params: PhysParams, grid: MomentumGrid) -> SpinorState:
    """|psi_n> |a>."""
    return SpinorState.from_external(ho_eigenstate(n, params.sigma_p, grid), "a")
