"""Shared numerical kernels: quadrature, grid Fourier transforms, finite
differences, scalar maximization and the deterministic parallel map."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import JobError, NoConvergence, NonPowerOfTwo, TooFewSamples

WORKERS_ENV = "DOPPLERFISHER_WORKERS"


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    points_used: int


_CSUM_BLOCK = 256


def csum(values) -> float:
    """Compensated sum of a real array.

    Short arrays are summed exactly rounded. Long ones are reduced pairwise
    in blocks whose partial sums are then added exactly, which keeps the
    error near eps * sum|x| while avoiding the cost of exact summation over
    values spanning hundreds of decades.
    """
    x = np.ravel(np.asarray(values, dtype=float))
    if x.size <= 4 * _CSUM_BLOCK:
        return math.fsum(x.tolist())
    cut = x.size - x.size % _CSUM_BLOCK
    parts = x[:cut].reshape(-1, _CSUM_BLOCK).sum(axis=1).tolist()
    return math.fsum(parts + x[cut:].tolist())


def simpson_weights(n: int, dx: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` uniform samples.

    An even sample count closes with a Simpson 3/8 panel on the last
    three intervals.
    """
    if n < 3:
        raise TooFewSamples(f"Simpson needs at least 3 samples, got {n}")
    w = np.zeros(n)
    if n % 2 == 1:
        w[0:n:2] = 2.0
        w[1:n:2] = 4.0
        w[0] = w[-1] = 1.0
        return w * dx / 3.0
    if n == 4:
        return np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * dx / 8.0
    m = n - 3
    w[:m] = simpson_weights(m, dx)
    w[m - 1:] += np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * dx / 8.0
    return w


def _simpson_value(samples: np.ndarray, dx: float) -> float:
    return csum(simpson_weights(samples.size, dx) * samples)


def simpson_integrate(samples, dx: float) -> QuadratureResult:
    """Composite Simpson rule with a subsampling error estimate.

    The error estimate is the difference to the same rule applied to every
    other sample, floored at the rounding level of the weighted sum.
    """
    f = np.asarray(samples, dtype=float)
    if f.ndim != 1 or f.size < 3:
        raise TooFewSamples(f"Simpson needs at least 3 samples, got {f.size}")
    value = _simpson_value(f, dx)
    coarse = f[::2]
    if coarse.size >= 3:
        err = abs(value - _simpson_value(coarse, 2.0 * dx))
    else:
        err = abs(value - trapezoid_integrate(f, dx))
    roundoff = 1e-15 * csum(np.abs(f)) * dx
    return QuadratureResult(value, max(err, roundoff), int(f.size))


def trapezoid_integrate(samples, dx: float) -> float:
    f = np.asarray(samples, dtype=float)
    if f.size < 2:
        raise TooFewSamples("trapezoid needs at least 2 samples")
    return dx * (csum(f) - 0.5 * (f[0] + f[-1]))


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fourier_pair(amplitudes, direction: str, dx: float) -> np.ndarray:
    """Unitary continuous-normalized Fourier transform on a centered grid.

    Samples sit at ``(j - N/2) * dx``. ``"forward"`` maps momentum to
    position, psi(z) = (2 pi)^-1/2 sum_p psi(p) e^{ipz} dp; ``"inverse"``
    maps back. The output grid spacing is ``2 pi / (N dx)``. Transforms the
    last axis, so stacked components are handled in one call.
    """
    a = np.asarray(amplitudes, dtype=complex)
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise NonPowerOfTwo(f"grid length {n} is not a power of two")
    shifted = np.fft.ifftshift(a, axes=-1)
    if direction == "forward":
        out = np.fft.ifft(shifted, axis=-1) * (n * dx / math.sqrt(2 * math.pi))
    elif direction == "inverse":
        out = np.fft.fft(shifted, axis=-1) * (dx / math.sqrt(2 * math.pi))
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")
    return np.fft.fftshift(out, axes=-1)


def central_diff_richardson(f: Callable, x0: float, h0: float, rtol: float = 1e-8,
                            max_halvings: int = 12, noise: float | None = None):
    """Central difference at ``x0`` refined by step halving and Richardson
    extrapolation.

    ``f`` may return a scalar or an array; convergence is judged on the max
    norm. Returns ``(derivative, error)``. The error is the spread between the
    last two diagonal extrapolants, and never less than the noise
    amplification ``noise / h`` of the finest step. When ``noise`` is None it
    is taken as machine epsilon times the largest sampled magnitude.
    """
    rows: list[list] = []
    peak = 0.0
    prev = None
    h = h0
    for i in range(max_halvings + 1):
        fp, fm = np.asarray(f(x0 + h)), np.asarray(f(x0 - h))
        peak = max(peak, float(np.max(np.abs(fp))), float(np.max(np.abs(fm))))
        row = [(fp - fm) / (2.0 * h)]
        for j in range(1, i + 1):
            row.append(row[j - 1] + (row[j - 1] - rows[i - 1][j - 1]) / (4.0 ** j - 1.0))
        rows.append(row)
        est = row[-1]
        if prev is not None:
            spread = float(np.max(np.abs(est - prev)))
            scale = float(np.max(np.abs(est)))
            eps = np.finfo(float).eps * peak if noise is None else noise
            err = max(spread, eps / h)
            if spread <= rtol * max(scale, 1e-300):
                return (est if est.ndim else float(est)), err
        prev = est
        h *= 0.5
    raise NoConvergence(f"central difference did not reach rtol={rtol} after {max_halvings} halvings")


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f: Callable[[float], float], a: float, b: float, xtol: float = 1e-5):
    """Golden-section search for the maximum of a unimodal ``f`` on [a, b]."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        # >= keeps the left point on ties, biasing toward smaller x
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    if fc >= fd:
        return c, fc
    return d, fd


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit argument, else the environment variable, else 1."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def _run_indexed(payload):
    index, fn, task = payload
    try:
        return index, fn(task), None
    except Exception as exc:  # noqa: BLE001 - re-raised with the index
        return index, None, exc


def parallel_map(fn: Callable, tasks: Sequence, workers: int | None = None) -> list:
    """Map a pure ``fn`` over ``tasks`` and return results in task order.

    Each task is computed by the same code on one process, so results are
    bit-identical for any worker count. The first failing task (lowest
    index) is re-raised as :class:`JobError` carrying its index.
    """
    tasks = list(tasks)
    if not tasks:
        return []
    workers = resolve_workers(workers)
    payloads = [(i, fn, t) for i, t in enumerate(tasks)]
    if workers == 1 or len(tasks) == 1:
        raw = [_run_indexed(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            raw = list(pool.map(_run_indexed, payloads, chunksize=1))
    raw.sort(key=lambda r: r[0])
    for index, _, exc in raw:
        if exc is not None:
            raise JobError(index, exc) from exc
    return [r[1] for r in raw]
