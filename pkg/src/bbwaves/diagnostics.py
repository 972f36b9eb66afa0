"""Observers for evolved states: invariants, peak tracking, errors, rate tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .evolve import WaveState
from .waves import ExactSech2


@dataclass(frozen=True)
class InvariantRecord:
    t: float
    I_h: float
    E_h: float
    l2_zeta: float
    l2_v: float

    def as_dict(self):
        return asdict(self)


def invariants(s: WaveState) -> InvariantRecord:
    """Discrete momentum and energy of a state.

    ``I_h = h sum(U V + b DU DV)``;
    ``E_h = h sum(kappa2 U^2/2 + kappa1 V^2/2 - a (DV)^2 - kappa2 c (DU)^2
    + kappa_gd U V^2/2)`` with ``U = zeta``, ``V = v`` at the nodes and
    spectral derivatives.  Both are conserved when ``b == d``.
    """
    g, k = s.grid, s.coeffs
    U, V = s.zeta, s.v
    DU = g.from_spectral(g.diff(s.zeta_hat))
    DV = g.from_spectral(g.diff(s.v_hat))
    h = g.h
    I = h * np.sum(U * V + k.b * DU * DV)
    E = h * np.sum(0.5 * k.kappa2 * U**2 + 0.5 * k.kappa1 * V**2 - k.a * DV**2
                   - k.kappa2 * k.c * DU**2 + 0.5 * k.kappa_gd * U * V**2)
    return InvariantRecord(s.t, float(I), float(E), g.l2(U), g.l2(V))


def v_from_u(grid, u, beta):
    """Invert u = (1 - beta d_xx) v mode-wise."""
    return grid.from_spectral(grid.to_spectral(u) / (1 + beta * grid.kh**2))


# ---------------------------------------------------------------------------
# peak tracking


@dataclass(frozen=True)
class PeakTrack:
    t: float
    amplitude: float
    location: float
    unwrapped: float
    speed: float
    phase_error: float
    multi_peak: bool

    def as_dict(self):
        return asdict(self)


def _quadratic_peak(f, j, h):
    n = f.size
    fm, f0, fp = f[(j - 1) % n], f[j], f[(j + 1) % n]
    den = fm - 2 * f0 + fp
    if den == 0:
        return 0.0, f0
    off = 0.5 * (fm - fp) / den
    return off * h, f0 - 0.25 * (fm - fp) * off


def _spectral_peak(grid, coeffs, x_guess, polarity):
    # Newton on the derivative of the trigonometric interpolant
    k = grid.kh.copy()
    k[grid.nyquist] = 0.0
    c = coeffs.copy()
    c[grid.nyquist] = 0.0
    x = x_guess
    for _ in range(30):
        e = np.exp(1j * k * x)
        d1 = np.sum(1j * k * c * e).real
        d2 = np.sum(-(k**2) * c * e).real
        if d2 == 0:
            break
        step = d1 / d2
        x -= step
        if abs(step) < 1e-14 * max(1.0, grid.L):
            break
    val = np.sum(c * np.exp(1j * k * x)).real
    return x, val


def _wrap(x, L):
    return (x + L) % (2 * L) - L


def _multi_peak(f, j, amp):
    # largest local extremum outside the half-amplitude window around j
    n = f.size
    lo = j
    while f[(lo - 1) % n] >= 0.5 * amp and (j - lo) < n:
        lo -= 1
    hi = j
    while f[(hi + 1) % n] >= 0.5 * amp and (hi - j) < n:
        hi += 1
    mask = np.ones(n, dtype=bool)
    mask[np.arange(lo, hi + 1) % n] = False
    left, right = np.roll(f, 1), np.roll(f, -1)
    is_ext = (f >= left) & (f >= right) & mask
    if not np.any(is_ext):
        return False
    second = np.max(f[is_ext])
    return bool(10 * second > amp)


def track_peak(s: WaveState, polarity=1, prev: Optional[PeakTrack] = None,
               reference=None, method="quadratic") -> PeakTrack:
    """Locate the dominant extremum of zeta.

    Parameters
    ----------
    polarity : +1 or -1
        Track the maximum (elevation) or minimum (depression).
    prev : PeakTrack, optional
        Previous record; used for unwrapping and the backward-difference speed.
    reference : (x0, c_ref), optional
        Reference trajectory for the phase error.
    method : {"quadratic", "spectral"}
        Three-point parabola, or Newton refinement on the Fourier interpolant.
    """
    g = s.grid
    f = polarity * s.zeta
    j = int(np.argmax(f))
    amp = f[j]
    if method == "spectral":
        dx, _ = _quadratic_peak(f, j, g.h)
        loc, val = _spectral_peak(g, polarity * s.zeta_hat, g.x[j] + dx, polarity)
        loc = _wrap(loc, g.L)
    else:
        dx, val = _quadratic_peak(f, j, g.h)
        loc = _wrap(g.x[j] + dx, g.L)
    multi = _multi_peak(f, j, amp) if amp > 0 else True
    if prev is None:
        unwrapped, speed = loc, math.nan
    else:
        base = prev.unwrapped
        unwrapped = base + _wrap(loc - _wrap(base, g.L), g.L)
        dt = s.t - prev.t
        speed = (unwrapped - base) / dt if dt != 0 else math.nan
    phase = math.nan
    if reference is not None:
        x0, cref = reference
        phase = unwrapped - (x0 + cref * s.t)
    return PeakTrack(s.t, float(polarity * val), float(loc), float(unwrapped),
                     float(speed), float(phase), multi)


def find_peaks(values, x, count=2, polarity=1, min_separation=None):
    """The ``count`` largest separated local extrema (index, x, value)."""
    f = polarity * np.asarray(values)
    n = f.size
    left, right = np.roll(f, 1), np.roll(f, -1)
    idx = np.flatnonzero((f > left) & (f >= right))
    idx = idx[np.argsort(f[idx])[::-1]]
    sep = min_separation if min_separation is not None else 0.0
    period = (x[1] - x[0]) * n
    chosen = []
    for i in idx:
        if all(abs(_wrap(x[i] - x[c], period / 2)) > sep for c in chosen):
            chosen.append(i)
        if len(chosen) == count:
            break
    return [(int(i), float(x[i]), float(polarity * f[i])) for i in chosen]


# ---------------------------------------------------------------------------
# errors and rates


@dataclass(frozen=True)
class ExactError:
    """Discrete L2 errors against an exact wave: absolute and relative."""

    zeta_abs: float
    v_abs: float
    zeta_rel: float
    v_rel: float


def error_vs_exact(s: WaveState, e: ExactSech2) -> ExactError:
    g = s.grid
    period = 2 * g.L
    ze = e.zeta(g.x, s.t, period)
    ve = e.v(g.x, s.t, period)
    dz = g.l2(s.zeta - ze)
    dv = g.l2(s.v - ve)
    return ExactError(dz, dv, dz / g.l2(ze), dv / g.l2(ve))


def error_vs_exact_spectral(s: WaveState, e: ExactSech2) -> ExactError:
    """Same quantities computed from Fourier coefficients (Parseval)."""
    g = s.grid
    period = 2 * g.L
    ze = g.to_spectral(e.zeta(g.x, s.t, period))
    ve = g.to_spectral(e.v(g.x, s.t, period))
    dz = g.l2_spectral(s.zeta_hat - ze)
    dv = g.l2_spectral(s.v_hat - ve)
    return ExactError(dz, dv, dz / g.l2_spectral(ze), dv / g.l2_spectral(ve))


def observed_rate(e1, e2, dt1, dt2):
    if e1 <= 0 or e2 <= 0:
        return math.nan
    return math.log(e1 / e2) / math.log(dt1 / dt2)


@dataclass
class ConvergenceRow:
    N: int
    dt: float
    errors: Optional[dict]
    rates: dict
    failed: Optional[str] = None

    def as_dict(self):
        d = dict(N=self.N, dt=self.dt, failed=self.failed)
        for key, val in (self.errors or {}).items():
            d[key] = val
        for key, val in self.rates.items():
            d[f"rate_{key}"] = val
        return d


class _Guarded:
    # picklable wrapper so cells can run in worker processes
    def __init__(self, cell):
        self.cell = cell

    def __call__(self, job):
        try:
            return self.cell(*job), None
        except Exception as exc:  # noqa: BLE001 - cell failure is reported
            return None, f"{type(exc).__name__}: {exc}"


def convergence_table(cell: Callable[[int, float], dict], dts: Sequence[float],
                      grids: Sequence[int], mapper=map):
    """Errors and observed orders over a (N, dt) grid.

    ``cell(N, dt)`` returns a mapping of error names to values; exceptions
    mark the cell failed.  ``mapper`` may be a parallel map (the cell must
    then be picklable).
    """
    if len(dts) < 1:
        raise ValueError("need at least one dt")
    jobs = [(N, dt) for N in grids for dt in dts]
    results = list(mapper(_Guarded(cell), jobs))
    rows = []
    for gi, N in enumerate(grids):
        prev = None
        for di, dt in enumerate(dts):
            errs, fail = results[gi * len(dts) + di]
            rates = {}
            if errs is not None and prev is not None and prev[0] is not None:
                rates = {key: observed_rate(prev[0][key], errs[key], prev[1], dt)
                         for key in errs if key in prev[0]}
            rows.append(ConvergenceRow(N, dt, errs, rates, fail))
            prev = (errs, dt)
    return rows
