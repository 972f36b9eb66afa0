"""Traveling-wave machinery: exact sech^2 waves and the Petviashvili solver.

A wave ``zeta(x - c_s t), v(x - c_s t)`` solves, per Fourier mode,
``S(k) (zeta, v)^ = kappa_gd (zeta v, v^2/2)^`` with::

    S(k) = [[c_s (1 + b k^2), -(kappa1 - a k^2)],
            [-kappa2 (1 - c k^2), c_s (1 + d k^2)]]

The Petviashvili iteration inverts ``S`` on a rescaled nonlinear term; the
rescaling factor ``m`` is a Rayleigh quotient that tends to 1 at a fixed
point.  Iterates may be accelerated by restarted minimal polynomial
extrapolation and constrained at the crest by the Toland manifold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .evolve import WaveState
from .model import ModelCoeffs, ModelDomainError, toland_f, toland_grad
from .spectral import Grid

WAVE_TYPES = ("CSW", "CSW-nonmonotone", "GSW", "PeriodicTW")


class NoExactSolution(ModelDomainError):
    pass


class DegenerateBranchMismatch(ModelDomainError):
    pass


class SingularMode(ArithmeticError):
    def __init__(self, modes):
        super().__init__(f"symbol matrix singular at wavenumbers {list(modes)}")
        self.modes = list(modes)


class PetviashviliError(RuntimeError):
    """Solver failure; ``wave`` holds the best iterate and its history."""

    def __init__(self, message, wave):
        super().__init__(message)
        self.wave = wave


class MaxItersExceeded(PetviashviliError):
    pass


class DivergenceDetected(PetviashviliError):
    pass


# ---------------------------------------------------------------------------
# exact solutions


@dataclass(frozen=True)
class ExactSech2:
    """zeta = 3 mu1 sech^2(sqrt(mu1/mu2)/2 (x - c_s t - x0)), v = B zeta."""

    B: float
    mu1: float
    mu2: float
    c_s: float
    coeffs: ModelCoeffs
    x0: float = 0.0

    @property
    def amplitude(self):
        return 3 * self.mu1

    @property
    def width(self):
        return 0.5 * math.sqrt(self.mu1 / self.mu2)

    def shifted(self, x0):
        return ExactSech2(self.B, self.mu1, self.mu2, self.c_s, self.coeffs, x0)

    def zeta(self, x, t=0.0, period=None):
        """Profile at time t; with ``period`` the centre is wrapped into it."""
        xi = np.asarray(x, dtype=float) - self.c_s * t - self.x0
        if period is not None:
            xi = (xi + period / 2) % period - period / 2
        return 3 * self.mu1 / np.cosh(self.width * xi) ** 2

    def v(self, x, t=0.0, period=None):
        return self.B * self.zeta(x, t, period)

    def zeta_xx(self, x, t=0.0, period=None):
        xi = np.asarray(x, dtype=float) - self.c_s * t - self.x0
        if period is not None:
            xi = (xi + period / 2) % period - period / 2
        w = self.width
        s2 = 1 / np.cosh(w * xi) ** 2
        return 3 * self.mu1 * w * w * (4 * s2 - 6 * s2 * s2)

    def u(self, x, t=0.0, beta=None, period=None):
        beta = self.coeffs.beta if beta is None else beta
        return self.B * (self.zeta(x, t, period) - beta * self.zeta_xx(x, t, period))


def exact_sech2(coeffs: ModelCoeffs, branch="generic", B=None, sign=1) -> ExactSech2:
    """Closed-form sech^2 solitary wave of a coefficient set.

    ``branch="degenerate"`` is the family with ``kappa1 (b - 2d) = a`` and
    ``c = a (delta + gamma)``, where ``B`` is free and must be supplied.
    ``sign`` selects the root of ``B**2`` (the wave with ``-B`` travels
    with ``-c_s``).
    """
    k = coeffs
    den = k.kappa1 * (k.b - 2 * k.d) - k.a
    on_branch = abs(den) <= 1e-13 * (abs(k.a) + k.kappa1 * (abs(k.b) + 2 * abs(k.d)))
    if branch == "generic":
        if on_branch:
            raise DegenerateBranchMismatch("kappa1 (b - 2d) = a: use the degenerate branch")
        B2 = 2 * k.kappa2 * (k.b - 2 * k.d - k.c) / den
        if not B2 > 0:
            raise NoExactSolution(f"B^2 = {B2} is not positive")
        Bv = sign * math.sqrt(B2)
        c_s = 2 * k.kappa2 * (k.c * k.kappa1 - k.a) / (den * Bv)
    elif branch == "degenerate":
        if not on_branch or abs(k.c - k.a * (k.delta + k.gamma)) > 1e-13 * (abs(k.a) + abs(k.c)):
            raise DegenerateBranchMismatch("coefficients are not on the degenerate branch")
        if B is None or B == 0:
            raise ValueError("degenerate branch needs a nonzero B")
        Bv = float(B)
        B2 = Bv * Bv
        c_s = (2 * k.kappa2 - k.kappa1 * B2) / Bv
    else:
        raise ValueError(f"unknown branch {branch!r}")
    if k.kappa_gd == 0:
        raise NoExactSolution("kappa_gd vanishes")
    mu1 = (k.kappa2 - k.kappa1 * B2) / (k.kappa_gd * B2)
    mu2 = ((k.a - k.b * k.kappa1) * B2 + 2 * k.b * k.kappa2) / (2 * k.kappa_gd * B2)
    if not mu1 * mu2 > 0:
        raise NoExactSolution(f"mu1 mu2 = {mu1 * mu2} is not positive")
    return ExactSech2(Bv, mu1, mu2, c_s, k)


def sample_exact(e: ExactSech2, grid: Grid, t=0.0) -> WaveState:
    """Exact wave on the grid as an evolvable state (zeta, v)."""
    if e.width * grid.L < 20:
        warnings.warn("domain too short for the sech^2 tails; periodic wrap error "
                      "exceeds 1e-12", stacklevel=2)
    period = 2 * grid.L
    return WaveState.from_values(grid, e.coeffs, e.zeta(grid.x, t, period),
                                 e.v(grid.x, t, period), t)


def traveling_residual(coeffs: ModelCoeffs, c_s, grid: Grid, zeta, v):
    """Max-norm residual of the traveling-wave system, derivatives spectral."""
    k = coeffs
    zxx = grid.diff_values(zeta, 2)
    vxx = grid.diff_values(v, 2)
    r1 = -c_s * (zeta - k.b * zxx) + k.kappa1 * v + k.a * vxx + k.kappa_gd * zeta * v
    r2 = -c_s * (v - k.d * vxx) + k.kappa2 * (zeta + k.c * zxx) + 0.5 * k.kappa_gd * v * v
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


# ---------------------------------------------------------------------------
# Petviashvili iteration


@dataclass(frozen=True)
class SymbolMatrix:
    s11: np.ndarray
    s12: np.ndarray
    s21: np.ndarray
    s22: np.ndarray

    @property
    def det(self):
        return self.s11 * self.s22 - self.s12 * self.s21

    def apply(self, zh, vh):
        return self.s11 * zh + self.s12 * vh, self.s21 * zh + self.s22 * vh

    def solve(self, fz, fv):
        det = self.det
        return ((self.s22 * fz - self.s12 * fv) / det,
                (self.s11 * fv - self.s21 * fz) / det)


def build_symbol_matrix(coeffs: ModelCoeffs, c_s, grid: Grid, tol=1e-12) -> SymbolMatrix:
    k = coeffs
    k2 = grid.kh**2
    S = SymbolMatrix(c_s * (1 + k.b * k2), -(k.kappa1 - k.a * k2),
                     -k.kappa2 * (1 - k.c * k2), c_s * (1 + k.d * k2))
    det = S.det
    scale = np.maximum(1.0, np.abs(S.s11 * S.s22) + np.abs(S.s12 * S.s21))
    bad = np.flatnonzero(np.abs(det) <= tol * scale)
    if bad.size:
        raise SingularMode(grid.kh[bad])
    return S


@dataclass(frozen=True)
class PetviashviliOptions:
    max_iters: int = 500
    tolerance: float = 1e-10
    mpe_cycle_width: int = 0
    exponent: float = 2.0
    projection_manifold: bool = False
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mpe_cycle_width < 0 or self.mpe_cycle_width == 1:
            raise ValueError("mpe_cycle_width must be 0 or >= 2")


@dataclass
class SolitaryWave:
    """Converged (or best) traveling-wave profile."""

    grid: Grid
    coeffs: ModelCoeffs
    c_s: float
    zeta: np.ndarray
    v_beta: np.ndarray
    residual_history: list
    m_history: list
    iterations: int
    converged: bool
    wave_type: Optional[str] = None
    info: dict = field(default_factory=dict)

    @property
    def beta(self):
        return self.coeffs.beta

    @property
    def u(self):
        g = self.grid
        return g.from_spectral(g.to_spectral(self.v_beta) * (1 + self.beta * g.kh**2))

    @property
    def residual(self):
        return self.residual_history[-1] if self.residual_history else math.nan

    @property
    def amplitude(self):
        """Signed extremum of zeta."""
        i = int(np.argmax(np.abs(self.zeta)))
        return float(self.zeta[i])

    def state(self, t=0.0, direction=1) -> WaveState:
        """Evolvable state; ``direction=-1`` gives the mirror wave (zeta, -v)."""
        return WaveState.from_values(self.grid, self.coeffs, self.zeta,
                                     direction * self.v_beta, t)


def _default_amplitude(coeffs, c_s):
    # the exact sech^2 amplitude when the closed-form wave has this speed
    try:
        e = exact_sech2(coeffs)
    except (ModelDomainError, ValueError):
        return 1.0
    return e.amplitude if abs(e.c_s - c_s) <= 1e-9 * abs(c_s) else 1.0


def sech2_guess(grid: Grid, amplitude=1.0, width=0.5, centers=(0.0,)):
    z = np.zeros(grid.N)
    period = 2 * grid.L
    for c in centers:
        xi = (grid.x - c + grid.L) % period - grid.L
        z += amplitude / np.cosh(width * xi) ** 2
    return z, z.copy()


class _Petviashvili:
    def __init__(self, coeffs, c_s, grid, opts):
        self.k = coeffs
        self.c_s = c_s
        self.g = grid
        self.opts = opts
        self.S = build_symbol_matrix(coeffs, c_s, grid)
        self.centre = grid.N // 2  # node x = 0

    def nonlinear(self, z, v):
        lam = self.k.kappa_gd
        return lam * z * v, 0.5 * lam * v * v

    def evaluate(self, z, v):
        """(m, RES, N-hat) at the iterate (z, v)."""
        g = self.g
        zh, vh = g.to_spectral(z), g.to_spectral(v)
        sz, sv = self.S.apply(zh, vh)
        sz, sv = g.from_spectral(sz), g.from_spectral(sv)
        nz, nv = self.nonlinear(z, v)
        num = np.dot(sz, z) + np.dot(sv, v)
        den = np.dot(nz, z) + np.dot(nv, v)
        res = math.sqrt(np.sum((sz - nz) ** 2) + np.sum((sv - nv) ** 2))
        m = num / den if den != 0 else math.nan
        return m, res, (g.to_spectral(nz), g.to_spectral(nv))

    def update(self, m, nhat):
        fac = abs(m) ** self.opts.exponent if self.opts.exponent != 2 else m * m
        zh, vh = self.S.solve(fac * nhat[0], fac * nhat[1])
        z = self.g.from_spectral(zh)
        v = self.g.from_spectral(vh)
        if self.opts.projection_manifold:
            z, v = self.project(z, v)
        return z, v

    def project(self, z, v):
        """Move the crest node onto {f = 0} along the gradient of f."""
        j = self.centre
        p = np.array([v[j], z[j]])
        gdir = np.array(toland_grad(self.k, self.c_s, *p))
        s = 0.0
        for _ in range(50):
            q = p + s * gdir
            fval = toland_f(self.k, self.c_s, *q)
            if abs(fval) <= 1e-15 * max(1.0, np.dot(q, q)):
                break
            slope = np.dot(toland_grad(self.k, self.c_s, *q), gdir)
            if slope == 0:
                break
            s -= fval / slope
        q = p + s * gdir
        z = z.copy()
        v = v.copy()
        v[j], z[j] = q
        return z, v


def mpe_extrapolate(X):
    """Minimal polynomial extrapolation of the columns of X (x_0..x_k).

    Solves ``min || U[:, :-1] c + U[:, -1] ||`` for the differences
    ``U = diff(X)`` by QR, then returns ``sum_j gamma_j x_j`` with
    ``gamma = [c, 1] / sum([c, 1])`` over ``x_0..x_{k-1}``.
    """
    U = np.diff(X, axis=1)
    if U.shape[1] < 2:
        return X[:, -1]
    Q, R = np.linalg.qr(U[:, :-1])
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= 1e-14 * max(diag.max(), 1e-300):
        return X[:, -1]
    c = np.linalg.solve(R, -(Q.T @ U[:, -1]))
    cf = np.append(c, 1.0)
    tot = cf.sum()
    if tot == 0 or not np.isfinite(tot):
        return X[:, -1]
    return X[:, :-1] @ (cf / tot)


def petviashvili_solve(coeffs: ModelCoeffs, c_s, grid: Grid, guess=None,
                       opts: Optional[PetviashviliOptions] = None,
                       raise_on_failure=True) -> SolitaryWave:
    """Traveling wave of speed ``c_s`` by the Petviashvili iteration.

    Parameters
    ----------
    guess : tuple of arrays, optional
        Initial (zeta, v) nodal values; defaults to a sech^2 bump.
    opts : PetviashviliOptions

    Returns
    -------
    SolitaryWave
        ``residual_history[n]`` and ``m_history[n]`` are RES and m at the
        n-th iterate; the returned profile is the last iterate evaluated.
    """
    opts = opts or PetviashviliOptions()
    if guess is None:
        guess = sech2_guess(grid, _default_amplitude(coeffs, c_s))
    z = np.array(guess[0], dtype=float)
    v = np.array(guess[1], dtype=float)
    if z.shape != (grid.N,) or v.shape != (grid.N,):
        raise ValueError("guess arrays must match the grid")
    if not (np.any(z != 0) or np.any(v != 0)):
        raise ValueError("guess must be nonzero")
    P = _Petviashvili(coeffs, c_s, grid, opts)
    if opts.projection_manifold:
        z, v = P.project(z, v)
    res_hist, m_hist = [], []
    best = (math.inf, z, v)
    width = opts.mpe_cycle_width
    cycle = width if width else 5
    cycle_start_res = None
    X = [np.concatenate([z, v])] if width else []
    converged = False
    failure = None

    def make_wave(zz, vv, n):
        w = SolitaryWave(grid, coeffs, c_s, zz, vv, res_hist, m_hist, n, converged)
        w.wave_type = classify_profile(w)
        w.info.update(best_residual=best[0], options=opts.__dict__.copy())
        return w

    n = 0
    for n in range(opts.max_iters + 1):
        m, res, nhat = P.evaluate(z, v)
        res_hist.append(res)
        m_hist.append(m)
        if res < best[0]:
            best = (res, z, v)
        if res <= opts.tolerance:
            converged = True
            break
        if not np.isfinite(res) or not np.isfinite(m) or m == 0:
            failure = DivergenceDetected
            break
        if n % cycle == 0:
            if (cycle_start_res is not None and n >= 2 * cycle
                    and res > opts.divergence_factor * cycle_start_res):
                failure = DivergenceDetected
                break
            cycle_start_res = res
        if n == opts.max_iters:
            failure = MaxItersExceeded
            break
        z, v = P.update(m, nhat)
        if width:
            X.append(np.concatenate([z, v]))
            if len(X) == width + 1:
                s = mpe_extrapolate(np.column_stack(X))
                z, v = s[: grid.N], s[grid.N:]
                if opts.projection_manifold:
                    z, v = P.project(z, v)
                X = [np.concatenate([z, v])]
    if failure is not None:
        zb, vb = best[1], best[2]
        w = make_wave(zb, vb, n)
        raise_it = failure(f"{failure.__name__} after {n} iterations "
                           f"(best RES {best[0]:.3e})", w)
        if raise_on_failure:
            raise raise_it
        return w
    return make_wave(z, v, n)


def petviashvili_step(w: SolitaryWave, opts: Optional[PetviashviliOptions] = None):
    """One unaccelerated iteration applied to a profile; returns (zeta, v)."""
    opts = opts or PetviashviliOptions()
    P = _Petviashvili(w.coeffs, w.c_s, w.grid, opts)
    m, _, nhat = P.evaluate(w.zeta, w.v_beta)
    return P.update(m, nhat)


# ---------------------------------------------------------------------------
# profile classification


def _half_range(a):
    return 0.5 * (np.max(a) - np.min(a)) if a.size else 0.0


def classify_profile(w, rel_tol=1e-8) -> str:
    """Wave type from the behaviour of zeta near the domain ends.

    PeriodicTW when the oscillation in the outer 10% of the domain is at
    least half the amplitude; GSW when it exceeds ``rel_tol * amplitude``
    and does not decay between the 80-90% and 90-100% bands;
    CSW-nonmonotone when decaying with at least two sign changes; CSW
    otherwise.
    """
    zeta = np.asarray(w.zeta)
    x = w.grid.x
    L = w.grid.L
    amp = float(np.max(np.abs(zeta)))
    if amp == 0:
        return "CSW"
    ax = np.abs(x)
    outer = zeta[ax >= 0.9 * L]
    inner = zeta[(ax >= 0.8 * L) & (ax < 0.9 * L)]
    osc_out = max(_half_range(outer), float(np.max(np.abs(outer))))
    if _half_range(outer) >= 0.5 * amp:
        return "PeriodicTW"
    if osc_out > rel_tol * amp:
        osc_in = float(np.max(np.abs(inner)))
        if osc_out >= 0.5 * osc_in:
            return "GSW"
    significant = zeta[np.abs(zeta) > 1e-10 * amp]
    changes = int(np.sum(np.signbit(significant[1:]) != np.signbit(significant[:-1])))
    return "CSW-nonmonotone" if changes >= 2 else "CSW"
