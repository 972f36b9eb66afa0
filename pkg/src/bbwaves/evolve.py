"""Semidiscrete Fourier-Galerkin system and its 4th-order symplectic integrator.

The evolved unknowns are the modes of the interface elevation ``zeta`` and
of the velocity variable ``v`` (the ``v_beta`` velocity; the physical
velocity ``u = (1 - beta d_xx) v`` is reconstructed only for output).
Per mode::

    zeta' = ik/(1+b k^2) [(-kappa1 + a k^2) v - lam (zeta v)^]
    v'    = ik/(1+d k^2) [-kappa2 (1 - c k^2) zeta - lam/2 (v^2)^]

Time stepping composes three implicit midpoint steps with weights
``b1, 1 - 2 b1, b1``, ``b1 = 1 / (2 - 2**(1/3))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .model import ModelCoeffs
from .spectral import Grid

B1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
B2 = 1.0 - 2.0 * B1
COMPOSITION_WEIGHTS = (B1, B2, B1)


class FixedPointNotConverged(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(f"implicit stage did not converge after {iterations} "
                         f"iterations (relative change {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class BlowUp(FloatingPointError):
    def __init__(self, step, t):
        super().__init__(f"non-finite state at step {step} (t={t})")
        self.step = step
        self.t = t


@dataclass
class WaveState:
    """Mode arrays of (zeta, v) at time t on a grid."""

    t: float
    zeta_hat: np.ndarray
    v_hat: np.ndarray
    grid: Grid
    coeffs: ModelCoeffs

    @classmethod
    def from_values(cls, grid, coeffs, zeta, v, t=0.0):
        zh = grid.project(grid.to_spectral(np.asarray(zeta, dtype=float)))
        vh = grid.project(grid.to_spectral(np.asarray(v, dtype=float)))
        return cls(float(t), zh, vh, grid, coeffs)

    @property
    def zeta(self):
        return self.grid.from_spectral(self.zeta_hat)

    @property
    def v(self):
        return self.grid.from_spectral(self.v_hat)

    def u(self, beta=None):
        """Physical velocity (1 - beta d_xx) v."""
        beta = self.coeffs.beta if beta is None else beta
        return self.grid.from_spectral(self.v_hat * (1 + beta * self.grid.kh**2))

    def copy(self, **changes):
        kw = dict(t=self.t, zeta_hat=self.zeta_hat.copy(), v_hat=self.v_hat.copy(),
                  grid=self.grid, coeffs=self.coeffs)
        kw.update(changes)
        return WaveState(**kw)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.zeta_hat)) and np.all(np.isfinite(self.v_hat)))


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    fp_tolerance: float = 1e-12
    fp_max_iters: int = 200
    cfl_alpha: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.fp_tolerance > 0:
            raise ValueError("fp_tolerance must be positive")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be >= 1")


class Semidiscretization:
    """Fourier symbols of the semidiscrete system on a grid.

    ``nonlinear=False`` drops the quadratic terms (lam = 0).
    """

    def __init__(self, grid: Grid, coeffs: ModelCoeffs, nonlinear: bool = True):
        self.grid = grid
        self.coeffs = coeffs
        self.nonlinear = nonlinear
        k2 = grid.kh**2
        ik = grid.ik
        inv_b = 1.0 / (1.0 + coeffs.b * k2)
        inv_d = 1.0 / (1.0 + coeffs.d * k2)
        self.lin_zv = ik * (-coeffs.kappa1 + coeffs.a * k2) * inv_b
        self.lin_vz = ik * (-coeffs.kappa2 * (1.0 - coeffs.c * k2)) * inv_d
        lam = coeffs.kappa_gd if nonlinear else 0.0
        self.nl_z = -lam * ik * inv_b
        self.nl_v = -0.5 * lam * ik * inv_d

    def nonlinear_terms(self, zh, vh):
        if not self.nonlinear:
            return np.zeros_like(zh), np.zeros_like(vh)
        zv, vv = self.grid.dealiased_pair(zh, vh)
        return self.nl_z * zv, self.nl_v * vv

    def rhs_modes(self, zh, vh):
        nz, nv = self.nonlinear_terms(zh, vh)
        return self.lin_zv * vh + nz, self.lin_vz * zh + nv

    def linear_multiplier(self, h):
        """Eigenvalue pair of one implicit midpoint step on the linear part."""
        ab = self.lin_zv * self.lin_vz
        root = np.sqrt(ab.astype(complex))
        return [(1 + h * s / 2) / (1 - h * s / 2) for s in (root, -root)]


def rhs(s: WaveState, nonlinear: bool = True):
    """Time derivative (zeta_hat', v_hat') of a state."""
    return Semidiscretization(s.grid, s.coeffs, nonlinear).rhs_modes(s.zeta_hat, s.v_hat)


class Integrator:
    """Implicit midpoint and its fourth-order composition on one system.

    Each implicit stage solves ``(I - h L/2) m = y + h/2 N(m)`` for the
    midpoint ``m`` by fixed-point iteration on the nonlinear term, with the
    linear part ``L`` inverted exactly per mode; then ``y+ = 2 m - y``.
    """

    def __init__(self, system: Semidiscretization, config: StepperConfig):
        self.system = system
        self.config = config
        self.fp_iterations = 0
        self.substeps = 0
        self.max_fp_iterations = 0
        self._cache = {}

    def _solver(self, h):
        key = float(h)
        if key not in self._cache:
            s = self.system
            det = 1.0 - 0.25 * h * h * s.lin_zv * s.lin_vz
            self._cache[key] = (0.5 * h * s.lin_zv / det, 0.5 * h * s.lin_vz / det, 1.0 / det)
            if len(self._cache) > 16:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def imr(self, zh, vh, h):
        s = self.system
        cz, cv, inv = self._solver(h)
        tol = self.config.fp_tolerance
        half = 0.5 * h
        mz, mv = zh, vh
        prev = math.inf
        it = 0
        for it in range(1, self.config.fp_max_iters + 1):
            nz, nv = s.nonlinear_terms(mz, mv)
            rz = zh + half * nz
            rv = vh + half * nv
            new_z = inv * rz + cz * rv
            new_v = cv * rz + inv * rv
            scale = math.sqrt(np.vdot(new_z, new_z).real + np.vdot(new_v, new_v).real)
            dz, dv = new_z - mz, new_v - mv
            change = math.sqrt(np.vdot(dz, dz).real + np.vdot(dv, dv).real)
            rel = change / scale if scale > 0 else change
            mz, mv = new_z, new_v
            if not math.isfinite(rel):
                break  # non-finite state; run() reports the blow-up
            # stop at the tolerance or when round-off stalls the iteration
            if rel <= tol or (rel < 1e-13 and rel >= prev):
                break
            prev = rel
        else:
            raise FixedPointNotConverged(it, rel)
        self.fp_iterations += it
        self.max_fp_iterations = max(self.max_fp_iterations, it)
        self.substeps += 1
        return 2.0 * mz - zh, 2.0 * mv - vh

    def composition(self, zh, vh, dt):
        for w in COMPOSITION_WEIGHTS:
            zh, vh = self.imr(zh, vh, w * dt)
        return zh, vh


def imr_substep(s: WaveState, h_sub, config: Optional[StepperConfig] = None,
                nonlinear=True) -> WaveState:
    config = config or StepperConfig(dt=abs(h_sub) or 1.0)
    integ = Integrator(Semidiscretization(s.grid, s.coeffs, nonlinear), config)
    zh, vh = integ.imr(s.zeta_hat, s.v_hat, h_sub)
    return s.copy(t=s.t + h_sub, zeta_hat=zh, v_hat=vh)


def composition_step(s: WaveState, dt, config: Optional[StepperConfig] = None,
                     nonlinear=True) -> WaveState:
    config = config or StepperConfig(dt=abs(dt))
    integ = Integrator(Semidiscretization(s.grid, s.coeffs, nonlinear), config)
    zh, vh = integ.composition(s.zeta_hat, s.v_hat, dt)
    return s.copy(t=s.t + dt, zeta_hat=zh, v_hat=vh)


@dataclass
class RunInfo:
    steps: int
    dt: float
    dt_adjusted: bool
    cfl_product: float
    fp_iterations: int
    max_fp_iterations: int
    observed_steps: list = field(default_factory=list)


def resolve_steps(T, dt):
    """Number of steps M and the step dt' <= dt with M dt' = T."""
    if T == 0:
        return 0, dt, False
    M = int(math.ceil(T / dt - 1e-9))
    M = max(M, 1)
    new = T / M
    return M, new, abs(new - dt) > 1e-14 * dt


def default_stride(M):
    return max(1, int(math.ceil(M / 400)))


def run(initial: WaveState, T: float, config: StepperConfig,
        observers: Iterable[Callable[[WaveState, int], None]] = (),
        stride: Optional[int] = None, nonlinear: bool = True, direction: int = 1):
    """Advance ``initial`` by ``T`` with composition steps.

    Observers are called as ``obs(state, step)`` at step 0, every ``stride``
    steps and at the final step.  ``direction=-1`` integrates backwards.

    Returns
    -------
    (WaveState, RunInfo)
    """
    grid = initial.grid
    M, dt, adjusted = resolve_steps(T, config.dt)
    if adjusted:
        warnings.warn(f"dt adjusted from {config.dt} to {dt} so that T = M dt", stacklevel=2)
    cfl = grid.N * dt
    if config.cfl_alpha is not None and cfl > config.cfl_alpha:
        raise ValueError(f"N dt = {cfl} exceeds cfl_alpha = {config.cfl_alpha}")
    observers = list(observers)
    stride = stride or default_stride(M)
    integ = Integrator(Semidiscretization(grid, initial.coeffs, nonlinear), config)
    zh, vh = initial.zeta_hat.copy(), initial.v_hat.copy()
    t0 = initial.t
    state = initial.copy()
    info = RunInfo(M, dt, adjusted, cfl, 0, 0)

    def notify(step):
        info.observed_steps.append(step)
        for obs in observers:
            obs(state, step)

    notify(0)
    sdt = direction * dt
    for n in range(1, M + 1):
        zh, vh = integ.composition(zh, vh, sdt)
        if not (np.all(np.isfinite(zh)) and np.all(np.isfinite(vh))):
            raise BlowUp(n, t0 + n * sdt)
        if observers and (n % stride == 0 or n == M):
            state = initial.copy(t=t0 + n * sdt, zeta_hat=zh, v_hat=vh)
            notify(n)
    state = initial.copy(t=t0 + M * sdt, zeta_hat=zh, v_hat=vh)
    info.fp_iterations = integ.fp_iterations
    info.max_fp_iterations = integ.max_fp_iterations
    return state, info
