"""Parameter algebra for the Boussinesq/Boussinesq internal-wave family.

A system in the family is fixed by the density ratio ``gamma``, the depth
ratio ``delta`` and four dispersion coefficients ``(a, b, c, d)``.  This
module derives the coefficients from the modelling parameters, classifies
coefficient sets (linear admissibility, nonlinear well-posedness, solitary
wave existence) and evaluates the closed-form quantities used to predict
traveling-wave behaviour: characteristic roots, phase/group speed profiles,
the Toland manifold and the decay rates of classical solitary waves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

DZERO_TOL = 1e-12
CURVE_TOL = 1e-12


class ModelDomainError(ValueError):
    """Parameters outside the domain where a formula is defined."""


class DegenerateNonlinearity(ModelDomainError):
    """The nonlinearity coefficient vanishes (delta**2 == gamma)."""


# ---------------------------------------------------------------------------
# parameters and coefficients


@dataclass(frozen=True)
class PhysicalParams:
    """Density/depth ratios and the three modelling parameters.

    ``surface_wave`` must be set explicitly to allow ``gamma == 0``.
    """

    gamma: float
    delta: float
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta: float = 0.0
    surface_wave: bool = False

    def __post_init__(self):
        lo_ok = self.gamma > 0 or (self.surface_wave and self.gamma == 0)
        if not (lo_ok and self.gamma < 1):
            raise ModelDomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.delta > 0:
            raise ModelDomainError(f"delta must be positive, got {self.delta}")
        if self.alpha1 < 0:
            raise ModelDomainError(f"alpha1 must be >= 0, got {self.alpha1}")
        if self.alpha2 > 1:
            raise ModelDomainError(f"alpha2 must be <= 1, got {self.alpha2}")
        if self.beta < 0:
            raise ModelDomainError(f"beta must be >= 0, got {self.beta}")


def _check_ratios(gamma, delta):
    if not (0 <= gamma < 1):
        raise ModelDomainError(f"gamma must lie in [0, 1), got {gamma}")
    if not delta > 0:
        raise ModelDomainError(f"delta must be positive, got {delta}")


def s_const(gamma, delta):
    """S(gamma, delta) = (1 + gamma delta) / (3 delta (gamma + delta))."""
    return (1 + gamma * delta) / (3 * delta * (gamma + delta))


def sound_speed(gamma, delta):
    """Long-wave linear speed sqrt((1 - gamma) / (delta + gamma))."""
    if gamma >= 1:
        raise ModelDomainError(f"gamma must be < 1, got {gamma}")
    if delta + gamma <= 0:
        raise ModelDomainError("delta + gamma must be positive")
    return math.sqrt((1 - gamma) / (delta + gamma))


@dataclass(frozen=True)
class ModelCoeffs:
    """Dispersion quadruple with the derived constants of the system.

    Parameters
    ----------
    a, b, c, d : float
        Dispersion coefficients.
    gamma, delta : float
        Density and depth ratios.
    beta : float, optional
        Modelling parameter relating ``u`` and ``v_beta``.  When not known
        (quadruple given directly) it defaults to ``c + d``.
    """

    a: float
    b: float
    c: float
    d: float
    gamma: float
    delta: float
    beta: Optional[float] = None
    kappa1: float = field(init=False)
    kappa2: float = field(init=False)
    kappa_gd: float = field(init=False)
    c_sound: float = field(init=False)
    s_const: float = field(init=False)

    def __post_init__(self):
        _check_ratios(self.gamma, self.delta)
        g, dl = self.gamma, self.delta
        object.__setattr__(self, "kappa1", 1.0 / (dl + g))
        object.__setattr__(self, "kappa2", 1.0 - g)
        object.__setattr__(self, "kappa_gd", (dl * dl - g) / (dl + g) ** 2)
        object.__setattr__(self, "c_sound", sound_speed(g, dl))
        object.__setattr__(self, "s_const", s_const(g, dl))
        if self.beta is None:
            object.__setattr__(self, "beta", self.c + self.d)

    @property
    def lam(self):
        """Nonlinearity coefficient (alias of ``kappa_gd``)."""
        return self.kappa_gd

    @property
    def consistency_residual(self):
        """(delta + gamma) a + b + c + d - S; zero for derived coefficients."""
        return (self.delta + self.gamma) * self.a + self.b + self.c + self.d - self.s_const

    def replace(self, **changes):
        kw = dict(a=self.a, b=self.b, c=self.c, d=self.d, gamma=self.gamma,
                  delta=self.delta, beta=self.beta)
        kw.update(changes)
        return ModelCoeffs(**kw)

    def as_dict(self):
        return dict(a=self.a, b=self.b, c=self.c, d=self.d, gamma=self.gamma,
                    delta=self.delta, beta=self.beta, kappa1=self.kappa1,
                    kappa2=self.kappa2, kappa_gd=self.kappa_gd,
                    c_sound=self.c_sound, s_const=self.s_const,
                    consistency_residual=self.consistency_residual)


def derive_coeffs(p: PhysicalParams) -> ModelCoeffs:
    """Dispersion coefficients from the physical/modelling parameters."""
    g, dl = p.gamma, p.delta
    S = s_const(g, dl)
    a = ((1 - p.alpha1) * (1 + g * dl) - 3 * dl * p.beta * (dl + g)) / (3 * dl * (g + dl) ** 2)
    b = p.alpha1 * S
    c = p.beta * p.alpha2
    d = p.beta * (1 - p.alpha2)
    return ModelCoeffs(a, b, c, d, g, dl, beta=p.beta)


def coeffs_from_quadruple(a, b, c, d, gamma, delta, beta=None, check=True):
    """Build coefficients from a user quadruple.

    Quadruples violating the consistency identity are accepted; with
    ``check`` set the identity residual is returned alongside.

    Returns
    -------
    ModelCoeffs or (ModelCoeffs, float)
    """
    coeffs = ModelCoeffs(a, b, c, d, gamma, delta, beta=beta)
    if check:
        return coeffs, coeffs.consistency_residual
    return coeffs


def modelling_params(coeffs: ModelCoeffs):
    """Invert the coefficient formulas: (alpha1, alpha2, beta).

    Only meaningful for quadruples satisfying the consistency identity.
    ``alpha2`` is None when ``c + d == 0``.
    """
    g, dl = coeffs.gamma, coeffs.delta
    alpha1 = 3 * dl * (dl + g) * coeffs.b / (1 + g * dl)
    beta = coeffs.c + coeffs.d
    alpha2 = coeffs.c / beta if beta != 0 else None
    return alpha1, alpha2, beta


# ---------------------------------------------------------------------------
# classification


def classify_linear(k: ModelCoeffs) -> str:
    a, b, c, d = k.a, k.b, k.c, k.d
    if a <= 0 and c <= 0 and b >= 0 and d >= 0:
        return "C1"
    tie = c == a * (k.delta + k.gamma) and c > 0
    if tie and b >= 0 and d >= 0:
        return "C2"
    if tie and b == d and b < 0:
        return "C3"
    return "IllPosed"


def classify_wellposed(k: ModelCoeffs) -> Optional[str]:
    """Well-posedness case (i)..(vii) of a C1 quadruple, exact signs."""
    if classify_linear(k) != "C1":
        return None
    a, b, c, d = k.a, k.b, k.c, k.d
    bp, dp = b > 0, d > 0
    an, cn = a < 0, c < 0
    az, cz = a == 0, c == 0
    if bp and dp and az and cz:
        return "i"
    if bp and dp and an and cn:
        return "ii"
    if b == 0 and dp and an and cn:
        return "iii"
    if az and cz and ((b == 0 and dp) or (bp and d == 0)):
        return "iv"
    if bp and dp and ((az and cn) or (an and cz)):
        return "v"
    if b == 0 and dp and an and cz:
        return "vi"
    if (bp and d == 0 and an and cz) or (b == 0 and dp and az and cn):
        return "vii"
    return None


GSW_CASES = ("A1", "A2")
CSW_CASES = ("A3", "A4", "A5", "A6")


@dataclass(frozen=True)
class Classification:
    linear_case: str
    wellposed_case: Optional[str]
    nft_case: Optional[str]
    d_det: float
    A: Optional[float]
    B: Optional[float]
    region: Optional[str]
    c_s: float

    @property
    def predicted_type(self):
        if self.nft_case in GSW_CASES:
            return "GSW"
        if self.nft_case in CSW_CASES:
            return "CSW"
        return None

    def as_dict(self):
        return dict(linear_case=self.linear_case, wellposed_case=self.wellposed_case,
                    nft_case=self.nft_case, d_det=self.d_det, A=self.A, B=self.B,
                    region=self.region, c_s=self.c_s, predicted_type=self.predicted_type)


def d_determinant(k: ModelCoeffs, c_s):
    return k.b * k.d * c_s**2 - (1 - k.gamma) * k.a * k.c


def bifurcation_ab(k: ModelCoeffs, c_s):
    """(A, B) of the characteristic equation, or None when D vanishes."""
    D = d_determinant(k, c_s)
    if abs(D) <= DZERO_TOL:
        return None
    cg2 = k.c_sound**2
    A = (c_s**2 - cg2) / D
    B = ((k.b + k.d) * c_s**2 + (k.c + k.a / k.kappa1) * cg2) / D
    return A, B


def ba_region(A, B, tol=CURVE_TOL):
    """Region label of a point in the (B, A) plane.

    Regions ``"1"``..``"4"``; points within ``tol`` of a bifurcation curve
    are labelled ``"C0"``..``"C3"`` (``"C0C1"`` at the origin).
    """
    if abs(A) <= tol:
        if B > tol:
            return "C0"
        if B < -tol:
            return "C1"
        return "C0C1"
    if A < 0:
        return "3"
    r = 2 * math.sqrt(A)
    if abs(B + r) <= tol:
        return "C2"
    if abs(B - r) <= tol:
        return "C3"
    if B > r:
        return "2"
    if B < -r:
        return "4"
    return "1"


def _nft_table(k: ModelCoeffs):
    a, b, c, d = k.a, k.b, k.c, k.d
    if a < 0 and c < 0 and b == 0 and d > 0:
        return "A1"
    if a < 0 and c < 0 and b > 0 and d > 0:
        split = b * d - a * c / k.kappa1
        if split < 0:
            return "A2"
        if split > 0:
            return "A3"
        return None
    if a == 0 and c < 0 and b > 0 and d > 0:
        return "A4"
    if a < 0 and c == 0 and b > 0 and d > 0:
        return "A5"
    if a == 0 and c == 0 and b > 0 and d > 0:
        return "A6"
    return None


def classify_nft(k: ModelCoeffs, c_s) -> Classification:
    """Solitary-wave existence case and (B, A)-plane region at speed ``c_s``."""
    lin = classify_linear(k)
    wp = classify_wellposed(k)
    D = d_determinant(k, c_s)
    ab = bifurcation_ab(k, c_s) if lin == "C1" else None
    if lin != "C1":
        case = None
    elif ab is None:
        case = "DZero"
    else:
        case = _nft_table(k)
    A, B = ab if ab is not None else (None, None)
    region = ba_region(A, B) if ab is not None else None
    return Classification(lin, wp, case, D, A, B, region, c_s)


def quartic_roots(A, B):
    """Roots of lam**4 - B lam**2 + A = 0 via the quadratic in lam**2."""
    disc = complex(B * B - 4 * A)
    sq = np.sqrt(disc)
    # avoid cancellation in the smaller root
    big = (B + sq) / 2 if B >= 0 else (B - sq) / 2
    small = A / big if (big != 0 and A != 0) else 0j
    out = []
    for z in (big, small):
        r = np.sqrt(complex(z))
        out.extend([r, -r])
    return np.array(out, dtype=complex)


def characteristic_roots(k: ModelCoeffs, c_s):
    ab = bifurcation_ab(k, c_s)
    if ab is None:
        raise ModelDomainError("D vanishes at this speed (DZero)")
    return quartic_roots(*ab)


# ---------------------------------------------------------------------------
# dispersion analysis


@dataclass(frozen=True)
class DispersionProfile:
    """Local phase/group speed functions phi, psi of a coefficient set.

    ``phi(x)`` is evaluated at ``x = k**2``; the phase speeds of the linear
    waves seen in a frame moving with speed ``c_s`` are
    ``-c_s +- c_sound * phi(k**2)``, the group velocities use ``psi``.
    """

    coeffs: ModelCoeffs
    c_s: float
    a_tilde: float
    p1: float
    p2: float
    p3: float
    phi_star: float
    x_star: Optional[float]
    x: Optional[np.ndarray] = None
    phi_values: Optional[np.ndarray] = None
    psi_values: Optional[np.ndarray] = None

    def _factors(self, x):
        k = self.coeffs
        x = np.asarray(x, dtype=float)
        num = (1 - self.a_tilde * x) * (1 - k.c * x)
        den = (1 + k.b * x) * (1 + k.d * x)
        return x, num, den

    def phi(self, x):
        x, num, den = self._factors(x)
        if np.any(den == 0):
            raise ModelDomainError("1 + b x or 1 + d x vanishes")
        rad = num / den
        if np.any(rad < 0):
            raise ModelDomainError("negative radicand in phi")
        return np.sqrt(rad)

    def dphi(self, x):
        k = self.coeffs
        x = np.asarray(x, dtype=float)
        P = self.p1 * x**2 + self.p2 * x - self.p3
        return P / (2 * self.phi(x) * (1 + k.b * x) ** 2 * (1 + k.d * x) ** 2)

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        return 2 * x * self.dphi(x) + self.phi(x)

    def phase_speeds(self, kk):
        p = self.phi(np.asarray(kk, dtype=float) ** 2)
        cg = self.coeffs.c_sound
        return -self.c_s + cg * p, -self.c_s - cg * p

    def group_velocities(self, kk):
        p = self.psi(np.asarray(kk, dtype=float) ** 2)
        cg = self.coeffs.c_sound
        return -self.c_s + cg * p, -self.c_s - cg * p


def dispersion_profile(k: ModelCoeffs, c_s=0.0, x=None) -> DispersionProfile:
    at = k.a / k.kappa1
    b, c, d = k.b, k.c, k.d
    p1 = at * c * (b + d) + b * d * (at + c)
    p2 = 2 * (at * c - b * d)
    p3 = at + b + c + d
    if b * d > 0:
        ratio = at * c / (b * d)
        phi_star = math.sqrt(ratio) if ratio >= 0 else math.nan
    else:
        phi_star = math.inf
    x_star = None
    if p1 != 0:
        roots = np.roots([p1, p2, -p3])
        pos = sorted(r.real for r in roots if abs(r.imag) < 1e-14 and r.real > 0)
        x_star = pos[0] if pos else None
    elif p2 != 0 and p3 / p2 > 0:
        x_star = p3 / p2
    prof = DispersionProfile(k, c_s, at, p1, p2, p3, phi_star, x_star)
    if x is not None:
        x = np.asarray(x, dtype=float)
        prof = DispersionProfile(k, c_s, at, p1, p2, p3, phi_star, x_star,
                                 x, prof.phi(x), prof.psi(x))
    return prof


def cc_speed_bound(k: ModelCoeffs):
    """Speed bound for coercivity of the energy, or None if not applicable."""
    if not (k.b == k.d and k.b > 0 and k.a < 0 and k.c < 0):
        return None
    return min(k.kappa2 * abs(k.c) / k.b, abs(k.a) / (2 * k.b))


# ---------------------------------------------------------------------------
# Toland manifold


def toland_f(k: ModelCoeffs, c_s, v, zeta):
    """f(v, zeta) whose zero set holds the profile's (v, zeta) orbit."""
    return (-k.kappa1 * v**2 - k.kappa_gd * zeta * v**2 - k.kappa2 * zeta**2
            + 2 * c_s * zeta * v) / c_s


def toland_grad(k: ModelCoeffs, c_s, v, zeta):
    """Gradient (df/dv, df/dzeta)."""
    fv = (-2 * k.kappa1 * v - 2 * k.kappa_gd * zeta * v + 2 * c_s * zeta) / c_s
    fz = (-k.kappa_gd * v**2 - 2 * k.kappa2 * zeta + 2 * c_s * v) / c_s
    return fv, fz


def speed_from_amplitude(k: ModelCoeffs, zeta0, v0):
    """Speed implied by the crest values (v0, zeta0) on the Toland manifold."""
    mu = zeta0 / v0
    return (k.kappa1 + k.kappa_gd * zeta0 + k.kappa2 * mu**2) / (2 * mu)


@dataclass(frozen=True)
class TolandSegment:
    """Crest candidates in the (v, zeta) plane."""

    P1: tuple
    P2: tuple
    polarity: str
    directions: tuple


def _polarity(k, c_s):
    if c_s > 0:
        return "elevation" if (c_s - k.c_sound) * k.kappa_gd > 0 else "depression"
    return "elevation" if k.kappa_gd < 0 else "depression"


def _form_zeros(A, Bq, C):
    # angles in [0, pi) where A cos^2 + 2 Bq cos sin + C sin^2 vanishes
    R = math.hypot((A - C) / 2, Bq)
    mid = (A + C) / 2
    if R == 0 or abs(mid) > R:
        return []
    ph = math.atan2(Bq, (A - C) / 2)
    w = math.acos(-mid / R)
    return sorted({((ph + w) / 2) % math.pi, ((ph - w) / 2) % math.pi})


def _null_directions(k, c_s):
    # Q(v, zeta) of the linearised energy; first direction nearest the v axis
    ths = _form_zeros(-k.a / c_s, -k.b, -(1 - k.gamma) * k.c / c_s)
    if not ths:
        raise ModelDomainError("quadratic form has no null directions")
    dirs = [(math.cos(t), math.sin(t)) for t in ths]
    dirs.sort(key=lambda e: abs(e[1]))
    return tuple(dirs)


def _toland_loop(k, c_s):
    """Polar description r(th) of the closed loop of {f = 0} through 0."""
    def q(th):
        cv, sz = math.cos(th), math.sin(th)
        return -k.kappa1 * cv**2 - k.kappa2 * sz**2 + 2 * c_s * sz * cv

    def g(th):
        return -k.kappa_gd * math.sin(th) * math.cos(th) ** 2

    zs = _form_zeros(-k.kappa1, c_s, -k.kappa2)
    if len(zs) != 2:
        raise ModelDomainError("zero set of f has no loop at this speed")
    t0, t1 = zs
    for lo, hi in ((t0, t1), (t1, t0 + math.pi), (t0 - math.pi, t1 - math.pi)):
        grid = np.linspace(lo, hi, 201)[1:-1]
        gv = np.array([g(t) for t in grid])
        rv = np.array([-q(t) for t in grid]) / np.where(gv == 0, np.nan, gv)
        if np.all(np.isfinite(rv)) and np.all(rv > 0) and np.all(np.sign(gv) == np.sign(gv[0])):
            return lo, hi, (lambda th: -q(th) / g(th))
    raise ModelDomainError("zero set of f has no bounded loop")


def _crest_on_direction(k, c_s, direction, n_scan=2000):
    lo, hi, r = _toland_loop(k, c_s)

    def point(th):
        rr = r(th)
        return rr * math.cos(th), rr * math.sin(th)

    def h(th):
        fv, fz = toland_grad(k, c_s, *point(th))
        return fv * direction[0] + fz * direction[1]

    ths = np.linspace(lo, hi, n_scan + 2)[1:-1]
    vals = [h(t) for t in ths]
    found = [point(brentq(h, ths[i], ths[i + 1], xtol=1e-15))
             for i in range(len(ths) - 1) if np.sign(vals[i]) != np.sign(vals[i + 1])]
    if not found:
        return (0.0, 0.0)
    return max(found, key=lambda p: math.hypot(*p))


def toland_segment(k: ModelCoeffs, c_s) -> TolandSegment:
    """Points P1, P2 bounding the crest values and the predicted polarity.

    Closed form for ``a == c == 0, b == d > 0``; for other ``b == d``
    quadruples the crest candidates are located numerically along the null
    directions of the linearised energy form.
    """
    if k.kappa_gd == 0:
        raise DegenerateNonlinearity("kappa_gd vanishes (delta**2 == gamma)")
    if c_s == 0:
        raise ModelDomainError("c_s must be nonzero")
    if k.b != k.d or k.b <= 0:
        raise ModelDomainError("toland_segment requires b == d > 0")
    pol = _polarity(k, c_s)
    cg = k.c_sound
    if k.a == 0 and k.c == 0:
        u1 = (c_s**2 - cg**2) / (c_s * k.kappa_gd)
        P1 = (u1, c_s * u1 / k.kappa2) if c_s > 0 else (0.0, 0.0)
        u1p = 2 * (c_s - cg) / k.kappa_gd
        u2p = math.sqrt(k.kappa1 / k.kappa2) * u1p
        return TolandSegment(P1, (u1p, u2p), pol, ((1.0, 0.0), (0.0, 1.0)))
    dirs = _null_directions(k, c_s)
    P1 = _crest_on_direction(k, c_s, dirs[0])
    P2 = _crest_on_direction(k, c_s, dirs[1])
    return TolandSegment(P1, P2, pol, dirs)


# ---------------------------------------------------------------------------
# symbol determinant and decay rates


@dataclass(frozen=True)
class DeltaPolynomial:
    delta0: float
    delta1: float
    delta2: float
    r_minus: Optional[float]
    r_plus: Optional[float]

    def __call__(self, x):
        """Delta as a polynomial in x = k**2."""
        return self.delta2 * x**2 + self.delta1 * x + self.delta0


def delta_polynomial(k: ModelCoeffs, c_s) -> DeltaPolynomial:
    """Coefficients of det S(k) = D2 k^4 + D1 k^2 + D0 and decay rates.

    Decay rates are reported only where ``r**2`` is real and nonnegative.
    With ``D2 == 0`` the single root of the linear polynomial is reported
    as ``r_minus``.
    """
    cg2 = k.c_sound**2
    d0 = c_s**2 - cg2
    d1 = c_s**2 * (k.b + k.d) + cg2 * (k.c + k.a / k.kappa1)
    d2 = c_s**2 * k.b * k.d - (1 - k.gamma) * k.a * k.c

    def rate(x):
        if x is None or abs(x.imag) > 0 or x.real < 0:
            return None
        return math.sqrt(x.real)

    if d2 == 0:
        x = complex(-d0 / d1) if d1 != 0 else None
        return DeltaPolynomial(d0, d1, d2, rate(x), None)
    disc = d1 * d1 - 4 * d0 * d2
    if disc < 0:
        return DeltaPolynomial(d0, d1, d2, None, None)
    sq = math.sqrt(disc)
    xm = (d1 - sq) / (2 * d2)
    xp = (d1 + sq) / (2 * d2)
    return DeltaPolynomial(d0, d1, d2, rate(complex(xm)), rate(complex(xp)))


def symbol_det(k: ModelCoeffs, c_s, kk):
    """det S(k) evaluated directly from the 2x2 symbol."""
    kk = np.asarray(kk, dtype=float) ** 2
    s11 = c_s * (1 + k.b * kk)
    s22 = c_s * (1 + k.d * kk)
    s12 = -(k.kappa1 - k.a * kk)
    s21 = -k.kappa2 * (1 - k.c * kk)
    return s11 * s22 - s12 * s21


def closure(which: str, values: dict, gamma, delta):
    """Solve the consistency identity for one or two coefficients.

    ``which`` is a coefficient name or ``"bd"`` (split equally between b and d).
    """
    S = s_const(gamma, delta)
    w = delta + gamma
    v = dict(values)
    if which == "a":
        v["a"] = (S - v["b"] - v["c"] - v["d"]) / w
    elif which in ("b", "c", "d"):
        others = sum(v[n] for n in "bcd" if n != which)
        v[which] = S - w * v["a"] - others
    elif which == "bd":
        v["b"] = v["d"] = (S - w * v["a"] - v["c"]) / 2
    else:
        raise ValueError(f"unknown closure target {which!r}")
    return v


__all__: Sequence[str] = [
    "PhysicalParams", "ModelCoeffs", "Classification", "DispersionProfile",
    "TolandSegment", "DeltaPolynomial", "ModelDomainError", "DegenerateNonlinearity",
    "derive_coeffs", "coeffs_from_quadruple", "modelling_params", "sound_speed",
    "s_const", "classify_linear", "classify_wellposed", "classify_nft",
    "d_determinant", "bifurcation_ab", "ba_region", "quartic_roots",
    "characteristic_roots", "dispersion_profile", "cc_speed_bound", "toland_f",
    "toland_grad", "speed_from_amplitude", "toland_segment", "delta_polynomial",
    "symbol_det", "closure",
]
