"""Heat-kernel coefficients, Hankel-series propagators and the Hadamard split.

Transport equations along geodesics from the base point x' are solved on
Taylor polynomials in d = x - x'.  Along a ray the transport operator
sigma_bar^{;mu} d_mu acts on a degree-d homogeneous term as multiplication by
d plus corrections of strictly higher degree, so each transport equation is
solved degree by degree.

Sign conventions follow the proper-time kernel with exp(-i m^2 s): the series
below solve (box + xi R - m^2) G = 0 where box is the d'Alembertian of the
(+, -) metric.
"""
from __future__ import annotations

import cmath
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, log, pi
from typing import Callable

import mpmath
import numpy as np
from scipy.special import digamma, hankel2

from .errors import (
    DomainError,
    InvalidMassError,
    LightConeError,
    OrderingError,
    UnsupportedOrderError,
)
from .geometry import Biscalar, ConformalGeometry, GridSigma, as_point, world_function
from .series import Taylor2, taylor_by_cauchy, taylor_from_derivatives

MAX_ORDER = 6
DEFAULT_TAIL = 3
DEFAULT_DEGREE = 24
DEFAULT_RADIUS = 0.6


@dataclass(frozen=True)
class ModelParameters:
    m: float = 1.0
    xi: float = 0.0
    M2: float = 1.0
    eps: float = 1e-10

    def __post_init__(self):
        if not self.m >= 0:
            raise ValueError("mass must be non-negative")
        if not self.M2 > 0:
            raise ValueError("renormalisation scale M2 must be positive")
        if not self.eps > 0:
            raise ValueError("regulator eps must be positive")

    @property
    def m2(self):
        return self.m * self.m


# ----------------------------------------------------------------------
# local expansion about a base point


class LocalExpansion:
    """Taylor data of the transport quantities about ``base``.

    Attributes are :class:`Taylor2` polynomials in d = x - base:
    ``sigma_bar``, ``half_van_vleck`` (Delta^{1/2}), ``tau`` (the focusing
    term sigma_bar^{;mu} d_mu ln Delta^{1/2}), ``ricci`` and the coefficient
    list ``A``.
    """

    def __init__(self, geom: ConformalGeometry, base, xi=0.0, order=MAX_ORDER + DEFAULT_TAIL + 1,
                 degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS):
        self.geom = geom
        self.base = as_point(base)
        self.xi = float(xi)
        self.degree = degree
        # flat expansions are exact polynomials, valid everywhere
        self.radius = np.inf if geom.is_flat else radius
        K = degree
        s = _sigma_taylor(geom, self.base, K)
        self.s = s
        self.u = (-2.0 * s).exp()
        sb = Taylor2(np.array([[0.0, 0.0, -0.5], [0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]), K) * np.exp(2 * s.value0)
        for d in range(3, K + 1):
            rest = self.u * (sb.d0() * sb.d0() - sb.d1() * sb.d1())
            sb = sb + rest.homogeneous(d) / (2.0 - 2.0 * d)
        self.sigma_bar = sb
        self.t0 = self.u * sb.d0()
        self.t1 = -(self.u * sb.d1())
        self.tau = (2.0 - self.box(sb)) / 2.0
        log_half = self.solve_transport(self.tau, 0.0, None)
        self.half_van_vleck = log_half.exp()
        self.ricci = -2.0 * (self.u * (s.d0().d0() - s.d1().d1()))
        self.A = [self.half_van_vleck]
        for n in range(order):
            self.A.append(self.solve_transport(self.wave(self.A[n]), n + 1.0, self.tau))

    # operators on polynomials
    def transport(self, p: Taylor2) -> Taylor2:
        return self.t0 * p.d0() + self.t1 * p.d1()

    def box(self, p: Taylor2) -> Taylor2:
        return self.u * (p.d0().d0() - p.d1().d1())

    def wave(self, p: Taylor2, m2=0.0) -> Taylor2:
        """(box + xi R - m^2) p."""
        out = self.box(p)
        if self.xi:
            out = out + self.xi * (self.ricci * p)
        if m2:
            out = out - m2 * p
        return out

    def solve_transport(self, source: Taylor2, k: float, tau: Taylor2 | None) -> Taylor2:
        """Solve (k + T - tau) X = source, T = sigma_bar^{;mu} d_mu, X regular at d = 0."""
        X = Taylor2.constant(0.0, self.degree)
        for d in range(self.degree + 1):
            r = source - self.transport(X) - k * X
            if tau is not None:
                r = r + tau * X
            part = r.homogeneous(d)
            if k + d == 0:
                continue
            X = X + part / (k + d)
        return X

    def offset(self, x):
        d0, d1 = x[0] - self.base[0], x[1] - self.base[1]
        if max(abs(d0), abs(d1)) > self.radius:
            raise DomainError(f"point {tuple(x)} outside the expansion patch of radius {self.radius} about {tuple(self.base)}")
        return d0, d1

    def __call__(self, poly: Taylor2, x) -> float:
        return float(poly(*self.offset(x)))


def _sigma_taylor(geom, base, degree):
    if geom.is_flat:
        return Taylor2.constant(0.0, degree)
    if isinstance(geom.sigma, GridSigma):
        derivs = {}
        for order in range(GridSigma.MAX_ORDER + 1):
            for i in range(order + 1):
                derivs[(i, order - i)] = float(geom.d(i, order - i, *base))
        return taylor_from_derivatives(derivs, degree)
    fn = geom.sigma.derivative(0, 0)
    return taylor_by_cauchy(fn, base, degree, radius=1.0)


@lru_cache(maxsize=512)
def local_expansion(geom, base, xi=0.0, degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS) -> LocalExpansion:
    return LocalExpansion(geom, as_point(base), xi, degree=degree, radius=radius)


# ----------------------------------------------------------------------
# DeWitt-Schwinger coefficients


@dataclass(frozen=True)
class DSCoefficients:
    order: int
    A: list
    Abar: list
    params: ModelParameters
    geom: ConformalGeometry = field(repr=False)


def _coefficient(geom, xi, n, degree, radius):
    def ev(x, xp):
        ex = local_expansion(geom, as_point(xp), xi, degree, radius)
        return ex(ex.A[n], x)

    return ev


def _abar(A, m2, n):
    def ev(x, xp):
        return sum(((-m2) ** k / factorial(k)) * A[n - k](x, xp) for k in range(n + 1))

    return ev


def ds_coefficients(geom: ConformalGeometry, params: ModelParameters, N: int,
                    degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS) -> DSCoefficients:
    if N > MAX_ORDER:
        raise UnsupportedOrderError(f"order {N} exceeds the supported maximum {MAX_ORDER}")
    if N < 0:
        raise ValueError("order must be non-negative")
    return _ds(geom, params, N, degree, radius, N)


def _ds(geom, params, N, degree, radius, extra):
    A = [Biscalar(_coefficient(geom, params.xi, n, degree, radius), True, f"A{n}") for n in range(extra + 1)]
    Abar = [Biscalar(_abar(A, params.m2, n), True, f"Abar{n}") for n in range(N + 1)]
    return DSCoefficients(N, A, Abar, params, geom)


# ----------------------------------------------------------------------
# regulated logarithm


def regulated_log(sbar, dt, eps, prescription="feynman"):
    """Logarithm of the world function with its i eps boundary value.

    ``feynman``: ln(sbar + i eps), the branch of the Hankel representation.
    ``plus``: ln(-sbar + i eps sgn(dt)), positive-frequency ordering.
    ``wald``: ln((-2 sbar + 2 i eps dt + eps^2) / 2).
    The real part is ln|sbar| in every case.
    """
    if abs(sbar) < 1e-300:
        raise LightConeError("pair is lightlike separated; the logarithm diverges")
    if prescription == "feynman":
        return cmath.log(complex(sbar, eps))
    if prescription == "plus":
        return cmath.log(complex(-sbar, eps * (1.0 if dt >= 0 else -1.0)))
    if prescription == "wald":
        return cmath.log(complex(-2.0 * sbar + eps * eps, 2.0 * eps * dt) / 2.0)
    raise ValueError(f"unknown prescription {prescription!r}")


def _sbar(geom, x, xp):
    value = world_function(geom, x, xp).value
    if value == 0.0 and tuple(x) != tuple(xp):
        raise LightConeError("pair is lightlike separated")
    return value


# ----------------------------------------------------------------------
# Hankel representations


def hankel_argument(m2, sbar, eps):
    return cmath.sqrt(-2.0 * m2 * complex(sbar, eps))


def feynman_hankel(geom: ConformalGeometry, params: ModelParameters, x, xp, N: int = 4,
                   degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS) -> complex:
    """Partial sum through order N of the Hankel-function series."""
    if params.m <= 0:
        raise InvalidMassError("Hankel series needs m > 0; use massless_hadamard")
    x, xp = as_point(x), as_point(xp)
    sbar = _sbar(geom, x, xp)
    if sbar == 0.0:
        raise LightConeError("coincident or lightlike pair")
    ds = ds_coefficients(geom, params, N, degree, radius)
    m2 = params.m2
    z = hankel_argument(m2, sbar, params.eps)
    total = 0j
    for n in range(N + 1):
        # (-1)^n H_{-n} = H_n
        total += ds.A[n](x, xp) * (z / 2) ** n * hankel2(n, z) / m2**n
    return total / 4


def feynman_mass_derivative(geom: ConformalGeometry, params: ModelParameters, x, xp, N: int = 4,
                            degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS, dps=30) -> complex:
    """Same propagator written with mass-derivatives of the zeroth Hankel function.

    The derivatives in m^2 are taken numerically at ``dps`` digits.
    """
    if params.m <= 0:
        raise InvalidMassError("mass-derivative series needs m > 0")
    x, xp = as_point(x), as_point(xp)
    sbar = _sbar(geom, x, xp)
    if sbar == 0.0:
        raise LightConeError("coincident or lightlike pair")
    ds = ds_coefficients(geom, params, N, degree, radius)
    half = ds.A[0](x, xp)
    with mpmath.workdps(dps):
        s = mpmath.mpc(sbar, params.eps)

        def h0(m2):
            return mpmath.hankel2(0, mpmath.sqrt(-2 * m2 * s))

        m2 = mpmath.mpf(params.m2)
        total = mpmath.mpc(0)
        for j in range(N + 1):
            a_j = ds.A[j](x, xp) / half
            total += a_j * (-1) ** j * mpmath.diff(h0, m2, j)
        return complex(half * total / 4)


# ----------------------------------------------------------------------
# Hadamard split


def _harmonic(n):
    return sum(1.0 / l for l in range(1, n + 1))


@dataclass(frozen=True)
class HadamardSeries:
    """V and W coefficient biscalars of V ln + W with V = sum V_n sbar^n."""

    order: int
    V: list
    W: list
    tail_depth: int
    params: ModelParameters
    geom: ConformalGeometry = field(repr=False)
    massless: bool = False

    @property
    def W_prime(self):
        """W' = W - V ln M^2, paired with ln|M^2 sbar|."""
        lnM2 = log(self.params.M2)
        return [Biscalar(lambda x, xp, w=w, v=v: w(x, xp) - lnM2 * v(x, xp), True, f"W'{n}")
                for n, (w, v) in enumerate(zip(self.W, self.V))]

    def V_sum(self, x, xp, sbar=None):
        sbar = _sbar(self.geom, x, xp) if sbar is None else sbar
        return sum(v(x, xp) * sbar**n for n, v in enumerate(self.V))

    def W_sum(self, x, xp, sbar=None, prime=False):
        sbar = _sbar(self.geom, x, xp) if sbar is None else sbar
        Ws = self.W_prime if prime else self.W
        return sum(w(x, xp) * sbar**n for n, w in enumerate(Ws))

    def value(self, x, xp, prescription="feynman", prime=True):
        """V L + W where L is the regulated logarithm (of M^2 sbar if prime)."""
        x, xp = as_point(x), as_point(xp)
        sbar = _sbar(self.geom, x, xp)
        L = regulated_log(sbar, x[0] - xp[0], self.params.eps, prescription)
        if prime:
            L += log(self.params.M2)
        return self.V_sum(x, xp, sbar) * L + self.W_sum(x, xp, sbar, prime)


def _v_coeff(n):
    return (-1.0) ** (n + 1) / (2.0**n * factorial(n))


def hadamard_split(geom: ConformalGeometry, params: ModelParameters, N: int = 4,
                   tail_depth: int = DEFAULT_TAIL, degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS) -> HadamardSeries:
    if params.m <= 0:
        raise InvalidMassError("massive Hadamard split needs m > 0; use massless_hadamard")
    if N > MAX_ORDER:
        raise UnsupportedOrderError(f"order {N} exceeds the supported maximum {MAX_ORDER}")
    ds = _ds(geom, params, N, degree, radius, N + tail_depth)
    m2 = params.m2
    V = [Biscalar(lambda x, xp, n=n: _v_coeff(n) * ds.Abar[n](x, xp), True, f"V{n}") for n in range(N + 1)]

    def w_eval(n):
        c = (-1.0) ** n / (2.0**n * factorial(n))

        def ev(x, xp):
            v = V[n](x, xp)
            head = sum(((-1.0) ** k * m2**k / factorial(k)) * (_harmonic(n) - _harmonic(k)) * ds.A[n - k](x, xp)
                       for k in range(n + 1))
            tail, prev = 0.0, None
            for k in range(tail_depth):
                term = factorial(k) / m2 ** (k + 1) * ds.A[n + 1 + k](x, xp)
                if prev is not None and abs(term) > abs(prev):
                    break
                tail += term
                prev = term
            return log(m2 / 2.0) * v - 2.0 * float(digamma(n + 1)) * v - c * (head - tail)

        return ev

    W = [Biscalar(w_eval(n), True, f"W{n}") for n in range(N + 1)]
    return HadamardSeries(N, V, W, tail_depth, params, geom, False)


class _MasslessPolys:
    """V_n and W_n polynomials of the massless series about one base point."""

    def __init__(self, ex: LocalExpansion, N):
        self.V = [_v_coeff(n) * ex.A[n] for n in range(N + 1)]
        self.W = [Taylor2.constant(0.0, ex.degree)]
        for n in range(N):
            k = n + 1.0
            src = 0.5 * ex.wave(self.W[n]) + k * self.V[n + 1] - ex.wave(self.V[n]) / (2.0 * k)
            self.W.append(ex.solve_transport(-1.0 * src / k, k, ex.tau))


@lru_cache(maxsize=256)
def _massless_polys(geom, base, xi, N, degree, radius):
    return _MasslessPolys(local_expansion(geom, base, xi, degree, radius), N)


def massless_hadamard(geom: ConformalGeometry, params: ModelParameters, N: int = 4,
                      degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS) -> HadamardSeries:
    """Massless series: W_0 = 0 and higher W_n from the Hadamard recursion."""
    if N > MAX_ORDER:
        raise UnsupportedOrderError(f"order {N} exceeds the supported maximum {MAX_ORDER}")

    def make(kind, n):
        def ev(x, xp):
            xp = as_point(xp)
            polys = _massless_polys(geom, xp, params.xi, N, degree, radius)
            ex = local_expansion(geom, xp, params.xi, degree, radius)
            return ex(getattr(polys, kind)[n], x)

        return ev

    V = [Biscalar(make("V", n), True, f"V{n}") for n in range(N + 1)]
    # W_0 = 0 fixes a one-sided transport, so only W_0 is symmetric in general
    W = [Biscalar(make("W", n), n == 0, f"W{n}") for n in range(N + 1)]
    massless_params = ModelParameters(0.0, params.xi, params.M2, params.eps)
    return HadamardSeries(N, V, W, 0, massless_params, geom, True)


def hadamard_series(geom, params, N=4, **kw) -> HadamardSeries:
    return massless_hadamard(geom, params, N, **kw) if params.m == 0 else hadamard_split(geom, params, N, **kw)


# ----------------------------------------------------------------------
# two-point function and anchor calibration


def two_point_plus(geom: ConformalGeometry, params: ModelParameters, x, xp, N: int = 4,
                   series: HadamardSeries | None = None, prescription="plus", prime=True) -> complex:
    """-i [V L + W] for x0 > x'0 (raw series normalisation)."""
    x, xp = as_point(x), as_point(xp)
    if not x[0] > xp[0]:
        raise OrderingError("positive-frequency function needs x0 > x'0")
    series = series or hadamard_series(geom, params, N)
    return -1j * series.value(x, xp, prescription, prime)


def anchor_value(x, xp, eps):
    """Flat massless reference -(4 pi)^{-1} ln(-x^2 + i eps x0) for the pair."""
    d0, d1 = x[0] - xp[0], x[1] - xp[1]
    return -cmath.log(complex(-(d0 * d0 - d1 * d1), eps * d0)) / (4 * pi)


def anchor_grid(n=10):
    """Point pairs used for calibration: x' at the origin, x on an n x n grid."""
    t = np.linspace(0.1, 0.6, n)
    s = np.linspace(-0.57, 0.57, n)
    return [((float(a), float(b)), (0.0, 0.0)) for a in t for b in s]


@dataclass(frozen=True)
class Calibration:
    """G_anchor = scale * G_plus_raw + shift on flat massless pairs."""

    scale: complex
    shift: complex
    max_relative_deviation: float

    def apply(self, value):
        return self.scale * value + self.shift


@lru_cache(maxsize=4)
def anchor_calibration(eps=1e-13) -> Calibration:
    geom = ConformalGeometry.flat()
    params = ModelParameters(m=0.0, eps=eps)
    series = massless_hadamard(geom, params, 0)
    pairs = anchor_grid()
    raw = np.array([two_point_plus(geom, params, x, xp, series=series, prime=False) for x, xp in pairs])
    ref = np.array([anchor_value(x, xp, eps) for x, xp in pairs])
    design = np.stack([raw, np.ones_like(raw)], axis=1)
    (scale, shift), *_ = np.linalg.lstsq(design, ref, rcond=None)
    fit = scale * raw + shift
    dev = float(np.max(np.abs(fit - ref) / np.abs(ref)))
    return Calibration(complex(scale), complex(shift), dev)


def calibrated_two_point(geom, params, x, xp, N=4, series=None, prescription="plus") -> complex:
    cal = anchor_calibration()
    return cal.apply(two_point_plus(geom, params, x, xp, N, series, prescription, prime=True))


def calibrated_kernel(geom, params, x, xp, N=4, series=None, prescription="plus") -> complex:
    """Calibrated two-point function without the time-order restriction."""
    x, xp = as_point(x), as_point(xp)
    series = series or hadamard_series(geom, params, N)
    cal = anchor_calibration()
    return cal.apply(-1j * series.value(x, xp, prescription, prime=True))
