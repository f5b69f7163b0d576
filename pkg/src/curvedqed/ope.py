"""Operator product expansions for the vector field A_mu = (sqrt(pi)/e) dual-d Sigma.

The contraction kernel is

    Gamma_{mu nu}(x1, x2) = (e^2/pi) dhat_{mu nu} F + Dt_mu^{(1)} Dt_nu^{(2)} F,
    F = V(x1, x2) ln|M^2 sbar + i eps|,

with the dual derivative Dt_mu = sqrt(-g) eps_{mu nu} g^{nu lam} d_lam, which on
scalars reduces to Dt_0 = -d_1 and Dt_1 = -d_0.  Products of fields are
expanded with the Wick machinery; coefficients multiply H-normal-ordered
monomials carried to the base point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidMassError, UnsupportedOrderError, ValidationError
from .geometry import ConformalGeometry, Point, as_point, exponential_map
from .parametrix import (
    DEFAULT_DEGREE,
    DEFAULT_RADIUS,
    ModelParameters,
    _v_coeff,
    local_expansion,
)
from .series import Taylor2
from .wick import (
    FieldLabel,
    OnDiagonalError,
    Slot,
    WickMonomial,
    WickPolynomial,
    normal_order,
    vacuum_expectation,
    wick_product,
)

DELTA_HAT = np.diag([1.0, -1.0])
MAX_DEGREE = 8
# Dt_mu acts as -d_{DUAL_AXIS[mu]}
DUAL_AXIS = (1, 0)


# ----------------------------------------------------------------------
# the contraction kernel


class _BasePolys:
    """V, sbar and their first/second derivatives as polynomials about one base point."""

    def __init__(self, geom, base, params: ModelParameters, N, degree, radius):
        ex = local_expansion(geom, base, params.xi, degree, radius)
        m2 = params.m2
        sb = ex.sigma_bar
        V = Taylor2.constant(0.0, ex.degree)
        power = Taylor2.constant(1.0, ex.degree)
        for n in range(N + 1):
            abar = sum(((-m2) ** k / math.factorial(k)) * ex.A[n - k] for k in range(n + 1))
            V = V + _v_coeff(n) * (abar * power)
            power = power * sb
        self.ex = ex
        self.V0, self.S0 = V, sb
        self.V = [V, V.d0(), V.d1()]
        self.S = [sb, sb.d0(), sb.d1()]
        self.V2 = [[V.d0().d0(), V.d0().d1()], [V.d1().d0(), V.d1().d1()]]
        self.S2 = [[sb.d0().d0(), sb.d0().d1()], [sb.d1().d0(), sb.d1().d1()]]


class GammaKernel:
    """Gamma_{mu nu}(x1, x2) and the underlying log kernel F = V ln|M^2 sbar + i eps|.

    Mixed derivatives use translation invariance in flat space.  Otherwise
    the Taylor coefficients about x2, which are smooth in x2, are
    differentiated by sixth-order central differences and the chain rule is
    applied analytically.
    """

    def __init__(self, geom: ConformalGeometry, params: ModelParameters, N: int = 4, h: float = 2e-2,
                 degree=DEFAULT_DEGREE, radius=DEFAULT_RADIUS):
        if params.m <= 0:
            raise InvalidMassError("the massless kernel diverges logarithmically in the infrared; m must be positive")
        self.geom = geom
        self.params = params
        self.N = N
        self.h = h
        self.degree = degree
        self.radius = radius
        self._cache = {}

    def _polys(self, base) -> _BasePolys:
        base = as_point(base)
        key = (base[0], base[1])
        p = self._cache.get(key)
        if p is None:
            p = _BasePolys(self.geom, base, self.params, self.N, self.degree, self.radius)
            self._cache[key] = p
        return p

    def _jets(self, x1, base):
        """F, grad_{x1} F, Hessian_{x1} F at x1 with x2 = base."""
        P = self._polys(base)
        d = P.ex.offset(x1)
        V = [float(p(*d)) for p in P.V]
        S = [float(p(*d)) for p in P.S]
        V2 = np.array([[float(p(*d)) for p in row] for row in P.V2])
        S2 = np.array([[float(p(*d)) for p in row] for row in P.S2])
        M2 = self.params.M2
        eps = self.params.eps
        q = (M2 * S[0]) ** 2 + eps**2
        L = 0.5 * math.log(q)
        a = M2 * M2 * S[0] / q
        da = M2 * M2 * (eps**2 - (M2 * S[0]) ** 2) / q**2
        gS = np.array(S[1:])
        gV = np.array(V[1:])
        gL = a * gS
        HL = a * S2 + da * np.outer(gS, gS)
        F = V[0] * L
        gF = gV * L + V[0] * gL
        HF = V2 * L + np.outer(gV, gL) + np.outer(gL, gV) + V[0] * HL
        return F, gF, HF

    def _check(self, x1, x2):
        x1, x2 = as_point(x1), as_point(x2)
        if x1 == x2:
            raise OnDiagonalError(f"Gamma evaluated on the diagonal at {tuple(x1)}")
        self.geom.check(x1, x2)
        return x1, x2

    def log_kernel(self, x1, x2) -> float:
        x1, x2 = self._check(x1, x2)
        return self._jets(x1, x2)[0]

    def _base_derivative(self, x2, attr, j):
        """Coefficient-wise base-point derivative of a polynomial (smooth in the base)."""
        h = self.h
        acc = np.zeros_like(getattr(self._polys(x2), attr).c)
        for k, w in zip((-3, -2, -1, 1, 2, 3), (-1.0, 9.0, -45.0, 45.0, -9.0, 1.0)):
            b = [x2[0], x2[1]]
            b[j] += k * h
            acc += w * getattr(self._polys(Point(*b)), attr).c
        return Taylor2(acc / (60.0 * h), self.degree)

    def mixed_hessian(self, x1, x2) -> np.ndarray:
        """M[i, j] = d^2 F / d x1^i d x2^j."""
        x1, x2 = self._check(x1, x2)
        if self.geom.is_flat:
            return -self._jets(x1, x2)[2]
        P = self._polys(x2)
        d = P.ex.offset(x1)
        V, S = P.V[0], P.S[0]
        grad = lambda p, i: p.d0() if i == 0 else p.d1()
        v, sb = float(V(*d)), float(S(*d))
        M2, eps = self.params.M2, self.params.eps
        q = (M2 * sb) ** 2 + eps**2
        L = 0.5 * math.log(q)
        a = M2 * M2 * sb / q
        da = M2 * M2 * (eps**2 - (M2 * sb) ** 2) / q**2
        Vi = [float(P.V[1 + i](*d)) for i in range(2)]
        Si = [float(P.S[1 + i](*d)) for i in range(2)]
        out = np.zeros((2, 2))
        for j in range(2):
            bV = self._base_derivative(x2, "V0", j)
            bS = self._base_derivative(x2, "S0", j)
            Vj = float(bV(*d)) - Vi[j]
            Sj = float(bS(*d)) - Si[j]
            for i in range(2):
                Vij = float(grad(bV, i)(*d)) - float(grad(grad(V, j), i)(*d))
                Sij = float(grad(bS, i)(*d)) - float(grad(grad(S, j), i)(*d))
                Li, Lj = a * Si[i], a * Sj
                Lij = a * Sij + da * Si[i] * Sj
                out[i, j] = Vij * L + Vi[i] * Lj + Vj * Li + v * Lij
        return out

    def __call__(self, x1, x2) -> np.ndarray:
        x1, x2 = self._check(x1, x2)
        F = self._jets(x1, x2)[0]
        M = self.mixed_hessian(x1, x2)
        G = np.empty((2, 2))
        for mu in range(2):
            for nu in range(2):
                G[mu, nu] = self.params.m2 * DELTA_HAT[mu, nu] * F + M[DUAL_AXIS[mu], DUAL_AXIS[nu]]
        return G


@lru_cache(maxsize=32)
def gamma_kernel_for(geom: ConformalGeometry, params: ModelParameters, N: int = 4) -> GammaKernel:
    return GammaKernel(geom, params, N)


def gamma_kernel(geom: ConformalGeometry, params: ModelParameters, x1, x2, N: int = 4) -> np.ndarray:
    return gamma_kernel_for(geom, params, N)(x1, x2)


def coupling(params: ModelParameters) -> float:
    """e with m^2 = e^2 / pi."""
    return math.sqrt(math.pi * params.m2)


# ----------------------------------------------------------------------
# expansions


def field_label(mu: int) -> FieldLabel:
    if mu not in (0, 1):
        raise ValidationError(f"vector index must be 0 or 1, got {mu!r}")
    return FieldLabel("A", index=mu)


@dataclass(frozen=True)
class OPEExpansion:
    """Expansion of a product of n vector fields in units of the dual-derivative field.

    ``poly`` expands prod_i Dt Sigma(x_i); the A-product is (sqrt(pi)/e)^n
    times it.
    """

    poly: WickPolynomial
    n_fields: int

    def vev(self, kernel) -> complex:
        """Vacuum expectation of the dual-derivative product."""
        return vacuum_expectation(self.poly, kernel)


def _monomial(factor) -> WickMonomial:
    indices, point = factor
    if isinstance(indices, int):
        indices = (indices,)
    return WickMonomial(tuple(Slot(field_label(mu), point, 1) for mu in indices), "H").canonical()


def expand_two(mu: int, nu: int, x1, x2) -> OPEExpansion:
    """A_mu(x1) A_nu(x2) -> :..:_H + Gamma_{mu nu}(x1, x2) * 1."""
    plain = WickMonomial((Slot(field_label(mu), x1), Slot(field_label(nu), x2)), "plain")
    return OPEExpansion(normal_order(plain, "H"), 2)


def expand_general(factors) -> OPEExpansion:
    """Product of H-normal-ordered field monomials at distinct points.

    ``factors`` is a list of (indices, point); ``indices`` is a vector index
    or a tuple of them for a Wick power at that point.
    """
    monos = [_monomial(f) for f in factors]
    points = [f[1] for f in factors]
    if len(set(points)) != len(points):
        raise OnDiagonalError("factors must sit at distinct points; merge them into one Wick power instead")
    total = sum(m.degree for m in monos)
    if total > MAX_DEGREE:
        raise UnsupportedOrderError(f"total degree {total} exceeds {MAX_DEGREE}")
    poly = WickPolynomial.monomial(monos[0]) if monos else WickPolynomial.monomial(WickMonomial((), "H"))
    for m in monos[1:]:
        poly = wick_product(poly, m)
    return OPEExpansion(poly, total)


def gamma_evaluator(kernel: GammaKernel, positions=None):
    """Kernel callback for WickPolynomial.evaluate: Gamma components between slot keys."""
    cache = {}

    def pos(p):
        return as_point(positions[p]) if positions is not None else as_point(p)

    def ev(a, b):
        (la, pa), (lb, pb) = a, b
        key = (pa, pb)
        G = cache.get(key)
        if G is None:
            G = kernel(pos(pa), pos(pb))
            cache[key] = G
        return G[la.index, lb.index]

    return ev


def normalization_factor(params: ModelParameters, n_fields, basis_degree, normalization="A"):
    """Factor converting dual-derivative coefficients to the requested field units."""
    m = math.sqrt(params.m2)
    if normalization == "sigma":
        return 1.0
    if normalization == "A":
        return m ** -(n_fields - basis_degree)
    if normalization == "mixed":
        return m**basis_degree
    raise ValueError(f"unknown normalization {normalization!r}")


@dataclass(frozen=True)
class OPETerm:
    basis: WickMonomial
    coefficient: complex
    patterns: tuple
    samples: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "basis": str(self.basis),
            "coefficient": [self.coefficient.real, self.coefficient.imag],
            "patterns": [str(p) for p in self.patterns],
        }


def carry_to(monomial: WickMonomial, y) -> WickMonomial:
    """Leading term of a normal-ordered monomial moved to the base point y."""
    return WickMonomial(tuple(Slot(s.label, y, s.power) for s in monomial.slots), "H").canonical()


def read_off_coefficients(expansion: OPEExpansion, kernel: GammaKernel, y="y", positions=None,
                          normalization="A") -> list:
    ev = gamma_evaluator(kernel, positions)
    grouped = {}
    for (kern, mono), c in expansion.poly.terms.items():
        val = complex(c)
        for a, b in kern:
            val *= ev(a, b)
        basis = carry_to(mono, y)
        entry = grouped.setdefault(basis, [0j, []])
        entry[0] += val * normalization_factor(kernel.params, expansion.n_fields, basis.degree, normalization)
        entry[1].append(_describe(kern, c, mono))
    return [OPETerm(b, v, tuple(p)) for b, (v, p) in grouped.items()]


def _describe(kern, c, mono):
    ins = " ".join(f"Gamma_{a[0].index}{b[0].index}({a[1]},{b[1]})" for a, b in kern)
    return f"{c} {ins} {mono}".strip()


def dump_terms(terms) -> str:
    return json.dumps([t.to_dict() for t in terms], sort_keys=True)


# ----------------------------------------------------------------------
# merge trees and limits


@dataclass(frozen=True)
class MergeTree:
    """Leaves approach ``base`` along x_i(eps) = exp_y(sum_d eps^d v_{i,d}).

    ``paths`` maps a leaf name to its displacement vectors, one per depth
    (normal coordinates at the base point).
    """

    base: Point
    paths: dict

    def __post_init__(self):
        object.__setattr__(self, "base", as_point(self.base))
        seen = {}
        for leaf, vecs in self.paths.items():
            key = tuple(tuple(np.round(np.asarray(v, float), 15)) for v in vecs)
            if key in seen:
                raise ValidationError(f"leaves {seen[key]!r} and {leaf!r} share a path")
            seen[key] = leaf

    def normal_coordinates(self, leaf, eps):
        return sum(eps ** (d + 1) * np.asarray(v, float) for d, v in enumerate(self.paths[leaf]))

    def positions(self, geom, eps, radius=None):
        out = {}
        for leaf in self.paths:
            xi = self.normal_coordinates(leaf, eps)
            if radius is not None and np.max(np.abs(xi)) > radius:
                raise ValidationError(f"leaf {leaf!r} leaves the normal patch at eps = {eps}")
            out[leaf] = exponential_map(geom, self.base, xi)
        return out


@dataclass(frozen=True)
class MergeReport:
    eps: tuple
    values: tuple
    log_coefficient: float
    finite_part: float
    log_residual: float
    power: float
    power_residual: float
    converged: bool

    @property
    def divergent(self):
        return not self.converged


def fit_ladder(eps, values, tol=1e-6) -> MergeReport:
    """Least squares of values ~ a ln eps + b and of ln|values| ~ p ln eps + c."""
    eps = np.asarray(eps, float)
    vals = np.asarray(values, dtype=complex)
    X = np.column_stack([np.log(eps), np.ones_like(eps)])
    coef, *_ = np.linalg.lstsq(X, vals.real, rcond=None)
    resid = float(np.max(np.abs(X @ coef - vals.real))) if len(eps) > 2 else 0.0
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(vals))
    pc, *_ = np.linalg.lstsq(X, logs, rcond=None)
    presid = float(np.max(np.abs(X @ pc - logs)))
    scale = max(1.0, float(np.max(np.abs(vals))))
    converged = bool(abs(coef[0]) <= tol * scale and resid <= tol * scale)
    return MergeReport(tuple(eps), tuple(vals), float(coef[0]), float(coef[1]), resid, float(pc[0]), presid, converged)


def merge_limit(tree: MergeTree, geom: ConformalGeometry, fn, eps_ladder, tol=1e-6) -> MergeReport:
    """Evaluate ``fn(positions)`` along the eps ladder and fit the approach to the base point."""
    values = [fn(tree.positions(geom, e)) for e in eps_ladder]
    return fit_ladder(eps_ladder, values, tol)


def merge_expansion(tree: MergeTree, geom, expansion: OPEExpansion, kernel: GammaKernel, eps_ladder,
                    normalization="A", tol=1e-6) -> dict:
    """Per-basis-monomial merge reports for an expansion bound to the tree's leaves."""
    series = {}
    for e in eps_ladder:
        pos = tree.positions(geom, e)
        for term in read_off_coefficients(expansion, kernel, "y", pos, normalization):
            series.setdefault(term.basis, []).append(term.coefficient)
    return {basis: fit_ladder(eps_ladder, vals, tol) for basis, vals in series.items()}


# ----------------------------------------------------------------------
# symmetry and associativity


def symmetry_defect(kernel: GammaKernel, x1, x2) -> float:
    """max |C(x1, x2) - C(x2, x1)| over components, C the identity coefficient."""
    return float(np.max(np.abs(kernel(x1, x2) - kernel(x2, x1).T)))


@dataclass(frozen=True)
class AssociativityReport:
    direct: dict
    composed: dict
    deviation: float


def associativity_check(kernel: GammaKernel, x1, x2, x3, indices=(0, 0, 0)) -> AssociativityReport:
    """Single-field coefficients of A(x1) A(x2) A(x3): direct versus inner-then-outer.

    Direct: each A_{mu_i} carries Gamma over the other pair.  Composed: x1, x2
    are first expanded about their midpoint z, then :A A:(z) is contracted
    with A(x3).  The deviation is relative to the outer (non-inner) part.
    """
    x1, x2, x3 = as_point(x1), as_point(x2), as_point(x3)
    if x1 == x2:
        raise OnDiagonalError("inner pair must be separated")
    m1, m2, m3 = indices
    z = Point(0.5 * (x1[0] + x2[0]), 0.5 * (x1[1] + x2[1]))
    G12, G13, G23, Gz3 = kernel(x1, x2), kernel(x1, x3), kernel(x2, x3), kernel(z, x3)
    direct, composed = {}, {}

    def add(d, mu, v):
        d[mu] = d.get(mu, 0.0) + v

    add(direct, m1, G23[m2, m3])
    add(direct, m2, G13[m1, m3])
    add(direct, m3, G12[m1, m2])
    add(composed, m1, Gz3[m2, m3])
    add(composed, m2, Gz3[m1, m3])
    add(composed, m3, G12[m1, m2])
    outer = abs(G23[m2, m3]) + abs(G13[m1, m3])
    dev = max(abs(direct[k] - composed[k]) for k in direct) / outer
    return AssociativityReport(direct, composed, float(dev))


def associativity_scaling(kernel: GammaKernel, x1, x3, direction, ratios, indices=(0, 0, 0)):
    """Deviation for x2 = x1 + ratio |x3 - x1| direction, with observed orders between ratios."""
    x1, x3 = as_point(x1), as_point(x3)
    sep = float(np.hypot(x3[0] - x1[0], x3[1] - x1[1]))
    u = np.asarray(direction, float) / np.linalg.norm(direction)
    devs = []
    for r in ratios:
        x2 = Point(x1[0] + r * sep * u[0], x1[1] + r * sep * u[1])
        devs.append(associativity_check(kernel, x1, x2, x3, indices).deviation)
    orders = [math.log(devs[i] / devs[i + 1]) / math.log(ratios[i] / ratios[i + 1]) for i in range(len(devs) - 1)]
    return devs, orders
