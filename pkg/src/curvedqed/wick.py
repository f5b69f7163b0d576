"""Normal-ordered monomials, contracted products and Wick's theorem.

Coefficients are exact ``Fraction`` values attached to symbolic products of
kernel insertions.  Kernels are only evaluated when a polynomial is turned
into numbers.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable

import numpy as np

from .errors import ValidationError


class KernelMismatchError(ValidationError):
    pass


class OnDiagonalError(ValidationError):
    """A singular kernel would be evaluated at coincident points."""


@dataclass(frozen=True, order=True)
class FieldLabel:
    field: str = "phi"
    derivative: tuple = ()
    index: int | None = None
    dual: bool = False

    def __post_init__(self):
        if len(self.derivative) > 2:
            raise ValidationError("derivative order above 2 is not supported")

    def __str__(self):
        name = self.field
        if self.derivative:
            name = ("dd" if self.dual else "d") + "".join(map(str, self.derivative)) + " " + name
        if self.index is not None:
            name += f"_{self.index}"
        return name


PHI = FieldLabel()


@dataclass(frozen=True, order=True)
class Slot:
    """A field label at a point; ``power`` > 1 marks a Wick power at one point."""

    label: FieldLabel
    point: object
    power: int = 1

    @property
    def key(self):
        return (self.label, self.point)

    def __str__(self):
        base = f"{self.label}({self.point})"
        return base if self.power == 1 else f"{base}^{self.power}"


def slot(point, power=1, label=PHI):
    return Slot(label, point, power)


def _sort_key(s: Slot):
    return (repr(s.label), repr(s.point))


@dataclass(frozen=True)
class WickMonomial:
    """Ordered factors with an ordering tag ("omega", "H" or "plain")."""

    slots: tuple
    ordering: str = "omega"

    @classmethod
    def of(cls, *slots, ordering="omega"):
        return cls(tuple(slots), ordering).canonical() if ordering != "plain" else cls(tuple(slots), ordering)

    @property
    def degree(self):
        return sum(s.power for s in self.slots)

    def canonical(self):
        """Merge equal (label, point) slots and sort: valid for normal products."""
        merged = {}
        for s in self.slots:
            merged[s.key] = merged.get(s.key, 0) + s.power
        slots = sorted((Slot(k[0], k[1], p) for k, p in merged.items()), key=_sort_key)
        return WickMonomial(tuple(slots), self.ordering)

    def expanded(self):
        """Unit-power slots in order."""
        return [Slot(s.label, s.point, 1) for s in self.slots for _ in range(s.power)]

    def __str__(self):
        if not self.slots:
            return "1"
        body = " ".join(map(str, self.slots))
        if self.ordering == "plain":
            return body
        return f":{body}:" + ("_H" if self.ordering == "H" else "")


ONE = WickMonomial((), "omega")


def _pair_key(a: Slot, b: Slot):
    return (a.key, b.key)


def _kernel_product(pairs: Iterable):
    return tuple(sorted(pairs, key=repr))


class WickPolynomial:
    """Sum of Fraction * (product of kernel insertions) * monomial."""

    def __init__(self, terms=None):
        self.terms: dict = {}
        for (kern, mono), c in (terms or {}).items():
            self.add(kern, mono, c)

    def add(self, kernels, monomial, coeff):
        key = (_kernel_product(kernels), monomial)
        c = self.terms.get(key, Fraction(0)) + Fraction(coeff)
        if c == 0:
            self.terms.pop(key, None)
        else:
            self.terms[key] = c

    @classmethod
    def monomial(cls, mono: WickMonomial, coeff=1):
        p = cls()
        p.add((), mono, coeff)
        return p

    def __add__(self, other):
        out = WickPolynomial(self.terms)
        for (kern, mono), c in other.terms.items():
            out.add(kern, mono, c)
        return out

    def __sub__(self, other):
        return self + other.scaled(-1)

    def scaled(self, factor):
        return WickPolynomial({k: Fraction(factor) * c for k, c in self.terms.items()})

    def __eq__(self, other):
        return isinstance(other, WickPolynomial) and self.terms == other.terms

    def __len__(self):
        return len(self.terms)

    def coefficient(self, monomial, kernels=()):
        return self.terms.get((_kernel_product(kernels), monomial), Fraction(0))

    def by_monomial(self):
        """{monomial: {kernel product: coefficient}}."""
        out = {}
        for (kern, mono), c in self.terms.items():
            out.setdefault(mono, {})[kern] = c
        return out

    def constant_part(self):
        return WickPolynomial({k: c for k, c in self.terms.items() if not k[1].slots})

    def evaluate(self, kernel: Callable) -> dict:
        """{monomial: complex coefficient} with kernel(a_key, b_key) per insertion."""
        out = {}
        for (kern, mono), c in self.terms.items():
            val = complex(c)
            for a, b in kern:
                val *= kernel(a, b)
            out[mono] = out.get(mono, 0) + val
        return out

    def evaluate_exact(self, kernel: Callable) -> dict:
        """As ``evaluate`` but keeps the kernel's own number type (e.g. Fraction)."""
        out = {}
        for (kern, mono), c in self.terms.items():
            val = c
            for a, b in kern:
                val = val * kernel(a, b)
            out[mono] = out.get(mono, 0) + val
        return out

    def to_text(self):
        lines = []
        for (kern, mono), c in sorted(self.terms.items(), key=lambda kv: (kv[0][1].degree, repr(kv[0]))):
            ins = " ".join(f"w({_fmt_key(a)},{_fmt_key(b)})" for a, b in kern)
            lines.append(" ".join(x for x in (str(c), ins, str(mono)) if x))
        return "\n".join(lines) if lines else "0"

    def to_json(self):
        rows = []
        for (kern, mono), c in self.terms.items():
            rows.append(
                {
                    "coefficient": str(c),
                    "kernels": [[_fmt_key(a), _fmt_key(b)] for a, b in kern],
                    "monomial": [[str(s.label), repr(s.point), s.power] for s in mono.slots],
                    "ordering": mono.ordering,
                }
            )
        rows.sort(key=lambda r: json.dumps(r, sort_keys=True))
        return json.dumps(rows, sort_keys=True)

    __str__ = to_text


def _fmt_key(k):
    label, point = k
    return f"{label}({point})"


# ----------------------------------------------------------------------
# contractions


def contraction_factor(n, m, k):
    """n! m! / ((n-k)! (m-k)! k!), zero when k exceeds n or m."""
    if k < 0 or k > n or k > m:
        return 0
    return math.factorial(n) * math.factorial(m) // (
        math.factorial(n - k) * math.factorial(m - k) * math.factorial(k)
    )


def _contraction_patterns(p, q, k):
    """Matrices c[a][b] >= 0 with row sums <= p[a], column sums <= q[b], total k."""
    cells = [(a, b) for a in range(len(p)) for b in range(len(q))]

    def rec(idx, remaining, rows, cols, acc):
        if remaining == 0:
            yield dict(acc)
            return
        if idx == len(cells):
            return
        a, b = cells[idx]
        cap = min(remaining, p[a] - rows[a], q[b] - cols[b])
        for c in range(cap, -1, -1):
            if c:
                acc[(a, b)] = c
            rows[a] += c
            cols[b] += c
            yield from rec(idx + 1, remaining - c, rows, cols, acc)
            rows[a] -= c
            cols[b] -= c
            acc.pop((a, b), None)

    yield from rec(0, k, [0] * len(p), [0] * len(q), {})


def contract(left: WickMonomial, right: WickMonomial, k: int) -> WickPolynomial:
    """All k-fold contractions of ``left`` with ``right``, kernel omega(left, right)."""
    out = WickPolynomial()
    if k < 0 or k > min(left.degree, right.degree):
        return out
    L, R = left.slots, right.slots
    p = [s.power for s in L]
    q = [s.power for s in R]
    for pattern in _contraction_patterns(p, q, k):
        rows = [sum(c for (a, _), c in pattern.items() if a == i) for i in range(len(L))]
        cols = [sum(c for (_, b), c in pattern.items() if b == j) for j in range(len(R))]
        count = 1
        for i, s in enumerate(L):
            count *= math.factorial(s.power) // math.factorial(s.power - rows[i])
        for j, s in enumerate(R):
            count *= math.factorial(s.power) // math.factorial(s.power - cols[j])
        denom = 1
        for c in pattern.values():
            denom *= math.factorial(c)
        kernels = []
        for (a, b), c in pattern.items():
            kernels += [_pair_key(L[a], R[b])] * c
        rest = [Slot(s.label, s.point, s.power - rows[i]) for i, s in enumerate(L) if s.power > rows[i]]
        rest += [Slot(s.label, s.point, s.power - cols[j]) for j, s in enumerate(R) if s.power > cols[j]]
        mono = WickMonomial(tuple(rest), left.ordering).canonical()
        out.add(kernels, mono, Fraction(count, denom))
    return out


def wick_product(a, b) -> WickPolynomial:
    """Product of two normal-ordered polynomials (or monomials) sharing an ordering kernel."""
    if isinstance(a, WickMonomial):
        a = WickPolynomial.monomial(a)
    if isinstance(b, WickMonomial):
        b = WickPolynomial.monomial(b)
    out = WickPolynomial()
    for (ka, ma), ca in a.terms.items():
        for (kb, mb), cb in b.terms.items():
            if ma.slots and mb.slots and ma.ordering != mb.ordering:
                raise KernelMismatchError(f"cannot multiply {ma.ordering}- and {mb.ordering}-ordered monomials")
            for k in range(min(ma.degree, mb.degree) + 1):
                for (kc, mc), cc in contract(ma, mb, k).terms.items():
                    if not mc.slots:
                        mc = WickMonomial((), ma.ordering if ma.slots else mb.ordering)
                    out.add(tuple(ka) + tuple(kb) + tuple(kc), mc, ca * cb * cc)
    return out


def vacuum_expectation(poly: WickPolynomial, kernel: Callable | None = None):
    """Quasi-free expectation in the state defining the ordering: constant part only."""
    const = poly.constant_part()
    if kernel is None:
        return const
    return sum(const.evaluate(kernel).values(), 0j)


# ----------------------------------------------------------------------
# plain products and H-ordering


def _partial_pairings(n):
    """Sets of disjoint ordered pairs (i < j) from range(n), including the empty set."""

    def rec(free):
        if not free:
            yield []
            return
        first, rest = free[0], free[1:]
        yield from rec(rest)
        for idx, partner in enumerate(rest):
            for tail in rec(rest[:idx] + rest[idx + 1:]):
                yield [(first, partner)] + tail

    yield from rec(list(range(n)))


def _check_distinct(a: Slot, b: Slot):
    if a.point == b.point:
        raise OnDiagonalError(f"kernel evaluated at coincident point {a.point!r}")


def normal_order(monomial: WickMonomial, ordering="H", allow_coincident=False) -> WickPolynomial:
    """Plain product -> sum of H-kernel products times ordered normal products.

    The relative order of the surviving factors is kept, so the inverse map
    reproduces the input exactly.
    """
    slots = monomial.expanded()
    out = WickPolynomial()
    for match in _partial_pairings(len(slots)):
        used = {i for pr in match for i in pr}
        kern = []
        for i, j in match:
            if not allow_coincident:
                _check_distinct(slots[i], slots[j])
            kern.append(_pair_key(slots[i], slots[j]))
        rest = tuple(s for i, s in enumerate(slots) if i not in used)
        out.add(kern, WickMonomial(rest, ordering), 1)
    return out


def plain_product(monomial: WickMonomial, allow_coincident=False) -> WickPolynomial:
    """Normal product -> plain products: inverse of ``normal_order``."""
    slots = monomial.expanded()
    out = WickPolynomial()
    for match in _partial_pairings(len(slots)):
        used = {i for pr in match for i in pr}
        kern = []
        for i, j in match:
            if not allow_coincident:
                _check_distinct(slots[i], slots[j])
            kern.append(_pair_key(slots[i], slots[j]))
        rest = tuple(s for i, s in enumerate(slots) if i not in used)
        out.add(kern, WickMonomial(rest, "plain"), (-1) ** len(match))
    return out


def _linear_map(poly: WickPolynomial, fn) -> WickPolynomial:
    out = WickPolynomial()
    for (kern, mono), c in poly.terms.items():
        for (k2, m2), c2 in fn(mono).terms.items():
            out.add(tuple(kern) + tuple(k2), m2, c * c2)
    return out


def normal_order_polynomial(poly, ordering="H", allow_coincident=False):
    return _linear_map(poly, lambda m: normal_order(m, ordering, allow_coincident))


def plain_polynomial(poly, allow_coincident=False):
    return _linear_map(poly, lambda m: plain_product(m, allow_coincident))


# ----------------------------------------------------------------------
# vertex operators


@dataclass(frozen=True)
class TwoPointKernel:
    """Point kernel ``fn(x, y)`` with a sign flag (-1 for the flipped field)."""

    fn: Callable
    sign: int = 1

    def __call__(self, x, y):
        if x == y if not isinstance(x, np.ndarray) else np.array_equal(x, y):
            raise OnDiagonalError("vertex two-point function at coincident points")
        val = complex(self.sign * self.fn(x, y))
        if not np.isfinite(val):
            raise OnDiagonalError("kernel is singular at the requested points")
        return val

    def flipped(self):
        return TwoPointKernel(self.fn, -self.sign)


def vertex_two_point(g1, g2, kernel: TwoPointKernel, x1, x2) -> complex:
    """exp(g1 g2 K(x1, x2)) for normal-ordered exponentials exp(g phi)."""
    return complex(np.exp(g1 * g2 * kernel(x1, x2)))


def vertex_series(g1, g2, kernel: TwoPointKernel, x1, x2, order: int) -> complex:
    """Truncated expansion from Wick products of :phi^n(x1): and :phi^n(x2):."""
    val = kernel(x1, x2)
    total = 0j
    for n in range(order + 1):
        a = WickMonomial((slot("x1", n),), "omega") if n else ONE
        b = WickMonomial((slot("x2", n),), "omega") if n else ONE
        const = vacuum_expectation(wick_product(a, b))
        expect = sum(const.evaluate(lambda p, q: val).values(), 0j)
        total += (g1**n / math.factorial(n)) * (g2**n / math.factorial(n)) * expect
    return total


def series_tail_bound(z, order):
    """Bound on |sum_{n > order} z^n / n!| when |z| < order + 2."""
    a = abs(z)
    first = a ** (order + 1) / math.factorial(order + 1)
    ratio = a / (order + 2)
    if ratio >= 1:
        return math.inf
    return first / (1 - ratio)


@dataclass(frozen=True)
class NormBound:
    value: float
    refined: float
    finite: bool


def _kernel_exponential(alpha, kernel_fn, x, h, terms=None):
    """exp(|alpha|^2 K) on the grid; diagonal entries use the cell average of the singular kernel."""
    a2 = abs(alpha) ** 2

    def fn(z):
        if terms is None:
            return np.exp(z)
        return sum(z**n / math.factorial(n) for n in range(terms + 1))

    with np.errstate(divide="ignore", invalid="ignore"):
        M = fn(a2 * kernel_fn(x[:, None], x[None, :]))
    # u = (h/2) t^4 removes the integrable singularity at coincidence
    t, wt = np.polynomial.legendre.leggauss(24)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    u = 0.5 * h * t**4
    jac = 4.0 * t**3
    vals = fn(a2 * kernel_fn(x[:, None], x[:, None] + u[None, :]))
    np.fill_diagonal(M, (vals * (wt * jac)[None, :]).sum(axis=1))
    return M


def _norm_quadrature(alpha, f, lo, hi, nodes, kernel_fn, terms=None):
    x = np.linspace(lo, hi, nodes)
    h = (hi - lo) / (nodes - 1)
    w = np.full(nodes, h)
    w[[0, -1]] *= 0.5
    fx = f(x)
    M = _kernel_exponential(alpha, kernel_fn, x, h, terms)
    return float(np.real((w * np.conj(fx)) @ M @ (w * fx)))


def vertex_norm_bound(alpha, f, kernel_fn, lo=-1.0, hi=1.0, nodes=201, tol=0.01) -> NormBound:
    """Quadrature of int int conj f(x) exp(|alpha|^2 K(x, y)) f(y), with a refinement check."""
    with np.errstate(over="ignore", invalid="ignore"):
        coarse = _norm_quadrature(alpha, f, lo, hi, nodes, kernel_fn)
        fine = _norm_quadrature(alpha, f, lo, hi, 2 * nodes - 1, kernel_fn)
    finite = bool(np.isfinite(coarse) and np.isfinite(fine) and abs(fine - coarse) <= tol * abs(fine))
    return NormBound(fine, coarse, finite)


def truncated_vertex_norm(alpha, f, kernel_fn, lo=-1.0, hi=1.0, nodes=201, n_max=6):
    """Squared norm of sum_{n <= n_max} alpha^n/n! :phi^n:(f) applied to the vacuum.

    Uses <:phi^n(x)::phi^n(y):> = n! K(x, y)^n from the Wick machinery.
    """
    factors = []
    for n in range(n_max + 1):
        a = WickMonomial((slot("x", n),), "omega") if n else ONE
        b = WickMonomial((slot("y", n),), "omega") if n else ONE
        const = vacuum_expectation(wick_product(a, b))
        c = sum(const.terms.values(), Fraction(0))
        factors.append(Fraction(c, math.factorial(n) ** 2))
    x = np.linspace(lo, hi, 2 * nodes - 1)
    h = (hi - lo) / (x.size - 1)
    w = np.full(x.size, h)
    w[[0, -1]] *= 0.5
    fx = f(x)
    a2 = abs(alpha) ** 2
    # sum_n c_n z^n with c_n = n!/(n!)^2, realised through the same diagonal treatment
    M = np.zeros((x.size, x.size))
    for n, c in enumerate(factors):
        M = M + float(c) * _kernel_power(a2, kernel_fn, x, h, n)
    return float(np.real((w * np.conj(fx)) @ M @ (w * fx)))


def _kernel_power(a2, kernel_fn, x, h, n):
    with np.errstate(divide="ignore", invalid="ignore"):
        M = (a2 * kernel_fn(x[:, None], x[None, :])) ** n
    t, wt = np.polynomial.legendre.leggauss(24)
    t = 0.5 * (t + 1.0)
    u = 0.5 * h * t**4
    vals = (a2 * kernel_fn(x[:, None], x[:, None] + u[None, :])) ** n
    np.fill_diagonal(M, (vals * (0.5 * wt * 4.0 * t**3)[None, :]).sum(axis=1))
    return M
