"""Finite Krein model for the two-dimensional massless scalar.

Test functions are sampled on a uniform spatial grid with trapezoid weights.
The indefinite product comes from the logarithmic two-point kernel, the
positive product dominates it, and the abstract vector ``v0`` is adjoined
with prescribed pairings because it has no representative among test
functions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class KreinConstructionError(ValidationError):
    pass


def log_kernel(x, y, eps=1e-6, constant=0.0):
    """Equal-time massless kernel -(4 pi)^{-1} ln((x - y)^2 + eps^2) + constant."""
    d = np.subtract.outer(np.asarray(x, float), np.asarray(y, float))
    return -np.log(d**2 + eps**2) / (4.0 * np.pi) + constant


def trapezoid_weights(x):
    x = np.asarray(x, float)
    w = np.empty_like(x)
    dx = np.diff(x)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


def bump(x, center, width):
    """Gaussian test function with unit integral on the grid."""
    x = np.asarray(x, float)
    v = np.exp(-0.5 * ((x - center) / width) ** 2)
    return v / (trapezoid_weights(x) @ v)


@dataclass(frozen=True)
class TestBasis:
    """Basis functions (columns of ``functions``) sampled on ``grid``."""

    grid: np.ndarray
    functions: np.ndarray
    kernel_matrix: np.ndarray
    weights: np.ndarray

    __test__ = False

    @classmethod
    def gaussians(cls, centers, width, lo=-4.0, hi=4.0, nodes=257, eps=1e-6, constant=0.0, sign=1):
        x = np.linspace(lo, hi, nodes)
        F = np.column_stack([bump(x, c, width) for c in centers])
        return cls(x, F, sign * log_kernel(x, x, eps, constant), trapezoid_weights(x))

    def integral(self, f):
        return complex(self.weights @ f) if np.iscomplexobj(f) else float(self.weights @ f)

    def form(self, f, g):
        """Raw kernel form sum_kl conj f(x_k) w(x_k, x_l) g(x_l) with quadrature weights."""
        return complex((self.weights * np.conj(f)) @ self.kernel_matrix @ (self.weights * g))

    def gram(self):
        WF = self.weights[:, None] * self.functions
        return WF.T @ self.kernel_matrix @ WF

    def null_integral_restriction(self):
        """Gram restricted to coefficient combinations with zero integral."""
        ints = self.weights @ self.functions
        Q = _null_space(ints[None, :])
        return Q.T @ self.gram() @ Q


def _null_space(C, rtol=1e-13):
    u, s, vh = np.linalg.svd(np.atleast_2d(C))
    rank = int(np.sum(s > rtol * max(s.max(), 1e-300)))
    return vh[rank:].conj().T


@dataclass(frozen=True)
class KreinVector:
    """Grid test function plus a multiple of the adjoined vector v0."""

    grid_values: np.ndarray
    v0: complex = 0.0

    def __add__(self, other):
        return KreinVector(self.grid_values + other.grid_values, self.v0 + other.v0)

    def scale(self, c):
        return KreinVector(c * self.grid_values, c * self.v0)


def find_null_h(basis: TestBasis, h1, h2):
    """Real beta with <h1 + beta (h2 - h1), same> = 0; returns the unit-integral h."""
    d = h2 - h1
    a = basis.form(h1, h1).real
    b = basis.form(h1, d).real
    c = basis.form(d, d).real
    disc = b * b - a * c
    if c == 0 or disc < 0:
        raise KreinConstructionError("no real combination of the two bumps is null")
    roots = [(-b + s * np.sqrt(disc)) / c for s in (1.0, -1.0)]
    beta = min(roots, key=abs)
    h = h1 + beta * d
    return h / basis.integral(h), beta


@dataclass(frozen=True)
class KreinModel:
    """Krein model built on a TestBasis.

    ``sign`` = -1 gives the variant for the field whose two-point function
    is the negative of the massless kernel; the kernel stored in ``basis``
    already carries that sign.
    """

    basis: TestBasis
    h: np.ndarray
    sign: int
    perp: np.ndarray  # grid vectors spanning D0-perp (columns)
    quotient: np.ndarray  # grid vectors spanning D0-perp / I_h, orthogonal in the positive form
    ideal: np.ndarray  # grid vectors spanning I_h
    null_tol: float = 1e-10
    meta: dict = field(default_factory=dict)

    # ---- forms -----------------------------------------------------
    def integral(self, f):
        return self.basis.integral(f)

    def decompose(self, f):
        f = np.asarray(f)
        c = self.integral(f)
        return f - c * self.h, c

    def raw(self, f, g):
        return self.basis.form(f, g)

    def indefinite_form(self, f, g):
        """<f0, g0> + conj(int f) <h, g> + (int g) <f, h>."""
        f0, cf = self.decompose(f)
        g0, cg = self.decompose(g)
        return self.raw(f0, g0) + np.conj(cf) * self.raw(self.h, g) + cg * self.raw(f, self.h)

    def positive_form(self, f, g):
        """sign <f0, g0> + <f, h><h, g> + conj(int f) int g."""
        f0, cf = self.decompose(f)
        g0, cg = self.decompose(g)
        return (
            self.sign * self.raw(f0, g0)
            + self.raw(f, self.h) * self.raw(self.h, g)
            + np.conj(cf) * cg
        )

    def krein_indefinite(self, a: KreinVector, b: KreinVector):
        """Indefinite form extended by <v0, f> = int f and <v0, v0> = 0."""
        out = self.indefinite_form(a.grid_values, b.grid_values)
        out += np.conj(a.v0) * self.integral(b.grid_values)
        out += np.conj(self.integral(a.grid_values)) * b.v0
        return complex(out)

    def krein_positive(self, a: KreinVector, b: KreinVector):
        """Positive form extended by (v0, f) = <h, f> and (v0, v0) = 1."""
        out = self.positive_form(a.grid_values, b.grid_values)
        out += np.conj(a.v0) * self.raw(self.h, b.grid_values)
        out += self.raw(a.grid_values, self.h) * b.v0
        out += np.conj(a.v0) * b.v0
        return complex(out)

    # ---- model space ------------------------------------------------
    @property
    def dim(self):
        return self.quotient.shape[1] + 2

    def realize(self, coords) -> KreinVector:
        """Coordinates (quotient block, v0, h) -> KreinVector."""
        coords = np.asarray(coords)
        q = self.quotient.shape[1]
        grid = self.quotient @ coords[:q] + coords[q + 1] * self.h
        return KreinVector(grid, coords[q])

    def gram(self, kind="positive"):
        form = self.krein_positive if kind == "positive" else self.krein_indefinite
        vecs = [self.realize(e) for e in np.eye(self.dim)]
        return np.array([[form(a, b) for b in vecs] for a in vecs])

    def metric_operator(self):
        """Identity (times sign) on the quotient block, h <-> v0 swap."""
        q = self.quotient.shape[1]
        eta = np.zeros((self.dim, self.dim))
        eta[:q, :q] = self.sign * np.eye(q)
        eta[q, q + 1] = eta[q + 1, q] = 1.0
        return eta

    def null_ideal(self):
        return self.ideal

    def dimensions(self):
        n = self.basis.functions.shape[1] + 1
        return {
            "test_space": n,
            "null_integral": n - 1,
            "perp": self.perp.shape[1],
            "ideal": self.ideal.shape[1],
            "quotient": self.quotient.shape[1],
            "model": self.dim,
        }

    def to_json(self):
        return json.dumps(
            {
                "sign": self.sign,
                "grid": {"lo": float(self.basis.grid[0]), "hi": float(self.basis.grid[-1]), "nodes": len(self.basis.grid)},
                "dimensions": self.dimensions(),
                "gram_positive": _jsonable(self.gram("positive")),
                "gram_indefinite": _jsonable(self.gram("indefinite")),
                "metric": self.metric_operator().tolist(),
                **self.meta,
            }
        )


def _jsonable(m):
    m = np.asarray(m)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def build_model(basis: TestBasis, h1=None, h2=None, sign=1, null_tol=1e-10, regularization=0.0) -> KreinModel:
    """Construct h, D0-perp, I_h and the quotient block.

    ``basis`` must carry the signed kernel; ``regularization`` adds a
    multiple of the identity to the restricted positive Gram, which makes the
    null ideal trivial.
    """
    x = basis.grid
    if h1 is None:
        h1 = bump(x, x[0] + 0.125 * (x[-1] - x[0]), 0.05 * (x[-1] - x[0]))
    if h2 is None:
        h2 = bump(x, x[-1] - 0.125 * (x[-1] - x[0]), 0.05 * (x[-1] - x[0]))
    h, beta = find_null_h(basis, h1, h2)
    F = np.column_stack([basis.functions, h])
    ints = basis.weights @ F
    hpair = np.array([basis.form(h, F[:, k]).real for k in range(F.shape[1])])
    coeff = _null_space(np.vstack([ints, hpair]))
    perp = F @ coeff
    WP = basis.weights[:, None] * perp
    P = sign * (WP.T @ basis.kernel_matrix @ WP)
    P = 0.5 * (P + P.T) + regularization * np.eye(P.shape[0])
    lam, vec = np.linalg.eigh(P)
    scale = max(abs(lam).max(), 1e-300)
    if lam.min() < -1e-12 * max(scale, 1.0):
        raise KreinConstructionError(f"positive form is negative on the null-integral space ({lam.min():.3e})")
    keep = lam > null_tol * scale
    quotient = perp @ vec[:, keep]
    ideal = perp @ vec[:, ~keep]
    return KreinModel(basis, h, sign, perp, quotient, ideal, null_tol, {"beta": float(beta)})


def massless_model(n_basis=12, width=0.5, sign=1, eps=1e-6, constant=0.0, nodes=257, lo=-4.0, hi=4.0, **kw):
    """Convenience builder with Gaussian basis functions spread over the grid."""
    span = hi - lo
    centers = np.linspace(lo + 0.125 * span, hi - 0.125 * span, n_basis)
    basis = TestBasis.gaussians(centers, width, lo, hi, nodes, eps, constant, sign)
    return build_model(basis, sign=sign, **kw)
