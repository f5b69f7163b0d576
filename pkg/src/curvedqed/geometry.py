"""Conformal-gauge geometry in two dimensions.

The metric is ``g = exp(2 sigma) diag(1, -1)``.  Everything here is a pure
function of an immutable :class:`ConformalGeometry`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, DomainError
from .expr import SigmaExpression, parse_sigma

ETA = np.diag([1.0, -1.0])
# Levi-Civita symbol with eps[0, 1] = +1
EPS = np.array([[0.0, 1.0], [-1.0, 0.0]])


class Point(NamedTuple):
    x0: float
    x1: float


def as_point(p) -> Point:
    return p if isinstance(p, Point) else Point(float(p[0]), float(p[1]))


# ----------------------------------------------------------------------
# conformal factor sources


def _fd_axis(values, h, axis):
    """Fourth-order first derivative along ``axis`` with one-sided edges."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    fwd = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
    mixed = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h)
    out[0] = np.tensordot(fwd, v[:5], axes=1)
    out[1] = np.tensordot(mixed, v[:5], axes=1)
    out[-1] = -np.tensordot(fwd, v[::-1][:5], axes=1)
    out[-2] = -np.tensordot(mixed, v[::-1][:5], axes=1)
    return np.moveaxis(out, 0, axis)


class GridSigma:
    """Conformal factor sampled on a rectangular grid.

    Derivatives come from fourth-order difference stencils applied to the
    samples; values between nodes use bicubic interpolation of each
    derivative table.
    """

    MAX_ORDER = 4

    def __init__(self, bounds, samples, source="<grid>"):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or min(samples.shape) < 5:
            raise ValueError("grid needs at least 5 samples along each axis")
        if not np.all(np.isfinite(samples)):
            raise ValueError("grid samples must be finite")
        self.bounds = tuple(float(b) for b in bounds)
        self.samples = samples
        self.source = source
        n0, n1 = samples.shape
        self.t0 = np.linspace(self.bounds[0], self.bounds[1], n0)
        self.t1 = np.linspace(self.bounds[2], self.bounds[3], n1)
        h0, h1 = self.t0[1] - self.t0[0], self.t1[1] - self.t1[0]
        tables = {(0, 0): samples}
        for order in range(1, self.MAX_ORDER + 1):
            for i in range(order + 1):
                j = order - i
                if i > 0:
                    tables[(i, j)] = _fd_axis(tables[(i - 1, j)], h0, 0)
                else:
                    tables[(i, j)] = _fd_axis(tables[(i, j - 1)], h1, 1)
        self._splines = {k: RectBivariateSpline(self.t0, self.t1, v, kx=3, ky=3) for k, v in tables.items()}

    @property
    def is_zero(self):
        return bool(np.all(self.samples == 0.0))

    def derivative(self, i=0, j=0):
        if i + j > self.MAX_ORDER:
            raise ValueError(f"derivative order {i + j} exceeds {self.MAX_ORDER}")
        spline = self._splines[(i, j)]

        def fn(x0, x1):
            return spline.ev(x0, x1)

        return fn

    def __call__(self, x0, x1):
        return self.derivative(0, 0)(x0, x1)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 6:
                raise ValueError("grid header must read: x0_min x0_max x1_min x1_max n0 n1")
            bounds = [float(v) for v in header[:4]]
            n0, n1 = int(header[4]), int(header[5])
            data = np.array(fh.read().split(), dtype=float)
        if data.size != n0 * n1:
            raise ValueError(f"grid expects {n0 * n1} samples, found {data.size}")
        return cls(bounds, data.reshape(n0, n1), source=str(path))


# ----------------------------------------------------------------------
# geometry container


@dataclass(frozen=True)
class ConformalGeometry:
    """Two-dimensional metric exp(2 sigma) eta on a rectangular domain."""

    sigma: SigmaExpression | GridSigma
    domain: tuple = (-np.inf, np.inf, -np.inf, np.inf)
    _flat: bool = field(default=False, init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.sigma, GridSigma) and self.domain == (-np.inf, np.inf, -np.inf, np.inf):
            object.__setattr__(self, "domain", self.sigma.bounds)
        object.__setattr__(self, "_flat", bool(self.sigma.is_zero))

    @classmethod
    def from_expression(cls, text, domain=None):
        sig = parse_sigma(text)
        return cls(sig) if domain is None else cls(sig, tuple(domain))

    @classmethod
    def flat(cls):
        return cls.from_expression("0")

    @property
    def is_flat(self):
        return self._flat

    def contains(self, p) -> bool:
        a, b, c, d = self.domain
        return a <= p[0] <= b and c <= p[1] <= d

    def check(self, *points):
        for p in points:
            if not (np.isfinite(p[0]) and np.isfinite(p[1])):
                raise DomainError(f"non-finite point {tuple(p)}")
            if not self.contains(p):
                raise DomainError(f"point {tuple(p)} outside domain {self.domain}")

    def d(self, i, j, x0, x1):
        """Partial derivative d^i/dx0^i d^j/dx1^j of sigma, broadcast over inputs."""
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        out = np.asarray(self.sigma.derivative(i, j)(x0, x1), dtype=float)
        shape = np.broadcast(x0, x1).shape
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def metric(self, p):
        return np.exp(2 * float(self.d(0, 0, p[0], p[1]))) * ETA

    def inverse_metric(self, p):
        return np.exp(-2 * float(self.d(0, 0, p[0], p[1]))) * ETA


# ----------------------------------------------------------------------
# frames, connection, curvature


class Frame(NamedTuple):
    e: np.ndarray  # e[mu, a]
    E: np.ndarray  # E[a, mu]


def zweibein_at(geom: ConformalGeometry, p) -> Frame:
    p = as_point(p)
    geom.check(p)
    s = float(geom.d(0, 0, *p))
    return Frame(np.exp(s) * np.eye(2), np.exp(-s) * np.eye(2))


def zweibein_relations(geom: ConformalGeometry, p, frame: Frame | None = None):
    """Residuals of the five frame identities at ``p`` (all should vanish)."""
    frame = zweibein_at(geom, p) if frame is None else frame
    e, E = frame.e, frame.E
    g = geom.metric(p)
    ginv = geom.inverse_metric(p)
    eta_inv = ETA
    return {
        "metric_from_frame": np.max(np.abs(np.einsum("ma,nb,ab->mn", e, e, ETA) - g)),
        "frame_orthonormal": np.max(np.abs(np.einsum("mn,ma,nb->ab", ginv, e, e) - eta_inv)),
        "inverse_left": np.max(np.abs(np.einsum("am,mb->ab", E, e) - np.eye(2))),
        "inverse_right": np.max(np.abs(np.einsum("ma,an->mn", e, E) - np.eye(2))),
        "inverse_metric": np.max(np.abs(np.einsum("am,bn,mn->ab", E, E, g) - ETA)),
    }


def spin_connection_at(geom: ConformalGeometry, p):
    """Return (omega_0, omega_1) with omega_mu the 01 frame component.

    The 10 component is minus this value.
    """
    p = as_point(p)
    geom.check(p)
    return (-float(geom.d(0, 1, *p)), -float(geom.d(1, 0, *p)))


def christoffel(geom: ConformalGeometry, p):
    """Gamma[rho, mu, nu] for the conformal metric."""
    s0 = float(geom.d(1, 0, *p))
    s1 = float(geom.d(0, 1, *p))
    ds = np.array([s0, s1])
    G = np.einsum("rm,n->rmn", np.eye(2), ds) + np.einsum("rn,m->rmn", np.eye(2), ds)
    G -= np.einsum("mn,rl,l->rmn", ETA, ETA, ds)
    return G


def _christoffel_derivative(geom, p):
    """dGamma[lam, rho, mu, nu] = d_lam Gamma^rho_{mu nu}."""
    h = np.array(
        [
            [float(geom.d(2, 0, *p)), float(geom.d(1, 1, *p))],
            [float(geom.d(1, 1, *p)), float(geom.d(0, 2, *p))],
        ]
    )
    I = np.eye(2)
    dG = np.einsum("rm,ln->lrmn", I, h) + np.einsum("rn,lm->lrmn", I, h)
    dG -= np.einsum("mn,rk,lk->lrmn", ETA, ETA, h)
    return dG


def riemann_tensor(geom: ConformalGeometry, p):
    """R[rho, s, mu, nu] = d_mu G^rho_{nu s} - d_nu G^rho_{mu s} + G G - G G."""
    p = as_point(p)
    G = christoffel(geom, p)
    dG = _christoffel_derivative(geom, p)
    R = np.einsum("mrns->rsmn", dG) - np.einsum("nrms->rsmn", dG)
    R += np.einsum("rml,lns->rsmn", G, G) - np.einsum("rnl,lms->rsmn", G, G)
    return R


def riemann_lowered(geom: ConformalGeometry, p):
    return np.einsum("ar,rsmn->asmn", geom.metric(p), riemann_tensor(geom, p))


@dataclass(frozen=True)
class CurvatureReport:
    """Curvature components at a point.

    ``riemann_0101`` is R^0_{101}; the Ricci tensor is R_{mu nu} = R^rho_{mu rho nu}
    and ``scalar`` is g^{ij} R_{ij}.  ``table_scalar`` is the closed-form entry
    -exp(-2 sigma) box(sigma) and ``table_factor`` = scalar / table_scalar,
    the constant relating the two conventions.
    """

    point: Point
    riemann_0101: float
    ricci_00: float
    ricci_11: float
    ricci_01: float
    scalar: float
    table_scalar: float
    table_factor: float = 2.0

    def scalar_from_ricci(self, geom: ConformalGeometry) -> float:
        ginv = geom.inverse_metric(self.point)
        ric = np.array([[self.ricci_00, self.ricci_01], [self.ricci_01, self.ricci_11]])
        return float(np.einsum("ij,ij->", ginv, ric))


# first-principles scalar curvature divided by the tabulated closed form
TABLE_FACTOR = 2.0


def curvature_at(geom: ConformalGeometry, p) -> CurvatureReport:
    p = as_point(p)
    geom.check(p)
    if geom.is_flat:
        return CurvatureReport(p, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, TABLE_FACTOR)
    R = riemann_tensor(geom, p)
    ric = np.einsum("rmrn->mn", R)
    scalar = float(np.einsum("ij,ij->", geom.inverse_metric(p), ric))
    wave = float(geom.d(2, 0, *p) - geom.d(0, 2, *p))
    table = -np.exp(-2 * float(geom.d(0, 0, *p))) * wave
    return CurvatureReport(p, float(R[0, 1, 0, 1]), float(ric[0, 0]), float(ric[1, 1]), float(ric[0, 1]), scalar, table, TABLE_FACTOR)


def ricci_scalar(geom: ConformalGeometry, x0, x1):
    """Vectorised scalar curvature -2 exp(-2 sigma) (d0^2 - d1^2) sigma."""
    wave = geom.d(2, 0, x0, x1) - geom.d(0, 2, x0, x1)
    return -TABLE_FACTOR * np.exp(-2 * geom.d(0, 0, x0, x1)) * wave


# ----------------------------------------------------------------------
# Chebyshev collocation helpers


def _cheb(n):
    """Chebyshev-Lobatto nodes on [0, 1] (increasing) and differentiation matrix."""
    k = np.arange(n + 1)
    x = np.cos(np.pi * k / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** k
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    # map [-1, 1] -> [0, 1] and reverse so nodes increase
    lam = (1.0 - x) / 2.0
    D = -2.0 * D
    return lam, D


def _clenshaw_curtis(n):
    """Quadrature weights on [0, 1] for the Lobatto nodes of ``_cheb``."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    interior = slice(1, n)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n**2 - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k**2 - 1)
        v -= np.cos(n * theta[interior]) / (n**2 - 1)
    else:
        w[0] = w[n] = 1.0 / n**2
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k**2 - 1)
    w[interior] = 2.0 * v / n
    return w / 2.0


def barycentric_matrix(nodes, targets):
    """Interpolation matrix from Chebyshev-Lobatto ``nodes`` to ``targets``."""
    n = len(nodes) - 1
    w = (-1.0) ** np.arange(n + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = targets[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    M = w[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    M[rows] = exact[rows].astype(float)
    return M


# ----------------------------------------------------------------------
# world function


@dataclass(frozen=True)
class WorldFunctionValue:
    """Half signed squared geodesic distance between x (end) and x' (start).

    ``grad_x`` and ``grad_xp`` are coordinate gradients with respect to the
    first and second argument.  ``path`` holds the geodesic sampled on the
    collocation nodes ``lam`` running from x' (lam = 0) to x (lam = 1).
    """

    value: float
    grad_x: np.ndarray
    grad_xp: np.ndarray
    lam: np.ndarray
    path: np.ndarray
    velocity: np.ndarray
    residual: float

    @property
    def tangent_at_start(self):
        """Initial velocity at x'; equals the normal coordinates of x about x'."""
        return self.velocity[:, 0]

    def hamilton_jacobi_residual(self, geom):
        x = self.path[:, -1]
        ginv = geom.inverse_metric(x)
        return abs(2 * self.value - self.grad_x @ ginv @ self.grad_x)


_NODES = 33


@dataclass(frozen=True)
class GeodesicSolver:
    """Damped Newton on a Chebyshev collocation of the geodesic equation."""

    interior: int = _NODES
    tol: float = 1e-10
    step_tol: float = 1e-14
    accept: float = 1e-7
    max_iter: int = 60

    def solve(self, geom: ConformalGeometry, x, xp):
        """Batch solve; ``x`` and ``xp`` have shape (B, 2).

        Returns (lam, path, velocity, residual) with path of shape (B, 2, n+1).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xp = np.atleast_2d(np.asarray(xp, dtype=float))
        B = max(len(x), len(xp))
        x = np.broadcast_to(x, (B, 2))
        xp = np.broadcast_to(xp, (B, 2))
        n = self.interior + 1
        lam, D = _cheb_cached(n)
        D2 = D @ D
        path = xp[:, :, None] + (x - xp)[:, :, None] * lam[None, None, :]
        if geom.is_flat:
            vel = np.broadcast_to((x - xp)[:, :, None], path.shape).copy()
            return lam, path, vel, np.zeros(B)
        inner = slice(1, n)
        m = n - 1
        Di = D[inner][:, inner]
        D2i = D2[inner][:, inner]

        def residual(P):
            V = P @ D.T
            A = P @ D2.T
            s0 = geom.d(1, 0, P[:, 0], P[:, 1])
            s1 = geom.d(0, 1, P[:, 0], P[:, 1])
            S = V[:, 0] ** 2 + V[:, 1] ** 2
            Q = V[:, 0] * V[:, 1]
            F = np.stack([A[:, 0] + s0 * S + 2 * s1 * Q, A[:, 1] + s1 * S + 2 * s0 * Q], axis=1)
            return F[:, :, inner], V, S, Q, s0, s1

        F, V, S, Q, s0, s1 = residual(path)
        norm = np.max(np.abs(F), axis=(1, 2))
        scale = 1.0 + np.max(np.abs(x - xp), axis=1) ** 2
        active = norm > self.tol * scale
        for _ in range(self.max_iter):
            if not np.any(active):
                break
            idx = np.nonzero(active)[0]
            P = path[idx]
            Fa, Va, Sa, Qa, s0a, s1a = F[idx], V[idx], S[idx], Q[idx], s0[idx], s1[idx]
            s00 = geom.d(2, 0, P[:, 0], P[:, 1])[:, inner]
            s01 = geom.d(1, 1, P[:, 0], P[:, 1])[:, inner]
            s11 = geom.d(0, 2, P[:, 0], P[:, 1])[:, inner]
            Si, Qi = Sa[:, inner], Qa[:, inner]
            v0, v1 = Va[:, 0, inner], Va[:, 1, inner]
            a0, a1 = s0a[:, inner], s1a[:, inner]
            loc = [
                [s00 * Si + 2 * s01 * Qi, s01 * Si + 2 * s11 * Qi],
                [s01 * Si + 2 * s00 * Qi, s11 * Si + 2 * s01 * Qi],
            ]
            dv = [
                [2 * a0 * v0 + 2 * a1 * v1, 2 * a0 * v1 + 2 * a1 * v0],
                [2 * a1 * v0 + 2 * a0 * v1, 2 * a1 * v1 + 2 * a0 * v0],
            ]
            J = np.zeros((len(idx), 2 * m, 2 * m))
            for a in range(2):
                for b in range(2):
                    blk = dv[a][b][:, :, None] * Di[None, :, :]
                    blk[:, np.arange(m), np.arange(m)] += loc[a][b]
                    if a == b:
                        blk += D2i[None]
                    J[:, a * m:(a + 1) * m, b * m:(b + 1) * m] = blk
            step = np.linalg.solve(J, -Fa.reshape(len(idx), 2 * m, 1))[..., 0].reshape(len(idx), 2, m)
            t = np.ones(len(idx))
            cur = np.max(np.abs(Fa), axis=(1, 2))
            for _ls in range(30):
                trial = P.copy()
                trial[:, :, inner] += t[:, None, None] * step
                Ft, Vt, St, Qt, s0t, s1t = residual(trial)
                new = np.max(np.abs(Ft), axis=(1, 2))
                ok = (new < cur) | (new <= self.tol * scale[idx])
                if np.all(ok) or _ls == 29:
                    break
                t = np.where(ok, t, 0.5 * t)
            path[idx] = trial
            F[idx], V[idx], S[idx], Q[idx], s0[idx], s1[idx] = Ft, Vt, St, Qt, s0t, s1t
            norm[idx] = new
            moved = np.max(np.abs(t[:, None, None] * step), axis=(1, 2))
            active = norm > self.tol * scale
            active[idx[moved <= self.step_tol * scale[idx]]] = False
        bad = norm > self.accept * scale
        if np.any(bad):
            worst = float(np.max(norm[bad] / scale[bad]))
            raise ConvergenceError("geodesic boundary-value solve did not converge", residual=worst)
        return lam, path, V, norm


_CHEB = {}


def _cheb_cached(n):
    if n not in _CHEB:
        lam, D = _cheb(n)
        _CHEB[n] = (lam, D, _clenshaw_curtis(n))
    return _CHEB[n][0], _CHEB[n][1]


def _cc_weights(n):
    _cheb_cached(n)
    return _CHEB[n][2]


def world_function_batch(geom: ConformalGeometry, x, xp, solver: GeodesicSolver | None = None):
    """Vectorised world function.

    Returns (value, grad_x, grad_xp, lam, path, velocity, residual).
    """
    solver = solver or GeodesicSolver()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    lam, path, vel, res = solver.solve(geom, x, xp)
    n = len(lam) - 1
    if geom.is_flat:
        dx = path[:, :, -1] - path[:, :, 0]
        value = 0.5 * (dx[:, 0] ** 2 - dx[:, 1] ** 2)
        gx = dx @ ETA
        return value, gx, -gx, lam, path, vel, res
    conf = np.exp(2 * geom.d(0, 0, path[:, 0], path[:, 1]))
    lagr = conf * (vel[:, 0] ** 2 - vel[:, 1] ** 2)
    value = 0.5 * lagr @ _cc_weights(n)
    gx = conf[:, -1, None] * (vel[:, :, -1] @ ETA)
    gxp = -conf[:, 0, None] * (vel[:, :, 0] @ ETA)
    return value, gx, gxp, lam, path, vel, res


def world_function(geom: ConformalGeometry, x, xp, solver: GeodesicSolver | None = None) -> WorldFunctionValue:
    x, xp = as_point(x), as_point(xp)
    geom.check(x, xp)
    value, gx, gxp, lam, path, vel, res = world_function_batch(geom, [x], [xp], solver)
    return WorldFunctionValue(float(value[0]), gx[0], gxp[0], lam, path[0], vel[0], float(res[0]))


def sigma_bar(geom, x, xp) -> float:
    return world_function(geom, x, xp).value


# ----------------------------------------------------------------------
# Van Vleck determinant


def _mixed_hessian(geom, x, xp, h):
    """d^2 sigma_bar / dx^mu dx'^nu by Richardson extrapolated central differences."""
    x = np.asarray(x, dtype=float)
    pts = []
    for step in (h, h / 2):
        for mu in range(2):
            for sgn in (1, -1):
                q = x.copy()
                q[mu] += sgn * step
                pts.append(q)
    pts = np.array(pts)
    _, _, gxp, *_ = world_function_batch(geom, pts, np.broadcast_to(xp, pts.shape))
    gxp = gxp.reshape(2, 2, 2, 2)  # step, mu, sign, nu
    central = (gxp[:, :, 0] - gxp[:, :, 1]) / (2 * np.array([h, h / 2]))[:, None, None]
    return (4 * central[1] - central[0]) / 3


def van_vleck(geom: ConformalGeometry, x, xp, h: float = 1e-2) -> float:
    x, xp = as_point(x), as_point(xp)
    geom.check(x, xp)
    if geom.is_flat:
        return 1.0
    M = _mixed_hessian(geom, x, xp, h)
    det = np.linalg.det(-M)
    s, sp_ = float(geom.d(0, 0, *x)), float(geom.d(0, 0, *xp))
    return float(-np.exp(-2 * s) * det * np.exp(-2 * sp_))


# ----------------------------------------------------------------------
# biscalars and normal coordinates


@dataclass(frozen=True)
class Biscalar:
    """A function of a point pair, optionally declared symmetric."""

    evaluator: Callable
    symmetric: bool = True
    name: str = ""

    def __call__(self, x, xp):
        return self.evaluator(as_point(x), as_point(xp))

    def symmetry_defect(self, x, xp):
        a, b = self(x, xp), self(xp, x)
        return abs(a - b) / max(1.0, abs(a), abs(b))


def world_function_biscalar(geom):
    return Biscalar(lambda x, xp: world_function(geom, x, xp).value, True, "sigma_bar")


def van_vleck_biscalar(geom):
    return Biscalar(lambda x, xp: van_vleck(geom, x, xp), True, "van_vleck")


def normal_coordinates(geom: ConformalGeometry, y, x):
    """Riemann normal coordinates of ``x`` about ``y`` (coordinate basis at y)."""
    return world_function(geom, x, y).tangent_at_start.copy()


def merged_distance(geom: ConformalGeometry, y, x1, x2, radius: float | None = None) -> float:
    """Curvature-corrected squared separation of x1 and x2 near the base point y."""
    y, x1, x2 = as_point(y), as_point(x1), as_point(x2)
    geom.check(y, x1, x2)
    if radius is not None:
        for p in (x1, x2):
            if max(abs(p[0] - y[0]), abs(p[1] - y[1])) > radius:
                raise DomainError(f"point {tuple(p)} outside normal patch of radius {radius} about {tuple(y)}")
    g = geom.metric(y)
    if geom.is_flat:
        d = np.subtract(x2, x1)
        return float(d @ g @ d)
    try:
        xi1 = normal_coordinates(geom, y, x1)
        xi2 = normal_coordinates(geom, y, x2)
    except ConvergenceError as exc:
        raise DomainError("points outside the normal patch") from exc
    d = xi2 - xi1
    R = riemann_lowered(geom, y)
    return float(d @ g @ d - np.einsum("manb,a,b,m,n->", R, xi1, xi2, d, d) / 3.0)


def exponential_map(geom: ConformalGeometry, y, xi, rtol=1e-12, atol=1e-14) -> Point:
    """Point reached by the geodesic from ``y`` with initial velocity ``xi`` at parameter 1."""
    y = as_point(y)
    xi = np.asarray(xi, dtype=float)
    if geom.is_flat or not np.any(xi):
        return Point(y[0] + xi[0], y[1] + xi[1])

    def rhs(_, state):
        p, v = state[:2], state[2:]
        G = christoffel(geom, p)
        return np.concatenate([v, -np.einsum("rmn,m,n->r", G, v, v)])

    sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate([y, xi]), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise ConvergenceError(f"geodesic shooting failed: {sol.message}", float("nan"))
    end = sol.y[:2, -1]
    return Point(float(end[0]), float(end[1]))
