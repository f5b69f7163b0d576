"""Operator solution of massless two-dimensional QED and checks of its identities.

The solution is built from a massive scalar ``Sigma`` with m^2 = e^2/pi, a
massless scalar ``eta`` whose two-point function carries the opposite sign,
and a free massless spinor represented through vertex operators.  On the
physical sector every observable is a function of ``Sigma`` alone.

Index conventions: metric exp(2 sigma) diag(1, -1), epsilon_{01} = +1,
dual derivative  d~_mu f = sqrt(-g) epsilon_{mu nu} d^nu f, which is
(-d_1 f, -d_0 f) in conformal coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy import integrate
from scipy.linalg import eigh

from .errors import ConvergenceError, UnsupportedOrderError, ValidationError
from .geometry import ConformalGeometry
from .ope import MAX_DEGREE
from .parametrix import ModelParameters
from .wick import FieldLabel, TwoPointKernel, vertex_two_point

SQRT_PI = math.sqrt(math.pi)
ETA_FLAT = np.diag([1.0, -1.0])
EPSILON = np.array([[0.0, 1.0], [-1.0, 0.0]])
# chiral components: +1 moves right (depends on t - x), -1 moves left
CHIRALITIES = (1, -1)


def verification_record(check, inputs, value, tolerance, passed):
    """Uniform JSON-ready record used by every verification routine."""
    return {"check": check, "inputs": inputs, "value": value, "tolerance": tolerance, "pass": bool(passed)}


# ----------------------------------------------------------------------
# assembled fields


@dataclass(frozen=True)
class SolutionFields:
    """Coupling, background and kernel signs of the assembled solution.

    Composite accessors come in two flavours: ``linear_form`` returns the
    field as a list of (coefficient, FieldLabel) pairs over the basic fields,
    and the numeric accessors evaluate physical-space fields from Sigma data
    (value and coordinate gradient) at a point.
    """

    e: float
    geom: ConformalGeometry
    eta_sign: int = -1
    sigma_sign: int = 1

    @property
    def m2(self):
        return self.e * self.e / math.pi

    @property
    def m(self):
        return self.e / SQRT_PI

    def conformal_factor(self, x):
        return float(self.geom.d(0, 0, x[0], x[1]))

    def metric(self, x):
        return math.exp(2 * self.conformal_factor(x)) * ETA_FLAT

    def inverse_metric(self, x):
        return math.exp(-2 * self.conformal_factor(x)) * ETA_FLAT

    def volume_form(self, x):
        """eta_{mu nu} = sqrt(-g) epsilon_{mu nu}."""
        return math.exp(2 * self.conformal_factor(x)) * EPSILON

    @staticmethod
    def dual(grad):
        grad = np.asarray(grad)
        return np.array([-grad[1], -grad[0]])

    # physical-space accessors
    def potential(self, grad):
        return -(SQRT_PI / self.e) * self.dual(grad)

    def field_strength(self, x, value):
        return (self.e / SQRT_PI) * self.volume_form(x) * value

    def field_strength_from_box(self, x, box_value):
        """F_{mu nu} = -(sqrt(pi)/e) eta_{mu nu} (box Sigma); equals field_strength on shell."""
        return -(SQRT_PI / self.e) * self.volume_form(x) * box_value

    def current(self, grad):
        return -self.dual(grad) / SQRT_PI

    def axial_current(self, grad):
        return -np.asarray(grad) / SQRT_PI

    def linear_form(self, name, mu=None, x=None):
        """Composite field as (coefficient, FieldLabel) pairs.

        Names: ``A`` and ``J`` (physical, Sigma only), ``A_full`` and
        ``J_full`` (with eta and the free-current potential ``phi``), ``L``
        (longitudinal current) and ``a`` (e times ``L``), ``F`` (needs ``x``,
        returns the (mu, nu) entry for ``mu`` = (mu, nu)).
        """
        def dual_terms(field_name, coeff):
            # d~_0 = -d_1, d~_1 = -d_0
            axis = 1 - mu
            return [(-coeff, FieldLabel(field_name, derivative=(axis,)))]

        if name == "A":
            return dual_terms("Sigma", -SQRT_PI / self.e)
        if name == "A_full":
            return dual_terms("Sigma", -SQRT_PI / self.e) + dual_terms("eta", -SQRT_PI / self.e)
        if name == "J":
            return dual_terms("Sigma", -1 / SQRT_PI)
        if name == "J_full":
            return sum((dual_terms(f, -1 / SQRT_PI) for f in ("Sigma", "eta", "phi")), [])
        if name == "L":
            return dual_terms("phi", -1 / SQRT_PI) + dual_terms("eta", -1 / SQRT_PI)
        if name == "a":
            return [(self.e * c, lab) for c, lab in self.linear_form("L", mu)]
        if name == "F":
            a, b = mu
            coeff = (self.e / SQRT_PI) * self.volume_form(x)[a, b]
            return [(coeff, FieldLabel("Sigma"))] if coeff else []
        raise ValidationError(f"unknown composite field {name!r}")

    def sigma_sector_element(self, form, value, grad):
        """<0| form |k> on the Sigma Fock space, given <0|Sigma|k> and its gradient.

        Labels of other fields act on their own vacuum and contribute zero.
        """
        total = 0j
        for coeff, label in form:
            if label.field != "Sigma":
                continue
            total += coeff * (grad[label.derivative[0]] if label.derivative else value)
        return total


def assemble(params: ModelParameters | None = None, geom: ConformalGeometry | None = None, e=None) -> SolutionFields:
    """Solution fields for coupling ``e`` (default: the one giving mass ``params.m``)."""
    if e is None:
        params = params or ModelParameters()
        e = SQRT_PI * params.m
    if not e > 0:
        raise ValidationError("coupling must be positive")
    return SolutionFields(float(e), geom or ConformalGeometry.flat())


# ----------------------------------------------------------------------
# sampled modes and field equations


def central_weights(deriv, order):
    """Central finite-difference weights on offsets -p..p with accuracy ``order``."""
    p = (deriv + 1) // 2 - 1 + order // 2
    offsets = np.arange(-p, p + 1)
    A = np.vander(offsets, increasing=True).T.astype(float)
    rhs = np.zeros(len(offsets))
    rhs[deriv] = math.factorial(deriv)
    return offsets, np.linalg.solve(A, rhs)


def periodic_derivative(u, h, deriv, order=8):
    offsets, w = central_weights(deriv, order)
    out = np.zeros_like(u)
    for o, c in zip(offsets, w):
        out = out + c * np.roll(u, -o)
    return out / h**deriv


def _stencil_norm(deriv, order, h):
    return np.abs(central_weights(deriv, order)[1]).sum() / h**deriv


@dataclass(frozen=True)
class ModeSample:
    """Stationary mode exp(-i omega t) u(x) on a periodic grid at t = 0."""

    x: np.ndarray
    u: np.ndarray
    omega: float
    sigma: np.ndarray
    mass2: float

    @property
    def spacing(self):
        return float(self.x[1] - self.x[0])


def plane_wave_sample(k_index, mass2, nodes=256, length=2 * math.pi):
    x = np.arange(nodes) * (length / nodes)
    k = 2 * math.pi * k_index / length
    omega = math.sqrt(k * k + mass2)
    return ModeSample(x, np.exp(1j * k * x), omega, np.zeros(nodes), mass2)


def static_modes(geom: ConformalGeometry, mass2, nodes=128, length=2 * math.pi, count=3, order=2):
    """Lowest modes of -u'' + mass2 exp(2 sigma) u = omega^2 u with a periodic stencil."""
    x = np.arange(nodes) * (length / nodes)
    sig = geom.d(0, 0, np.zeros(nodes), x)
    if np.max(np.abs(geom.d(1, 0, np.zeros(nodes), x))) > 0:
        raise ValidationError("static modes need a time independent conformal factor")
    h = length / nodes
    offsets, w = central_weights(2, order)
    D2 = np.zeros((nodes, nodes))
    for o, c in zip(offsets, w):
        D2 += c * np.roll(np.eye(nodes), o, axis=1)
    D2 /= h * h
    lam, vec = eigh(-D2 + np.diag(mass2 * np.exp(2 * sig)))
    return [ModeSample(x, vec[:, j].astype(complex), math.sqrt(lam[j]), sig, mass2) for j in range(count)]


def _box(mode: ModeSample, values, order):
    """Covariant d'Alembertian exp(-2 sigma)(d_t^2 - d_x^2) of a stationary sample."""
    d2 = periodic_derivative(values, mode.spacing, 2, order)
    return np.exp(-2 * mode.sigma) * (-mode.omega**2 * values - d2)


@dataclass
class ResidualReport:
    quadratic: float
    quartic: float
    box_norm: float
    per_mode: list = field(default_factory=list)

    def to_dict(self):
        return {"quadratic": self.quadratic, "quartic": self.quartic, "box_norm": self.box_norm,
                "per_mode": self.per_mode}


def field_equation_residual(fields: SolutionFields, modes, order=8) -> ResidualReport:
    """Max residuals of (box + m^2) Sigma = 0 and box (box + m^2) Sigma = 0."""
    quad = quart = norm = 0.0
    per = []
    for mode in modes:
        u = mode.u / np.max(np.abs(mode.u))
        r = _box(mode, u, order) + fields.m2 * u
        r4 = _box(mode, r, order)
        bn = float(np.max(np.exp(-2 * mode.sigma)) * (mode.omega**2 + _stencil_norm(2, order, mode.spacing)))
        q, q4 = float(np.max(np.abs(r))), float(np.max(np.abs(r4)))
        per.append({"omega": mode.omega, "quadratic": q, "quartic": q4})
        quad, quart, norm = max(quad, q), max(quart, q4), max(norm, bn)
    return ResidualReport(quad, quart, norm, per)


def proca_residual(fields: SolutionFields, modes, order=8) -> ResidualReport:
    """Max of |(1/sqrt(-g)) d_nu (sqrt(-g) F^{mu nu}) + m^2 A^mu| on sampled modes.

    F is built from its derivative definition through box Sigma, A from the
    dual gradient, and indices are raised with the conformal metric.
    The ``quartic`` slot holds the companion quadratic field-equation residual.
    """
    worst = comp = 0.0
    per = []
    for mode in modes:
        u = mode.u / np.max(np.abs(mode.u)) if np.any(mode.u) else mode.u
        h = mode.spacing
        conf = np.exp(2 * mode.sigma)
        box = _box(mode, u, order)
        grad = np.array([-1j * mode.omega * u, periodic_derivative(u, h, 1, order)])
        F01 = -(SQRT_PI / fields.e) * conf * box
        F_up01 = -(F01 / conf**2)  # g^{00} g^{11} F_{01}
        dens01 = conf * F_up01
        div = np.array([
            periodic_derivative(dens01, h, 1, order) / conf,
            (-1j * mode.omega) * (-dens01) / conf,
        ])
        A = -(SQRT_PI / fields.e) * np.array([-grad[1], -grad[0]])
        A_up = np.array([A[0], -A[1]]) / conf
        res = div + fields.m2 * A_up
        quad = box + fields.m2 * u
        r, q = float(np.max(np.abs(res))), float(np.max(np.abs(quad)))
        per.append({"omega": mode.omega, "proca": r, "quadratic": q})
        worst, comp = max(worst, r), max(comp, q)
    return ResidualReport(worst, comp, 0.0, per)


# ----------------------------------------------------------------------
# F^2 identity


def f_squared_symbolic():
    """F_{mu nu} F^{mu nu} - (-2 m^2 Sigma^2) with a symbolic conformal factor; simplifies to 0."""
    s, e, Sig = sp.symbols("s e Sigma", real=True)
    g = sp.exp(2 * s) * sp.diag(1, -1)
    ginv = g.inv()
    eps = sp.Matrix([[0, 1], [-1, 0]])
    vol = sp.sqrt(-g.det()) * eps
    F = e / sp.sqrt(sp.pi) * vol * Sig
    Fup = ginv * F * ginv.T
    contraction = sum(F[a, b] * Fup[a, b] for a in range(2) for b in range(2))
    vol_up = ginv * vol * ginv.T
    vol_sq = sp.simplify(sum(vol[a, b] * vol_up[a, b] for a in range(2) for b in range(2)))
    m2 = e**2 / sp.pi
    return {"volume_square": vol_sq, "difference": sp.simplify(contraction - (-2 * m2 * Sig**2))}


def f_squared_identity(fields: SolutionFields, x, value, grad=None):
    """Both sides of :F^2: = -2 m^2 :Sigma^2: in a one-mode state.

    ``value`` is <0|Sigma(x)|k>; the one-mode expectation of a normal-ordered
    quadratic form is 2 Re(conj(a) b) over the one-particle amplitudes.
    """
    F = fields.field_strength(x, value)
    ginv = fields.inverse_metric(x)
    F_up = ginv @ F @ ginv.T
    lhs = 2 * float(np.real(np.sum(np.conj(F) * F_up)))
    rhs = -2 * fields.m2 * 2 * abs(value) ** 2
    return {"lhs": lhs, "rhs": rhs, "vacuum_lhs": 0.0, "vacuum_rhs": 0.0,
            "symbolic": f_squared_symbolic()["difference"] == 0}


# ----------------------------------------------------------------------
# stress tensor by point splitting


@dataclass(frozen=True)
class PlaneWaveMode:
    """Box-normalised positive-frequency mode (2 omega L)^{-1/2} exp(-i omega t + i k x)."""

    k: float
    mass2: float
    length: float = 2 * math.pi

    @property
    def omega(self):
        return math.sqrt(self.k * self.k + self.mass2)

    @property
    def amplitude(self):
        return 1.0 / math.sqrt(2 * self.omega * self.length)

    def value(self, p):
        return self.amplitude * np.exp(-1j * self.omega * p[0] + 1j * self.k * p[1])

    def gradient(self, p):
        v = self.value(p)
        return np.array([-1j * self.omega * v, 1j * self.k * v])


def chiral_kernel(chirality):
    """Massless chiral kernel -(4 pi)^{-1} ln(i w), w the light-cone separation."""
    def fn(x, y):
        w = (x[0] - y[0]) - chirality * (x[1] - y[1])
        return -np.log(1j * w) / (4 * math.pi)

    return TwoPointKernel(fn)


def fermion_kernel(chirality, x, y):
    """<psi_c(x) psi_c^dagger(y)> from the vertex correlator of exp(+-2 i sqrt(pi) phi_c)."""
    g = 2j * SQRT_PI
    return vertex_two_point(g, -g, chiral_kernel(chirality), tuple(x), tuple(y)) / (2 * math.pi)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def string_amplitude(fields: SolutionFields, mode: PlaneWaveMode, chirality, x, y):
    """<0|B|k> for the exponent B of the gauge-invariant split bilinear.

    B = sqrt(pi) [c (Sigma(x) - Sigma(y)) + int_y^x d~_mu Sigma dxi^mu]; the
    string integral runs along the straight segment with Gauss-Legendre nodes.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    s = x - y
    line = 0j
    for t, w in zip(_GL_NODES, _GL_WEIGHTS):
        xi = y + 0.5 * (t + 1) * s
        line += 0.5 * w * (fields.dual(mode.gradient(xi)) @ s)
    return SQRT_PI * (chirality * (mode.value(x) - mode.value(y)) + line)


def split_bilinear(fields, mode, chirality, point, split):
    """One-mode minus vacuum expectation of psi_c(x) U(x, y) psi_c^dagger(y), sign reversed.

    Returns K_c(x, y) |beta_c(x, y)|^2 with x, y = point +- split / 2.
    """
    p, s = np.asarray(point, float), np.asarray(split, float)
    x, y = p + 0.5 * s, p - 0.5 * s
    beta = string_amplitude(fields, mode, chirality, x, y)
    return fermion_kernel(chirality, x, y) * abs(beta) ** 2


_D1 = central_weights(1, 6)


def _split_gradient(fn, s, h):
    """Gradient of fn with respect to the split vector (lower index)."""
    offsets, w = _D1
    out = np.zeros(2, complex)
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        out[a] = sum(c * fn(s + o * e) for o, c in zip(offsets, w)) / h
    return out


def _point_split_tensor(fields, mode, point, split, h):
    kin = np.zeros((2, 2), complex)
    for c in CHIRALITIES:
        grad = _split_gradient(lambda s: split_bilinear(fields, mode, c, point, s), split, h)
        grad_up = ETA_FLAT @ grad
        e_c = np.array([1.0, c])
        kin += 0.5j * (np.outer(e_c, grad_up) + np.outer(grad_up, e_c))
    return kin


@dataclass
class StressTensorReport:
    eps: np.ndarray
    raw: np.ndarray  # point-split values per eps, shape (n, 2, 2)
    value: np.ndarray  # extrapolated T^{mu nu}
    vacuum: np.ndarray
    fit_residual: float
    converged: bool

    def to_dict(self):
        return {"eps": self.eps.tolist(), "value": np.real(self.value).tolist(),
                "imag": np.imag(self.value).tolist(), "vacuum": self.vacuum.tolist(),
                "fit_residual": self.fit_residual, "converged": self.converged}


def stress_tensor(fields: SolutionFields, mode: PlaneWaveMode | None, point=(0.0, 0.0), eps_ladder=None,
                  direction=(0.0, 1.0), degree=2, tol=1e-6) -> StressTensorReport:
    """<k| T^{mu nu} |k> from the split fermion bilinear plus (1/2) m^2 g^{mu nu} :Sigma^2:.

    The singular part subtracted from the split bilinear is its vacuum
    Hadamard form, so the vacuum returns zero.  ``mode=None`` evaluates the
    vacuum.  Each component is extrapolated to zero splitting by a
    polynomial fit in eps.
    """
    if not fields.geom.is_flat:
        raise ValidationError("the point-split stress tensor is implemented on flat backgrounds")
    eps = np.asarray(eps_ladder if eps_ladder is not None else 2.0 ** -np.arange(4, 9), float)
    n = np.asarray(direction, float)
    if mode is None:
        zero = np.zeros((2, 2))
        return StressTensorReport(eps, np.zeros((len(eps), 2, 2)), zero, zero, 0.0, True)
    if abs(mode.mass2 - fields.m2) > 1e-12 * max(1.0, fields.m2):
        raise ValidationError("mode mass differs from e^2/pi")
    sq = 2 * abs(mode.value(point)) ** 2  # <k| :Sigma^2: |k>
    mass_term = 0.5 * fields.m2 * ETA_FLAT * sq
    raw = np.array([_point_split_tensor(fields, mode, point, e * n, e / 10) + mass_term for e in eps])
    flat = raw.reshape(len(eps), 4)
    V = np.vander(eps, degree + 1)
    coef, *_ = np.linalg.lstsq(V, flat, rcond=None)
    value = coef[-1].reshape(2, 2)
    resid = float(np.max(np.abs(V @ coef - flat)) / max(np.max(np.abs(flat)), 1e-300))
    return StressTensorReport(eps, raw, value, np.zeros((2, 2)), resid, resid < tol)


def current_singularity(fields: SolutionFields, eps_ladder=None, direction=(0.0, 1.0)):
    """Vacuum split current sum_c (1, c) K_c(eps n, 0) versus -(i/pi) eps^mu / eps^2."""
    eps = np.asarray(eps_ladder if eps_ladder is not None else 2.0 ** -np.arange(4, 9), float)
    n = np.asarray(direction, float)
    vals = []
    for e in eps:
        s = e * n
        vals.append(sum(np.array([1.0, c]) * fermion_kernel(c, s, np.zeros(2)) for c in CHIRALITIES))
    vals = np.array(vals)
    norm = np.linalg.norm(vals, axis=1)
    exponent = float(np.polyfit(np.log(eps), np.log(norm), 1)[0])
    expected = np.array([-(1j / math.pi) * e * n / (e * e * (n @ ETA_FLAT @ n)) for e in eps])
    return {"eps": eps, "values": vals, "exponent": exponent,
            "max_deviation": float(np.max(np.abs(vals - expected)) / np.max(np.abs(expected)))}


# ----------------------------------------------------------------------
# chiral density correlators


def massless_wightman(mu=1.0, delta=1e-12):
    """-(4 pi)^{-1} ln(mu^2 (-(dt - i delta)^2 + dx^2)) on the principal branch."""
    def fn(x, y):
        dt, dx = x[0] - y[0], x[1] - y[1]
        return -np.log(mu * mu * (-(dt - 1j * delta) ** 2 + dx * dx)) / (4 * math.pi)

    return fn


@dataclass(frozen=True)
class KleinFactor:
    """Formal phase exp(i coefficient Q) acting on an electric charge sector."""

    coefficient: float

    def phase(self, charge):
        return complex(np.exp(1j * self.coefficient * charge))


_ZETA_CHARGE = 2 * SQRT_PI


def zeta_exponent_symbolic(n, m, eta_sign=-1):
    """Total vertex exponent of <zeta(x_1)..zeta(x_n) zeta*(y_1)..zeta*(y_m)>.

    Free-spinor factors pair with kernel W_ab; eta factors with eta_sign W_ab.
    Returns (exponent, neutral) with sympy exponent; zero for n = m and eta_sign = -1.
    """
    if n + m > MAX_DEGREE:
        raise UnsupportedOrderError(f"{n + m} insertions exceed {MAX_DEGREE}")
    charges = [1] * n + [-1] * m
    g = sp.Integer(2) * sp.I * sp.sqrt(sp.pi)
    total = sp.Integer(0)
    for a in range(n + m):
        for b in range(a + 1, n + m):
            W = sp.Symbol(f"W_{a}_{b}")
            pair = (charges[a] * g) * (charges[b] * g)
            total += pair * W + pair * eta_sign * W
    return sp.simplify(sp.expand(total)), n == m


def zeta_correlator(xs, ys, kernel=None, eta_kernel=None, eta_sign=-1):
    """<zeta(x_1)...zeta(x_n) zeta*(y_1)...zeta*(y_m)> from vertex two-point factors.

    Each zeta carries charge 2 sqrt(pi) in the free-spinor boson and in eta;
    zeta* carries the opposite charge.  Chirality is conserved by the vacuum,
    so unequal numbers give zero.  Klein factors act on the electric charge
    sector, which zeta leaves at zero, and contribute phase one.
    """
    xs, ys = [tuple(map(float, p)) for p in xs], [tuple(map(float, p)) for p in ys]
    n, m = len(xs), len(ys)
    if n + m > MAX_DEGREE:
        raise UnsupportedOrderError(f"{n + m} insertions exceed {MAX_DEGREE}")
    chirality = 2 * (n - m)
    if chirality:
        return 0j
    klein = KleinFactor(SQRT_PI / 4)
    phase = 1 + 0j
    for _ in range(n + m):
        phase *= klein.phase(0)
    base = TwoPointKernel(kernel or massless_wightman())
    eta = TwoPointKernel(eta_kernel or massless_wightman(), eta_sign)
    pts = xs + ys
    charges = [_ZETA_CHARGE] * n + [-_ZETA_CHARGE] * m
    value = phase
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            ga, gb = 1j * charges[a], 1j * charges[b]
            value *= vertex_two_point(ga, gb, base, pts[a], pts[b])
            value *= vertex_two_point(ga, gb, eta, pts[a], pts[b])
    return complex(value)


# ----------------------------------------------------------------------
# theta states


@dataclass(frozen=True)
class ThetaState:
    """Amplitudes exp(-2 i n theta) on chirality sectors |2n>, |n| <= n_max."""

    theta: float
    n_max: int
    amplitudes: np.ndarray

    @property
    def sectors(self):
        return np.arange(-self.n_max, self.n_max + 1)

    def chirality(self):
        return np.diag(2.0 * self.sectors)

    def apply_zeta(self):
        """zeta lowers chirality by two: new amplitude at n is the old one at n + 1.

        The top sector has no partner inside the truncation and is set to zero.
        """
        out = np.zeros_like(self.amplitudes)
        out[:-1] = self.amplitudes[1:]
        return out

    def zeta_eigenvalue(self):
        """Ratios on interior sectors; all equal exp(-2 i theta)."""
        return self.apply_zeta()[:-1] / self.amplitudes[:-1]

    def chiral_rotation(self, alpha):
        """psi -> exp(-i alpha gamma5) psi multiplies |2n> by exp(-2 i n alpha)."""
        return ThetaState(self.theta + alpha, self.n_max, self.amplitudes * np.exp(-2j * self.sectors * alpha))


def theta_state(theta, n_max) -> ThetaState:
    if n_max < 1:
        raise ValidationError("n_max must be at least 1")
    n = np.arange(-n_max, n_max + 1)
    return ThetaState(float(theta), int(n_max), np.exp(-2j * n * theta))


# ----------------------------------------------------------------------
# charge decay


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ChargeProbe:
    """Spatial plateau profile with edge width ``edge`` and Gaussian time average."""

    edge: float = 0.5
    time_width: float = 0.3
    rho: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)

    def profile(self, x):
        r = np.abs(np.asarray(x, float))
        return 1.0 - smooth_step((r - 1.0) / self.edge)

    def time_average(self, t):
        tw = self.time_width
        return np.exp(-0.5 * (np.asarray(t) / tw) ** 2) / (math.sqrt(2 * math.pi) * tw)

    def time_transform(self, omega):
        return np.exp(-0.5 * (omega * self.time_width) ** 2)

    def profile_derivative(self, x):
        h = 1e-5 * self.edge
        return (self.profile(x + h) - self.profile(x - h)) / (2 * h)


class _EdgeTransform:
    """Fourier transform of the profile derivative, by Gauss-Legendre on the edges."""

    def __init__(self, probe: ChargeProbe, nodes=200):
        t, w = np.polynomial.legendre.leggauss(nodes)
        self.x = 1.0 + 0.5 * probe.edge * (t + 1)
        self.w = 0.5 * probe.edge * w
        # derivative of 1 - step on the right edge, from the closed form of the step
        tt = (self.x - 1.0) / probe.edge
        a, b = np.exp(-1 / tt), np.exp(-1 / (1 - tt))
        da, db = a / tt**2, b / (1 - tt) ** 2
        ds = (da * (a + b) - a * (da - db)) / (a + b) ** 2
        self.fprime = -ds / probe.edge

    def __call__(self, q):
        # even profile: derivative is odd, transform is -2 i int_edge f'(x) sin(q x) dx
        return -2j * np.sum(self.w * self.fprime * np.sin(np.multiply.outer(q, self.x)), axis=-1)


@dataclass
class DecayReport:
    rho: np.ndarray
    values: np.ndarray
    exponent: float
    monotone: bool
    decays: bool
    mass: float

    def to_dict(self):
        return {"rho": self.rho.tolist(), "values": self.values.tolist(), "exponent": self.exponent,
                "monotone": self.monotone, "decays": self.decays, "mass": self.mass}


def charge_norm_squared(probe: ChargeProbe, mass, e, rho, transform=None):
    """||Q_rho Omega||^2 = (e^2/pi) int dk/(2 pi) |g_rho(k)|^2 |alpha(omega_k)|^2 / (2 omega_k).

    g_rho is the transform of the derivative of the scaled profile, equal to
    i k times the transform of the profile itself.
    """
    gt = transform or _EdgeTransform(probe)

    def integrand(q):
        k = q / rho
        w = math.sqrt(k * k + mass * mass)
        return abs(gt(q)) ** 2 * probe.time_transform(w) ** 2 / (2 * w) / rho

    total, err = 0.0, 0.0
    edges = np.concatenate([[0.0], np.geomspace(1e-3, 400.0, 40)])
    for a, b in zip(edges[:-1], edges[1:]):
        v, er = integrate.quad(integrand, a, b, limit=200, epsabs=0.0, epsrel=1e-10)
        total += v
        err += er
    if not np.isfinite(total) or err > 1e-6 * abs(total):
        raise ConvergenceError("charge quadrature did not converge", err)
    # both signs of k
    return (e * e / math.pi) * 2 * total / (2 * math.pi)


def charge_decay(probe: ChargeProbe, params: ModelParameters | None = None, e=None, mass=None) -> DecayReport:
    """Values of ||Q_rho Omega||^2 on the probe's rho ladder with a log-log power fit."""
    params = params or ModelParameters()
    e = SQRT_PI * params.m if e is None else e
    mass = e / SQRT_PI if mass is None else mass
    gt = _EdgeTransform(probe)
    rho = np.asarray(probe.rho, float)
    vals = np.array([charge_norm_squared(probe, mass, e, r, gt) for r in rho])
    exponent = float(np.polyfit(np.log(rho), np.log(vals), 1)[0])
    monotone = bool(np.all(np.diff(vals) < 0))
    return DecayReport(rho, vals, exponent, monotone, exponent < -0.5, float(mass))
