import numpy as np
import pytest
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.optimize import root

from curvedqed.errors import DomainError
from curvedqed.geometry import (
    ConformalGeometry,
    GridSigma,
    curvature_at,
    exponential_map,
    merged_distance,
    spin_connection_at,
    van_vleck,
    world_function,
    zweibein_at,
    zweibein_relations,
)

SIGMA_TEXT = "0.1*x1^2"


# ---- independent shooting oracle -----------------------------------------
def _sigma_derivs(a=0.1):
    # sigma = a x1^2
    return (lambda p: a * p[1] ** 2, lambda p: np.array([0.0, 2 * a * p[1]]))


def _geodesic_rhs(dsig):
    eta = np.diag([1.0, -1.0])

    def rhs(_, y):
        p, v = y[:2], y[2:]
        g = dsig(p)
        vv = v @ eta @ v
        acc = -2 * (g @ v) * v + vv * (eta @ g)
        return np.concatenate([v, acc])

    return rhs


def _shoot(x, xp, a=0.1, rtol=1e-13):
    sig, dsig = _sigma_derivs(a)
    rhs = _geodesic_rhs(dsig)
    x, xp = np.asarray(x, float), np.asarray(xp, float)

    def end(v):
        sol = solve_ivp(rhs, (0, 1), np.concatenate([xp, v]), method="DOP853", rtol=rtol, atol=1e-15)
        return sol.y[:2, -1]

    v = root(lambda v: end(v) - x, x - xp, tol=1e-14).x
    value = 0.5 * np.exp(2 * sig(xp)) * (v[0] ** 2 - v[1] ** 2)
    return value, v, end


def test_frame_identity_flat(flat):
    f = zweibein_at(flat, (0.3, -0.1))
    assert np.array_equal(f.e, np.eye(2)) and np.array_equal(f.E, np.eye(2))


def test_frame_scaling():
    g = ConformalGeometry.from_expression("ln(2)")
    f = zweibein_at(g, (1.0, 2.0))
    np.testing.assert_allclose(f.e, 2 * np.eye(2), rtol=1e-15)
    np.testing.assert_allclose(f.E, 0.5 * np.eye(2), rtol=1e-15)


@pytest.mark.parametrize("text", ["0.3*sin(x0)*x1", "0.2*x0^2 - 0.1*x0*x1 + exp(0.1*x1)", "0.4*cos(x0 + x1)"])
def test_frame_relations_random(text):
    g = ConformalGeometry.from_expression(text)
    rng = np.random.default_rng(1)
    for p in rng.uniform(-1, 1, (5, 2)):
        f = zweibein_at(g, p)
        lhs = np.einsum("ma,nb,ab->mn", f.e, f.e, np.diag([1.0, -1.0]))
        np.testing.assert_allclose(lhs, g.metric(p), atol=1e-12)
        assert max(zweibein_relations(g, p).values()) < 1e-12


def test_spin_connection_examples():
    assert spin_connection_at(ConformalGeometry.from_expression("x1"), (0.2, 0.5)) == (-1.0, 0.0)
    assert spin_connection_at(ConformalGeometry.from_expression("x0"), (0.2, 0.5)) == (0.0, -1.0)
    assert spin_connection_at(ConformalGeometry.from_expression("0.5*(x0^2 - x1^2)"), (1, 1)) == pytest.approx((1.0, -1.0))


def _sympy_scalar_curvature(text):
    x0, x1 = sp.symbols("x0 x1", real=True)
    sig = sp.sympify(text.replace("^", "**"), locals={"x0": x0, "x1": x1})
    X = [x0, x1]
    g = sp.exp(2 * sig) * sp.diag(1, -1)
    gi = g.inv()
    Gam = [[[sum(gi[r, l] * (sp.diff(g[l, m], X[n]) + sp.diff(g[l, n], X[m]) - sp.diff(g[m, n], X[l]))
                 for l in range(2)) / 2 for n in range(2)] for m in range(2)] for r in range(2)]

    def riem(r, s, m, n):
        out = sp.diff(Gam[r][n][s], X[m]) - sp.diff(Gam[r][m][s], X[n])
        out += sum(Gam[r][m][l] * Gam[l][n][s] - Gam[r][n][l] * Gam[l][m][s] for l in range(2))
        return out

    ric = sp.Matrix(2, 2, lambda m, n: sum(riem(r, m, r, n) for r in range(2)))
    R = sp.simplify(sum(gi[i, j] * ric[i, j] for i in range(2) for j in range(2)))
    return sp.lambdify((x0, x1), R)


@pytest.mark.parametrize("text", ["0.5*(x0^2 - x1^2)", "0.3*sin(x0)*x1", "0.1*x1^2 + 0.2*x0*x1"])
def test_scalar_curvature_against_symbolic_pipeline(text):
    g = ConformalGeometry.from_expression(text)
    oracle = _sympy_scalar_curvature(text)
    for p in [(0.0, 0.0), (0.3, -0.2), (-0.5, 0.7)]:
        rep = curvature_at(g, p)
        assert rep.scalar == pytest.approx(float(oracle(*p)), abs=1e-10)
        assert rep.scalar_from_ricci(g) == pytest.approx(rep.scalar, abs=1e-10)


def test_curvature_convention_constant():
    rep = curvature_at(ConformalGeometry.from_expression("0.5*(x0^2 - x1^2)"), (0.0, 0.0))
    assert rep.table_scalar == pytest.approx(-2.0)
    assert rep.scalar == pytest.approx(rep.table_factor * -2.0)


@pytest.mark.parametrize("text", ["0", "0.3*x0 - 1.2*x1 + 4"])
def test_curvature_vanishes(text):
    rep = curvature_at(ConformalGeometry.from_expression(text), (0.4, 0.1))
    assert rep.scalar == 0.0 and rep.riemann_0101 == 0.0


def test_domain_error():
    g = ConformalGeometry.from_expression("x1", domain=(-1, 1, -1, 1))
    with pytest.raises(DomainError):
        zweibein_at(g, (2.0, 0.0))
    with pytest.raises(DomainError):
        curvature_at(g, (0.0, -1.5))


@pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
def test_flat_world_function(flat, t):
    assert world_function(flat, (0, 0), (t, 0)).value == pytest.approx(t * t / 2, rel=1e-14)
    assert world_function(flat, (0, 0), (0, t)).value == pytest.approx(-t * t / 2, rel=1e-14)


@pytest.mark.parametrize("pair", [((0.1, 0.5), (0.0, 0.2)), ((0.4, 0.3), (0.1, 0.1)), ((-0.1, -0.4), (0.05, 0.1)),
                                  ((0.6, 0.0), (0.0, 0.5))])
def test_world_function_matches_shooting(curved, pair):
    x, xp = pair
    wf = world_function(curved, x, xp)
    ref, v, _ = _shoot(x, xp)
    assert wf.value == pytest.approx(ref, rel=1e-6)
    np.testing.assert_allclose(wf.tangent_at_start, v, rtol=1e-6, atol=1e-9)
    assert wf.hamilton_jacobi_residual(curved) < 1e-8
    assert abs(world_function(curved, xp, x).value - wf.value) <= 1e-12 * max(1.0, abs(wf.value))


def test_van_vleck_flat(flat):
    assert van_vleck(flat, (0.3, 0.1), (-0.2, 0.4)) == 1.0


def test_van_vleck_coincidence_limit(curved):
    for p in [(0.0, 0.0), (0.2, 0.8)]:
        x = (p[0] + 1e-3, p[1] + 2e-3)
        assert van_vleck(curved, x, p) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("pair", [((0.1, 0.5), (0.0, 0.2)), ((0.3, 0.9), (0.1, 0.6)), ((0.05, -0.4), (0.2, -0.1))])
def test_van_vleck_matches_jacobi_oracle(curved, pair):
    # Delta = exp(2 sigma(x') - 2 sigma(x)) / det(d x / d v) for the shooting map v -> x
    x, xp = pair
    _, v, end = _shoot(x, xp)
    h = 1e-5
    jac = np.column_stack([(end(v + h * e) - end(v - h * e)) / (2 * h) for e in np.eye(2)])
    ref = np.exp(2 * 0.1 * xp[1] ** 2 - 2 * 0.1 * x[1] ** 2) / np.linalg.det(jac)
    assert van_vleck(curved, x, xp) == pytest.approx(ref, rel=1e-5)


def test_exponential_map_inverts_normal_coordinates(curved):
    y = (0.1, 0.3)
    xi = np.array([0.2, -0.15])
    x = exponential_map(curved, y, xi)
    np.testing.assert_allclose(world_function(curved, x, y).tangent_at_start, xi, atol=1e-9)


def test_merged_distance_flat_and_coincident(flat, curved):
    y, a, b = (0.0, 0.0), (0.3, 0.1), (-0.2, 0.5)
    d = np.subtract(b, a)
    assert merged_distance(flat, y, a, b) == pytest.approx(d[0] ** 2 - d[1] ** 2, rel=1e-15)
    assert merged_distance(curved, (0.1, 0.2), (0.15, 0.3), (0.15, 0.3)) == 0.0


def test_merged_distance_convergence(curved):
    y = (0.0, 0.3)
    v1, v2 = np.array([0.3, 0.7]), np.array([-0.5, 0.2])
    scales = [0.4, 0.2, 0.1, 0.05]
    errs = []
    for e in scales:
        x1 = exponential_map(curved, y, e * v1)
        x2 = exponential_map(curved, y, e * v2)
        errs.append(abs(merged_distance(curved, y, x1, x2) - 2 * world_function(curved, x1, x2).value))
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(2)
    assert np.all(orders > 3.0)


def test_merged_distance_patch(curved):
    with pytest.raises(DomainError):
        merged_distance(curved, (0, 0), (0.5, 0), (0, 0.1), radius=0.2)


def test_grid_sigma_from_file(tmp_path):
    t0 = np.linspace(-1, 1, 41)
    t1 = np.linspace(-1, 1, 41)
    vals = 0.1 * t1[None, :] ** 2 + 0 * t0[:, None]
    path = tmp_path / "sigma.txt"
    path.write_text("-1 1 -1 1 41 41\n" + "\n".join(" ".join(f"{v:.17g}" for v in row) for row in vals))
    gs = GridSigma.from_file(path)
    assert gs.derivative(0, 2)(0.13, 0.27) == pytest.approx(0.2, abs=1e-8)
    g = ConformalGeometry(gs)
    assert g.domain == (-1.0, 1.0, -1.0, 1.0)
    with pytest.raises(DomainError):
        g.check((1.5, 0))
