import json
import math

import numpy as np
import pytest
import sympy as sp

from curvedqed import ope as O
from curvedqed.errors import InvalidMassError, UnsupportedOrderError, ValidationError
from curvedqed.geometry import ConformalGeometry
from curvedqed.parametrix import ModelParameters
from curvedqed.quantization import QuasiFreeState, count_pairings, quasifree_npoint
from curvedqed.wick import OnDiagonalError, WickMonomial


@pytest.fixture(scope="module")
def flat_kernel():
    return O.GammaKernel(ConformalGeometry.flat(), ModelParameters(m=1.0), 4)


@pytest.fixture(scope="module")
def curved_kernel():
    return O.GammaKernel(ConformalGeometry.from_expression("0.1*x1^2"), ModelParameters(m=1.0), 4)


def sympy_gamma(m, M2, N, eps, x1, x2):
    """Flat closed form from symbolic differentiation of V ln|M^2 sbar + i eps|."""
    t1, s1, t2, s2 = sp.symbols("t1 s1 t2 s2", real=True)
    sb = ((t1 - t2) ** 2 - (s1 - s2) ** 2) / 2
    V = sum(sp.Integer(-1) ** (n + 1) / (2**n * sp.factorial(n)) * (-m * m) ** n / sp.factorial(n) * sb**n
            for n in range(N + 1))
    F = V * sp.log((M2 * sb) ** 2 + eps**2) / 2
    dual1 = (lambda f: -sp.diff(f, s1), lambda f: -sp.diff(f, t1))
    dual2 = (lambda f: -sp.diff(f, s2), lambda f: -sp.diff(f, t2))
    hat = [[1, 0], [0, -1]]
    subs = {t1: x1[0], s1: x1[1], t2: x2[0], s2: x2[1]}
    return np.array([[float((m * m * hat[a][b] * F + dual1[a](dual2[b](F))).evalf(30, subs=subs))
                      for b in range(2)] for a in range(2)])


def test_delta_hat():
    assert O.DELTA_HAT[0, 0] == 1 and O.DELTA_HAT[1, 1] == -1 and O.DELTA_HAT[0, 1] == 0 == O.DELTA_HAT[1, 0]


@pytest.mark.parametrize("x1", [(0.0, 0.5), (0.5, 0.0), (0.3, 0.1)])
def test_flat_gamma_closed_form(flat_kernel, x1):
    ref = sympy_gamma(1.0, 1.0, 4, 1e-10, x1, (0.0, 0.0))
    np.testing.assert_allclose(flat_kernel(x1, (0.0, 0.0)), ref, rtol=1e-8, atol=1e-8)


def test_gamma_symmetry(flat_kernel, curved_kernel):
    for k in (flat_kernel, curved_kernel):
        for x1, x2 in [((0.1, 0.4), (0.0, 0.1)), ((0.2, -0.3), (-0.1, 0.05))]:
            assert O.symmetry_defect(k, x1, x2) < 1e-9
            assert O.symmetry_defect(k, x1, x2) < 1e-10 if k is flat_kernel else True


def test_gamma_errors(flat_kernel):
    with pytest.raises(OnDiagonalError):
        flat_kernel((0.1, 0.1), (0.1, 0.1))
    with pytest.raises(InvalidMassError):
        O.GammaKernel(ConformalGeometry.flat(), ModelParameters(m=0.0))


def test_expand_two_vev(flat_kernel):
    exp = O.expand_two(0, 1, (0.3, 0.1), (0.0, 0.0))
    ev = O.gamma_evaluator(flat_kernel)
    assert exp.vev(ev) == pytest.approx(flat_kernel((0.3, 0.1), (0.0, 0.0))[0, 1], rel=1e-15)
    swapped = O.expand_two(1, 0, (0.0, 0.0), (0.3, 0.1)).vev(ev)
    assert abs(exp.vev(ev) - swapped) < 1e-10


def test_three_factor_structure():
    exp = O.expand_general([(0, "x1"), (1, "x2"), (0, "x3")])
    by = exp.poly.by_monomial()
    degrees = sorted(m.degree for m in by)
    assert degrees == [1, 1, 1, 3]
    for mono, kern in by.items():
        if mono.degree == 1:
            (pairs, c), = kern.items()
            assert c == 1 and len(pairs) == 1
            other = {pairs[0][0][1], pairs[0][1][1]}
            assert mono.slots[0].point not in other


def _flat_positions(n, rng):
    return {f"x{i}": tuple(rng.uniform(-0.4, 0.4, 2)) for i in range(n)}


@pytest.mark.parametrize("indices", [(0, 0, 0, 0), (0, 1, 1, 0), (1, 1, 0, 1, 0, 0)])
def test_vev_matches_quasifree(flat_kernel, indices):
    rng = np.random.default_rng(len(indices))
    pos = _flat_positions(len(indices), rng)
    factors = [(mu, f"x{i}") for i, mu in enumerate(indices)]
    vev = O.expand_general(factors).vev(O.gamma_evaluator(flat_kernel, pos))
    state = QuasiFreeState(lambda a, b: flat_kernel(pos[a[1]], pos[b[1]])[a[0], b[0]])
    ref = quasifree_npoint(state, [(mu, f"x{i}") for i, mu in enumerate(indices)])
    assert abs(vev - ref) <= 1e-9 * max(1.0, abs(ref))


def test_four_point_pairings(flat_kernel):
    rng = np.random.default_rng(9)
    pos = _flat_positions(4, rng)
    G = lambda i, j: flat_kernel(pos[f"x{i}"], pos[f"x{j}"])[0, 0]
    vev = O.expand_general([(0, f"x{i}") for i in range(4)]).vev(O.gamma_evaluator(flat_kernel, pos))
    assert vev == pytest.approx(G(0, 1) * G(2, 3) + G(0, 2) * G(1, 3) + G(0, 3) * G(1, 2), rel=1e-12)


def test_odd_vev_vanishes(flat_kernel):
    pos = _flat_positions(5, np.random.default_rng(5))
    assert O.expand_general([(0, f"x{i}") for i in range(5)]).vev(O.gamma_evaluator(flat_kernel, pos)) == 0


@pytest.mark.parametrize("k", [2, 4, 6, 8])
def test_full_contraction_counts(k):
    const = O.expand_general([(0, f"x{i}") for i in range(k)]).poly.constant_part()
    assert len(const) == count_pairings(k)
    assert all(c == 1 for c in const.terms.values())


def test_degree_cap():
    with pytest.raises(UnsupportedOrderError):
        O.expand_general([((0, 0, 0), "a"), ((1, 1, 1), "b"), ((0, 1, 0), "c")])
    with pytest.raises(OnDiagonalError):
        O.expand_general([(0, "a"), (1, "a")])


def test_wick_power_factor():
    exp = O.expand_general([((0, 0), "a"), ((0, 0), "b")])
    const = exp.poly.constant_part()
    (kern, _), c = next(iter(const.terms.items()))
    assert c == 2 and len(kern) == 2


def test_read_off_two_point_normalizations():
    params = ModelParameters(m=2.0)
    kernel = O.GammaKernel(ConformalGeometry.flat(), params)
    x1, x2 = (0.2, 0.05), (0.0, 0.0)
    G = kernel(x1, x2)[0, 0]
    exp = O.expand_two(0, 0, x1, x2)
    terms = {t.basis.degree: t for t in O.read_off_coefficients(exp, kernel)}
    assert terms[0].coefficient == pytest.approx(G / params.m2, rel=1e-14)
    sig = {t.basis.degree: t for t in O.read_off_coefficients(exp, kernel, normalization="sigma")}
    assert sig[0].coefficient == pytest.approx(G, rel=1e-14)
    assert sig[2].coefficient == 1
    assert O.coupling(params) == pytest.approx(math.sqrt(math.pi) * 2.0)


def test_read_off_odd_terminal(flat_kernel):
    pts = {"a": (0.3, 0.1), "b": (0.0, 0.0), "c": (-0.2, 0.15)}
    exp = O.expand_general([(0, "a"), (0, "b"), (0, "c")])
    terms = O.read_off_coefficients(exp, flat_kernel, "y", pts, normalization="sigma")
    single = [t for t in terms if t.basis.degree == 1]
    assert len(single) == 1 and single[0].basis.slots[0].point == "y"
    G = lambda p, q: flat_kernel(pts[p], pts[q])[0, 0]
    assert single[0].coefficient == pytest.approx(G("a", "b") + G("a", "c") + G("b", "c"), rel=1e-12)
    again = O.read_off_coefficients(exp, flat_kernel, "z", pts, normalization="sigma")
    assert sorted(abs(t.coefficient) for t in again) == sorted(abs(t.coefficient) for t in terms)
    data = json.loads(O.dump_terms(terms))
    assert len(data) == len(terms)


def test_associativity_order(flat_kernel, curved_kernel):
    ratios = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    for k in (flat_kernel, curved_kernel):
        for idx in ((0, 0, 0), (1, 1, 1)):
            devs, orders = O.associativity_scaling(k, (0.0, 0.0), (0.1, 0.4), (1.0, 0.3), ratios, idx)
            assert all(a > b for a, b in zip(devs, devs[1:]))
            corrected = [math.log((devs[i] / abs(math.log(ratios[i]))) / (devs[i + 1] / abs(math.log(ratios[i + 1]))))
                         / math.log(2) for i in range(len(ratios) - 1)]
            assert min(corrected) >= 2.0
            assert min(orders) > 1.9


def test_associativity_degenerate(flat_kernel):
    with pytest.raises(OnDiagonalError):
        O.associativity_check(flat_kernel, (0.1, 0.1), (0.1, 0.1), (0.5, 0.2))


def test_merge_tree_validation():
    with pytest.raises(ValidationError):
        O.MergeTree((0, 0), {"a": [(1, 0)], "b": [(1, 0)]})


def test_merge_log_divergence(flat_kernel):
    tree = O.MergeTree((0.0, 0.0), {"a": [(0.0, 0.0), (0.1, 0.4)], "b": [(0.0, 0.0), (0.3, 0.1)]})
    geom = ConformalGeometry.flat()
    eps = 2.0 ** -np.arange(2, 6)
    rep = O.merge_limit(tree, geom, lambda pos: flat_kernel.log_kernel(pos["a"], pos["b"]), eps)
    # V -> -1 and sbar ~ eps^4: coefficient of ln eps tends to -4
    assert rep.divergent
    assert rep.log_coefficient == pytest.approx(-4.0, abs=1e-3)


def test_merge_expansion_head_term(curved_kernel):
    tree = O.MergeTree((0.0, 0.2), {"a": [(0.3, 0.1)], "b": [(-0.1, 0.4)]})
    geom = curved_kernel.geom
    exp = O.expand_two(0, 0, "a", "b")
    reports = O.merge_expansion(tree, geom, exp, curved_kernel, [0.1, 0.05, 0.025])
    head = [b for b in reports if b.degree == 2][0]
    assert head == WickMonomial.of(*[s for s in head.slots], ordering="H")
    assert reports[head].converged and reports[head].finite_part == pytest.approx(1.0)
    ident = [b for b in reports if b.degree == 0][0]
    assert reports[ident].divergent
