import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvedqed import wick as W

LABELS = [W.PHI, W.FieldLabel("phi", (0,)), W.FieldLabel("phi", (1,))]
POINTS = ["a", "b", "c", "d"]


def brute_force_product(monomials):
    """Sum over every set of disjoint cross-monomial pairs, by explicit enumeration."""
    slots = []
    for g, mono in enumerate(monomials):
        for s in mono.expanded():
            slots.append((g, s))
    out = Counter()

    def rec(i, used, pairs):
        if i == len(slots):
            rest = [s for k, (_, s) in enumerate(slots) if k not in used]
            mono = W.WickMonomial(tuple(rest), "omega").canonical()
            kern = tuple(sorted(((a.key, b.key) for a, b in pairs), key=repr))
            out[(kern, mono)] += 1
            return
        if i in used:
            rec(i + 1, used, pairs)
            return
        rec(i + 1, used, pairs)
        gi, si = slots[i]
        for j in range(i + 1, len(slots)):
            gj, sj = slots[j]
            if j not in used and gj != gi:
                rec(i + 1, used | {i, j}, pairs + [(si, sj)])

    rec(0, frozenset(), [])
    return {k: Fraction(v) for k, v in out.items()}


def product(monomials):
    poly = W.WickPolynomial.monomial(monomials[0])
    for m in monomials[1:]:
        poly = W.wick_product(poly, m)
    return poly


monomial_strategy = st.lists(
    st.tuples(st.sampled_from(range(len(LABELS))), st.sampled_from(POINTS), st.integers(1, 3)),
    min_size=1, max_size=3,
).map(lambda items: W.WickMonomial.of(*[W.slot(p, n, LABELS[l]) for l, p, n in items]))


@settings(max_examples=250, deadline=None)
@given(st.lists(monomial_strategy, min_size=2, max_size=3).filter(lambda ms: sum(m.degree for m in ms) <= 8))
def test_products_match_matching_oracle(monomials):
    assert product(monomials).terms == brute_force_product(monomials)


def test_exhaustive_single_point_powers():
    cases = 0
    for n in range(1, 5):
        for m in range(1, 9 - n):
            a = W.WickMonomial.of(W.slot("x", n))
            b = W.WickMonomial.of(W.slot("y", m))
            assert W.wick_product(a, b).terms == brute_force_product([a, b])
            for k in range(min(n, m) + 1):
                mono = W.WickMonomial.of(*[s for s in (W.slot("x", n - k), W.slot("y", m - k)) if s.power])
                kern = tuple([(W.slot("x").key, W.slot("y").key)] * k)
                assert W.wick_product(a, b).coefficient(mono, kern) == W.contraction_factor(n, m, k)
            cases += 1
    assert cases >= 10


def test_contraction_factor_examples():
    assert W.contraction_factor(1, 1, 1) == 1
    assert W.contraction_factor(2, 2, 1) == 4
    assert W.contraction_factor(2, 2, 3) == 0
    assert W.contraction_factor(3, 2, 2) == math.factorial(3) * 2 // (1 * 1 * 2)


def test_single_contraction_term():
    poly = W.contract(W.WickMonomial.of(W.slot("x")), W.WickMonomial.of(W.slot("y")), 1)
    assert len(poly) == 1
    (kern, mono), c = next(iter(poly.terms.items()))
    assert c == 1 and len(kern) == 1 and not mono.slots


def test_kernel_mismatch():
    a = W.WickMonomial.of(W.slot("x"), ordering="omega")
    b = W.WickMonomial.of(W.slot("y"), ordering="H")
    with pytest.raises(W.KernelMismatchError):
        W.wick_product(a, b)


def test_like_terms_merge_and_zero_pruned():
    a = W.WickMonomial.of(W.slot("x"))
    poly = W.WickPolynomial.monomial(a) - W.WickPolynomial.monomial(a)
    assert len(poly) == 0
    assert len(W.WickPolynomial.monomial(a) + W.WickPolynomial.monomial(a)) == 1


def test_canonical_merges_repeated_slots():
    m = W.WickMonomial.of(W.slot("x"), W.slot("y"), W.slot("x"))
    assert m.degree == 3 and len(m.slots) == 2


def test_normal_order_round_trip():
    plain = W.WickMonomial((W.slot("a"), W.slot("b"), W.slot("c"), W.slot("d")), "plain")
    ordered = W.normal_order(plain, "H")
    back = W.plain_polynomial(ordered)
    assert back.terms == W.WickPolynomial.monomial(plain).terms
    # four fields: 1 + 6 + 3 terms
    assert len(ordered) == 10


def test_on_diagonal_rejected():
    plain = W.WickMonomial((W.slot("a"), W.slot("a")), "plain")
    with pytest.raises(W.OnDiagonalError):
        W.normal_order(plain)
    assert len(W.normal_order(plain, allow_coincident=True)) == 2


def test_vacuum_expectation_matches_pairing_count():
    poly = W.wick_product(W.WickMonomial.of(W.slot("x", 3)), W.WickMonomial.of(W.slot("y", 3)))
    assert W.vacuum_expectation(poly, lambda a, b: 2.0) == pytest.approx(math.factorial(3) * 8)
    odd = W.wick_product(W.WickMonomial.of(W.slot("x", 2)), W.WickMonomial.of(W.slot("y", 1)))
    assert W.vacuum_expectation(odd, lambda a, b: 1.0) == 0


def test_exact_evaluation():
    poly = W.wick_product(W.WickMonomial.of(W.slot("x", 2)), W.WickMonomial.of(W.slot("y", 2)))
    vals = poly.evaluate_exact(lambda a, b: Fraction(1, 3))
    assert vals[W.WickMonomial((), "omega")] == Fraction(2, 9)


def test_text_and_json_are_deterministic():
    a = W.WickMonomial.of(W.slot("x", 2), W.slot("z"))
    b = W.WickMonomial.of(W.slot("y", 2))
    p1, p2 = W.wick_product(a, b), W.wick_product(a, b)
    assert p1.to_json() == p2.to_json() and p1.to_text() == p2.to_text()


def test_derivative_order_cap():
    with pytest.raises(W.ValidationError):
        W.FieldLabel("phi", (0, 1, 1))


# ---- vertex operators --------------------------------------------------
def const_kernel(value):
    return W.TwoPointKernel(lambda a, b: value)


def test_vertex_examples():
    assert W.vertex_two_point(0.0, 1.3, const_kernel(0.7), "x", "y") == 1.0
    assert W.vertex_two_point(1.0, 1.0, const_kernel(math.log(2)), "x", "y") == pytest.approx(2.0, rel=1e-15)


def test_vertex_series_within_tail_bound():
    rng = np.random.default_rng(11)
    for _ in range(50):
        g1, g2 = rng.uniform(-2, 2, 2)
        H = rng.uniform(-1, 1)
        z = g1 * g2 * H
        series = W.vertex_series(g1, g2, const_kernel(H), "x", "y", 12)
        closed = W.vertex_two_point(g1, g2, const_kernel(H), "x", "y")
        assert abs(series - closed) <= W.series_tail_bound(z, 12) + 4e-16 * math.exp(abs(z))
        assert closed == pytest.approx(math.exp(z), rel=1e-15)


def test_vertex_coincident_error():
    k = W.TwoPointKernel(lambda a, b: -math.log(abs(a - b)))
    with pytest.raises(W.OnDiagonalError):
        W.vertex_two_point(1.0, 1.0, k, 0.5, 0.5)
    assert k.flipped()(0.0, 1.0) == -k(0.0, 1.0)


def _massless(x, y):
    return -np.log((x - y) ** 2) / (4 * np.pi)


def test_vertex_norm_zero_charge():
    f = lambda x: np.exp(-x**2)
    b = W.vertex_norm_bound(0.0, f, _massless)
    x = np.linspace(-1, 1, 2001)
    ref = np.trapezoid(f(x), x) ** 2
    assert b.finite and b.value == pytest.approx(ref, rel=1e-5)


def test_vertex_norm_refinement_stable():
    f = lambda x: np.exp(-4 * x**2)
    b = W.vertex_norm_bound(1.0, f, _massless)
    assert b.finite
    assert abs(b.value - b.refined) <= 0.01 * abs(b.value)


def test_truncated_norm_approaches_closed_form():
    f = lambda x: np.exp(-4 * x**2)
    full = W.vertex_norm_bound(1.0, f, _massless).value
    trunc = [W.truncated_vertex_norm(1.0, f, _massless, n_max=n) for n in (1, 3, 6)]
    assert abs(trunc[-1] - full) < abs(trunc[0] - full)
    assert abs(trunc[-1] - full) <= 1e-3 * abs(full)
