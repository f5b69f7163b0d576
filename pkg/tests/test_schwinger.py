import math

import numpy as np
import pytest
import sympy as sp

from curvedqed import schwinger as S
from curvedqed.errors import UnsupportedOrderError, ValidationError
from curvedqed.geometry import ConformalGeometry
from curvedqed.parametrix import ModelParameters
from curvedqed.wick import FieldLabel


# periodic on [0, 2 pi) to double precision, as the mode grids require
BUMP = "0.05*exp(-4*(x1-3.141592653589793)^2)"


@pytest.fixture(scope="module")
def fields():
    return S.assemble(e=1.0)


@pytest.fixture(scope="module")
def bump_geometry():
    return ConformalGeometry.from_expression(BUMP)


def test_mass_from_coupling(fields):
    assert fields.m == pytest.approx(0.5641895835477563, rel=1e-15)
    assert fields.m2 == 1 / math.pi
    assert S.assemble(ModelParameters(m=2.0)).m == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        S.assemble(e=0.0)


def test_field_strength_from_sigma(bump_geometry):
    f = S.assemble(e=1.3, geom=bump_geometry)
    x = (0.0, 0.4)
    F = f.field_strength(x, 0.7)
    conf = math.exp(2 * 0.05 * math.exp(-4 * (0.4 - math.pi) ** 2))
    assert F[0, 1] == pytest.approx(1.3 / math.sqrt(math.pi) * conf * 0.7, rel=1e-14)
    assert F[1, 0] == -F[0, 1] and F[0, 0] == 0


def test_flat_dual_splitting(fields):
    # d~ phi = (-d_1 phi, -d_0 phi): the x derivative of the dual field is -pi_hat
    grad = np.array([0.3, -1.1])
    assert np.array_equal(fields.dual(grad), [1.1, -0.3])
    assert np.allclose(fields.current(grad), -fields.dual(grad) / math.sqrt(math.pi))


def test_physical_accessors_use_sigma_only(fields):
    for name in ("A", "J"):
        for mu in (0, 1):
            assert {lab.field for _, lab in fields.linear_form(name, mu)} == {"Sigma"}
    assert {lab.field for _, lab in fields.linear_form("F", (0, 1), (0.0, 0.0))} == {"Sigma"}
    full = {lab.field for _, lab in fields.linear_form("A_full", 0)}
    assert full == {"Sigma", "eta"}


def test_longitudinal_current_vanishes_on_sigma_sector(fields):
    for mu in (0, 1):
        for name in ("L", "a"):
            assert fields.sigma_sector_element(fields.linear_form(name, mu), 0.4 + 0.2j, [1.0, -2.0]) == 0
    # the physical current does see Sigma
    J = fields.sigma_sector_element(fields.linear_form("J", 0), 0.4, [1.0, -2.0])
    assert J == pytest.approx(-2.0 / math.sqrt(math.pi))


def test_unknown_composite(fields):
    with pytest.raises(ValidationError):
        fields.linear_form("B", 0)


def test_flat_field_equation(fields):
    modes = [S.plane_wave_sample(k, fields.m2) for k in range(5)]
    rep = S.field_equation_residual(fields, modes)
    assert rep.quadratic < 1e-8
    assert rep.quartic <= rep.box_norm * rep.quadratic


def test_proca_flat_and_mass_scan(fields):
    modes = [S.plane_wave_sample(k, fields.m2) for k in range(5)]
    assert S.proca_residual(fields, modes).quadratic < 1e-8
    for scale in (0.5, 1.5):
        wrong = [S.plane_wave_sample(k, scale * fields.m2) for k in range(5)]
        assert S.proca_residual(fields, wrong).quadratic >= 1e-2


def test_proca_zero_field(fields):
    zero = S.plane_wave_sample(1, fields.m2)
    zero = S.ModeSample(zero.x, np.zeros_like(zero.u), zero.omega, zero.sigma, zero.mass2)
    assert S.proca_residual(fields, [zero]).quadratic == 0


@pytest.mark.parametrize("order,nodes", [(2, 64), (2, 128), (4, 128), (8, 64)])
def test_proca_bounded_by_field_equation(bump_geometry, order, nodes):
    f = S.assemble(e=1.0, geom=bump_geometry)
    modes = S.static_modes(bump_geometry, f.m2, nodes=nodes, order=order)
    rep = S.proca_residual(f, modes)
    h = modes[0].spacing
    stencil = np.abs(S.central_weights(1, 8)[1]).sum() / h
    for m, per in zip(modes, rep.per_mode):
        bound = math.sqrt(math.pi) / f.e * np.max(np.exp(-2 * m.sigma)) * max(stencil, m.omega) * per["quadratic"]
        assert per["proca"] <= bound * (1 + 1e-8) + 1e-13


def test_curved_modes_converge(bump_geometry):
    f = S.assemble(e=1.0, geom=bump_geometry)
    res = [S.field_equation_residual(f, S.static_modes(bump_geometry, f.m2, nodes=n, order=2)).quadratic
           for n in (32, 64, 128)]
    rates = [math.log2(a / b) for a, b in zip(res, res[1:])]
    assert min(rates) > 1.9


def test_static_modes_reject_time_dependence():
    with pytest.raises(ValidationError):
        S.static_modes(ConformalGeometry.from_expression("0.1*x0"), 1.0)


def test_f_squared_symbolic():
    sym = S.f_squared_symbolic()
    assert sym["difference"] == 0
    assert sym["volume_square"] == -2


def test_f_squared_spot_checks(fields):
    rng = np.random.default_rng(4)
    mode = S.PlaneWaveMode(1.0, fields.m2)
    for _ in range(5):
        p = rng.uniform(-1, 1, 2)
        out = S.f_squared_identity(fields, p, mode.value(p))
        assert abs(out["lhs"] - out["rhs"]) <= 1e-12 * abs(out["rhs"])
        assert out["vacuum_lhs"] == out["vacuum_rhs"] == 0 and out["symbolic"]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_zeta_exponent_cancels(n):
    total, neutral = S.zeta_exponent_symbolic(n, n)
    assert total == 0 and neutral
    flipped, _ = S.zeta_exponent_symbolic(n, n, eta_sign=1)
    assert flipped != 0 or n == 0


def test_zeta_exponent_unbalanced():
    total, neutral = S.zeta_exponent_symbolic(2, 1)
    assert not neutral
    with pytest.raises(UnsupportedOrderError):
        S.zeta_exponent_symbolic(5, 4)


def test_zeta_correlator_values():
    assert S.zeta_correlator([(0.0, 0.0)], []) == 0
    assert S.zeta_correlator([(0.0, 0.0)], [(0.3, 0.1)]) == pytest.approx(1.0, abs=1e-12)
    pts = [(0.0, 0.0), (0.5, 0.2)], [(0.3, 0.1), (1.0, 0.4)]
    assert abs(S.zeta_correlator(*pts) - 1) < 1e-10
    with pytest.raises(UnsupportedOrderError):
        S.zeta_correlator([(i, 0) for i in range(5)], [(i, 1) for i in range(4)])


def test_zeta_merge_limit():
    for d in (1e-1, 1e-3, 1e-6):
        assert abs(S.zeta_correlator([(0.2, 0.1)], [(0.2 + d, 0.1 + 0.3 * d)]) - 1) < 1e-6


def test_zeta_without_cancellation_is_singular():
    # the free spinor factor alone diverges like |x - y|^{-2}
    near = S.zeta_correlator([(0.0, 0.0)], [(0.0, 1e-3)], eta_sign=1)
    far = S.zeta_correlator([(0.0, 0.0)], [(0.0, 1e-2)], eta_sign=1)
    assert abs(near / far) == pytest.approx(1e4, rel=1e-6)


def test_klein_phase():
    k = S.KleinFactor(0.5)
    assert k.phase(0) == 1
    assert k.phase(2) == pytest.approx(np.exp(1j))


def test_theta_state_amplitudes():
    st = S.theta_state(0.0, 3)
    assert np.all(st.amplitudes == 1)
    assert np.allclose(st.apply_zeta()[:-1], st.amplitudes[:-1])
    assert np.array_equal(np.diag(st.chirality()), 2 * np.arange(-3, 4))
    half = S.theta_state(math.pi / 2, 4)
    assert np.allclose(half.zeta_eigenvalue(), -1, atol=1e-15)


def test_theta_eigenvalue_general():
    theta = 0.37
    st = S.theta_state(theta, 5)
    assert np.allclose(st.zeta_eigenvalue(), np.exp(-2j * theta), atol=1e-14)
    assert st.apply_zeta()[-1] == 0


def test_chiral_rotation_shifts_zeta():
    st = S.theta_state(0.2, 4)
    rot = st.chiral_rotation(0.3)
    assert np.allclose(rot.zeta_eigenvalue(), np.exp(-2j * 0.3) * st.zeta_eigenvalue(), atol=1e-14)
    assert np.allclose(rot.amplitudes, S.theta_state(0.5, 4).amplitudes, atol=1e-14)


def test_theta_state_truncation_error():
    with pytest.raises(ValidationError):
        S.theta_state(0.1, 0)


def _fock_energy_density(mode, m2):
    """<k| :T^00: |k> for a free scalar from symbolic mode functions.

    :phi^2: in the one-particle state is 2|u|^2; the same holds for each
    derivative bilinear, with u the positive-frequency mode.
    """
    t, x = sp.symbols("t x", real=True)
    w, k, L = sp.Float(mode.omega, 30), sp.Float(mode.k, 30), sp.Float(mode.length, 30)
    u = sp.exp(-sp.I * w * t + sp.I * k * x) / sp.sqrt(2 * w * L)
    bil = lambda a, b: 2 * sp.re(sp.conjugate(a) * b)
    T00 = (bil(sp.diff(u, t), sp.diff(u, t)) + bil(sp.diff(u, x), sp.diff(u, x)) + m2 * bil(u, u)) / 2
    return float(sp.N(T00.subs({t: 0, x: 0}), 20))


@pytest.mark.parametrize("k", [0.0, 1.0, 2.0, -3.0])
def test_stress_tensor_energy_density(fields, k):
    mode = S.PlaneWaveMode(k, fields.m2)
    rep = S.stress_tensor(fields, mode)
    oracle = _fock_energy_density(mode, fields.m2)
    assert oracle == pytest.approx(mode.omega / mode.length, rel=1e-14)
    assert abs(rep.value[0, 0].real - oracle) < 1e-2 * oracle
    assert rep.converged
    # momentum density k/L and the symmetric tensor
    assert rep.value[0, 1].real == pytest.approx(k / mode.length, rel=1e-4, abs=1e-8)
    assert abs(rep.value[0, 1] - rep.value[1, 0]) < 1e-10


def test_stress_tensor_vacuum_and_guards(fields, bump_geometry):
    vac = S.stress_tensor(fields, None)
    assert np.all(vac.value == 0)
    with pytest.raises(ValidationError):
        S.stress_tensor(S.assemble(e=1.0, geom=bump_geometry), S.PlaneWaveMode(1.0, fields.m2))
    with pytest.raises(ValidationError):
        S.stress_tensor(fields, S.PlaneWaveMode(1.0, 2.0))


def test_current_singularity(fields):
    out = S.current_singularity(fields)
    assert out["exponent"] == pytest.approx(-1.0, abs=1e-6)
    assert out["max_deviation"] < 1e-10


def test_charge_decay_massive_values():
    rep = S.charge_decay(S.ChargeProbe(), e=1.0)
    assert rep.mass == pytest.approx(1 / math.sqrt(math.pi))
    assert np.all(rep.values > 0) and rep.values[-1] < 0.5 * rep.values[0]
    # decreasing once rho exceeds the time-smearing scale
    assert np.all(np.diff(rep.values[1:]) < 0)
    assert S.charge_decay(S.ChargeProbe(), ModelParameters(m=1.0)).monotone


def test_charge_decay_asymptotic_power():
    # for large rho the integrand concentrates at omega = m, leaving 1/rho
    rep = S.charge_decay(S.ChargeProbe(rho=(64.0, 128.0, 256.0)), e=1.0)
    assert rep.exponent == pytest.approx(-1.0, abs=0.05)


def test_charge_decay_massless_control():
    rep = S.charge_decay(S.ChargeProbe(), e=1.0, mass=0.0)
    assert not rep.decays
    assert rep.values[-1] > rep.values[0]


def test_charge_probe_profile():
    probe = S.ChargeProbe()
    x = np.linspace(-3, 3, 601)
    p = probe.profile(x)
    assert np.all(p[np.abs(x) < 1] == 1) and np.all(p[np.abs(x) > 1 + probe.edge] == 0)
    t = np.linspace(-5, 5, 4001)
    assert np.trapezoid(probe.time_average(t), t) == pytest.approx(1.0, rel=1e-10)


def test_verification_record_shape():
    rec = S.verification_record("x", {"a": 1}, 0.5, 1.0, True)
    assert set(rec) == {"check", "inputs", "value", "tolerance", "pass"}
