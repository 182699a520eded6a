import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefront.errors import NotPositive
from wavefront.field import MOMENTUM, VELOCITY, parse_field
from wavefront.legendre import (ExplicitHamiltonian, LagrangianModel, LegendreHamiltonian,
                                hamiltonian_value, lagrangian_value, momentum_of, omega_p,
                                omega_v, velocity_of)

ORIGIN = np.zeros(2)


def lagrangian(source, n=2):
    return LagrangianModel(parse_field(source, n, VELOCITY))


def hamiltonian(source, n=2):
    return ExplicitHamiltonian(parse_field(source, n, MOMENTUM))


QUAD = lagrangian("v1^2/2 + v2^2/2")
QUARTIC = lagrangian("(v1^2+v2^2)^2/4")
ANISO = lagrangian("(2*v1^2 + v2^2)/2")


def test_momentum_examples():
    np.testing.assert_array_equal(momentum_of(QUAD, ORIGIN, [3, 4]), [3, 4])
    np.testing.assert_allclose(momentum_of(QUARTIC, ORIGIN, [1, 1]), [2, 2], rtol=1e-15)
    np.testing.assert_array_equal(momentum_of(ANISO, ORIGIN, [1, 1]), [2, 1])


def test_velocity_examples():
    np.testing.assert_allclose(velocity_of(QUAD, ORIGIN, [3, 4], [-7, 0.1]), [3, 4], atol=1e-13)
    v = velocity_of(QUARTIC, ORIGIN, [2, 0], [1, 0])
    np.testing.assert_allclose(v, [2 ** (1 / 3), 0], atol=1e-12)
    assert v[0] == pytest.approx(1.259921, abs=1e-6)


def test_indefinite_lagrangian_is_rejected():
    m = lagrangian("v1^2/2 - v2^2/2")
    with pytest.raises(NotPositive):
        velocity_of(m, ORIGIN, [1, 1])


def test_hamiltonian_value_examples():
    assert hamiltonian_value(QUAD, ORIGIN, [3, 4]) == pytest.approx(12.5, abs=1e-12)
    # H(p) = (3/4)|p|^(4/3) for the quartic Lagrangian
    assert hamiltonian_value(QUARTIC, ORIGIN, [2, 0], [1, 0]) == pytest.approx(0.75 * 2 ** (4 / 3), abs=1e-12)


def test_lagrangian_value_from_explicit_hamiltonian():
    assert lagrangian_value(hamiltonian("p1^2/2 + p2^2/2"), ORIGIN, [3, 4]) == pytest.approx(12.5, abs=1e-12)
    # inverse of the quartic pair: L(v) = |v|^4/4 at v = (2^(1/3), 0)
    H43 = hamiltonian("(3/4)*(p1^2+p2^2)^(2/3)")
    v = np.array([2 ** (1 / 3), 0.0])
    assert lagrangian_value(H43, ORIGIN, v, [2, 0]) == pytest.approx(np.sum(v ** 2) ** 2 / 4, abs=1e-12)


def test_double_round_trip_lagrangian_hamiltonian_lagrangian():
    rng = np.random.default_rng(2)
    H43 = hamiltonian("(3/4)*(p1^2+p2^2)^(2/3)")
    v = rng.uniform(0.5, 1.5, (50, 2)) * rng.choice([-1, 1], (50, 2))
    p = momentum_of(QUARTIC, ORIGIN, v)
    H = hamiltonian_value(QUARTIC, ORIGIN, p, v)
    np.testing.assert_allclose(H, H43.value(ORIGIN, p), atol=1e-12)
    L = lagrangian_value(H43, ORIGIN, v, p)
    np.testing.assert_allclose(L, QUARTIC.L.value(ORIGIN, v), atol=1e-9)


def test_omega_examples():
    assert omega_v(QUAD, ORIGIN, [3, 4]) == 25.0
    assert omega_v(QUARTIC, ORIGIN, [1, 1]) == pytest.approx(4.0, abs=1e-14)
    assert omega_v(QUARTIC, ORIGIN, [0, 0]) == 0.0
    eik = hamiltonian("(p1^2+p2^2+p3^2)/2 - 1/2", 3)
    p = np.array([0.3, -1.2, 0.5])
    assert omega_p(eik, np.zeros(3), p) == pytest.approx(np.sum(p ** 2), abs=1e-15)
    assert omega_p(eik, np.zeros(3), np.zeros(3)) == 0.0


def test_quadratic_lagrangian_inverts_in_two_newton_steps():
    m = lagrangian("((2 + sin(x1))*v1^2 + 2*0.3*v1*v2 + (1 + x2^2)*v2^2)/2")
    rng = np.random.default_rng(4)
    x = rng.uniform(-2, 2, (200, 2))
    v = rng.uniform(-2, 2, (200, 2))
    p = m.momentum(x, v)
    seed = rng.uniform(-50, 50, (200, 2))
    back, iterations = m.velocity(x, p, seed, return_iterations=True)
    assert iterations <= 2
    np.testing.assert_allclose(back, v, atol=1e-12)


MODELS = {
    "quadratic": QUAD,
    "quartic": QUARTIC,
    "anisotropic": lagrangian("((1+0.3*sin(x1))*v1^2 + (1+0.3*sin(x2))*v2^2)/2"),
    "mixed": lagrangian("(v1^2+v2^2)^2/4 + (1 + x1^2/4)*(v1^2+v2^2)/2"),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_round_trip_and_consistency(name):
    m = MODELS[name]
    hm = LegendreHamiltonian(m)
    rng = np.random.default_rng(9)
    x = rng.uniform(-2, 2, (500, 2))
    d = rng.normal(size=(500, 2))
    v = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(0.5, 2, (500, 1))
    p = m.momentum(x, v)
    back = m.velocity(x, p)
    assert np.max(np.abs(back - v)) <= 1e-10
    H = hamiltonian_value(m, x, p)
    assert np.max(np.abs(np.sum(p * v, axis=1) - m.L.value(x, v) - H)) <= 1e-9
    assert np.max(np.abs(omega_p(hm, x, p) - omega_v(m, x, v))) <= 1e-9


def test_legendre_hamiltonian_gradients_match_finite_differences():
    hm = LegendreHamiltonian(MODELS["mixed"])
    x = np.array([0.3, -0.4])
    p = np.array([0.8, 1.1])
    ev = hm.evaluate(x, p)
    h = 1e-6
    for i in range(2):
        e = np.eye(2)[i] * h
        dHdp = (hm.value(x, p + e) - hm.value(x, p - e)) / (2 * h)
        dHdx = (hm.value(x + e, p) - hm.value(x - e, p)) / (2 * h)
        assert ev.dp[i] == pytest.approx(dHdp, abs=1e-8)
        assert ev.dx[i] == pytest.approx(dHdx, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0, 2 * np.pi), st.floats(-2, 2), st.floats(-2, 2))
def test_quartic_inverse_matches_closed_form(speed, angle, x1, x2):
    p = speed * np.array([np.cos(angle), np.sin(angle)])
    v = velocity_of(QUARTIC, [x1, x2], p)
    # |v| = |p|^(1/3), v parallel to p
    np.testing.assert_allclose(v, p / speed * speed ** (1 / 3), atol=1e-11)
