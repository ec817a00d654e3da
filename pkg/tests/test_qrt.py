import numpy as np
import pytest

from bystander.lindblad import propagate
from bystander.models import SX, SY, SZ, FluorDephasingParams, coherence_f, fluor_model, fluor_stationary_env
from bystander.qrt import (
    exact_correlation,
    expectation,
    qrt_deviation,
    qrt_prediction,
    system_propagator,
    system_propagator_family,
)
from bystander.structure import BystanderCoupling, build_general_su
from bystander.tensor import ptrace_env

from helpers import random_density, random_lindbladian

PAULIS = [SX, SY, SZ]
PLUS = np.full((2, 2), 0.5, dtype=complex)


def stationary_model(omega, rho0_s=PLUS):
    p = FluorDephasingParams(1.0, omega)
    p.rho0e = fluor_stationary_env(p)
    m = fluor_model(p, rho0_s)
    return p, m.generator(), m.initial_state()


def test_expectation_identity_at_zero(rng):
    p, gen, rho = stationary_model(1.0, random_density(rng, 2))
    assert expectation(gen, (2, 2), rho, [np.eye(2)], 0.0)[0] == pytest.approx(1.0)


def test_expectation_sigma_z_constant_and_sigma_x_coherence():
    p, gen, rho = stationary_model(1.0)
    for tau in (0.0, 0.5, 3.0):
        ex, ey, ez = expectation(gen, (2, 2), rho, PAULIS, tau)
        assert ez == pytest.approx(0.0, abs=1e-14)
        assert ex.real == pytest.approx(coherence_f(p, tau), abs=1e-12)
    _, gen, rho = stationary_model(1.0, np.diag([0.8, 0.2]))
    assert np.allclose(expectation(gen, (2, 2), rho, [SZ], 2.0), 0.6)


def test_equal_time_moments(rng):
    rs = random_density(rng, 2)
    p, gen, rho = stationary_model(0.7, rs)
    got = exact_correlation(gen, (2, 2), rho, SX, PAULIS, 0.0, 0.0)
    assert np.allclose(got, [np.trace(a @ rs @ SX) for a in PAULIS])


def test_uncoupled_dynamics_obey_regression(rng):
    ls, le = random_lindbladian(rng, 2), random_lindbladian(rng, 2)
    c = BystanderCoupling.diagonal([0.0], [np.eye(2)], [np.eye(4)])
    gen = build_general_su(ls, le, c)
    rho = np.kron(random_density(rng, 2), random_density(rng, 2))
    for o in PAULIS:
        assert qrt_deviation(gen, (2, 2), rho, o, PAULIS, 0.8, 1.3) <= 1e-12


@pytest.mark.parametrize("omega", [0.25, 1.0, 10.0])
@pytest.mark.parametrize("o", [SX, SY])
def test_transverse_observables_regress(omega, o, rng):
    p, gen, rho = stationary_model(omega, random_density(rng, 2))
    for t in (0.0, 0.7, 2.5):
        for tau in (0.3, 1.9):
            eq = exact_correlation(gen, (2, 2), rho, o, PAULIS, t, 0.0)
            ex = exact_correlation(gen, (2, 2), rho, o, PAULIS, t, tau)
            f = coherence_f(p, tau)
            assert np.allclose(ex, [f * eq[0], f * eq[1], eq[2]], atol=1e-10)
            assert qrt_deviation(gen, (2, 2), rho, o, PAULIS, t, tau) <= 1e-8


@pytest.mark.parametrize("omega", [0.25, 1.0])
def test_sigma_z_ratio_law(omega):
    p, gen, rho = stationary_model(omega)
    for t in (0.5, 1.0, 2.0):
        ft = coherence_f(p, t)
        for tau in (0.5, 1.5):
            eq = exact_correlation(gen, (2, 2), rho, SZ, PAULIS, t, 0.0)
            ex = exact_correlation(gen, (2, 2), rho, SZ, PAULIS, t, tau)
            ratio = coherence_f(p, t + tau) / ft
            assert np.allclose(ex[:2], ratio * eq[:2], atol=1e-10)
            pred = qrt_prediction(gen, (2, 2), rho, SZ, PAULIS, t, tau)
            assert np.allclose(pred[:2], coherence_f(p, tau) * eq[:2], atol=1e-10)


def test_sigma_z_deviation_value():
    p, gen, rho = stationary_model(1.0)
    f1, f2 = coherence_f(p, 1.0), coherence_f(p, 2.0)
    dev = qrt_deviation(gen, (2, 2), rho, SZ, PAULIS, 1.0, 1.0)
    # equal-time x,y values from the +x state have modulus |f(1)|
    assert dev == pytest.approx(abs(f2 / f1 - f1) * abs(f1), abs=1e-10)


def test_system_propagator_family(rng):
    p, gen, rho = stationary_model(1.0)
    times = np.linspace(0, 2, 5)
    fam = system_propagator_family(gen, (2, 2), p.rho0e, times)
    rs = random_density(rng, 2)
    states = propagate(gen, np.kron(rs, p.rho0e), times).states
    for g, s, t in zip(fam.maps, states, times):
        assert np.allclose(g, system_propagator(gen, (2, 2), p.rho0e, t))
        assert np.allclose((g @ rs.flatten(order="F")).reshape(2, 2, order="F"), ptrace_env(s, (2, 2)))


def test_shape_checks():
    p, gen, rho = stationary_model(1.0)
    with pytest.raises(ValueError):
        expectation(gen, (2, 2), rho, [np.eye(3)], 0.0)
    with pytest.raises(ValueError):
        expectation(gen, (2, 2), rho, [SX], -1.0)
