import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bystander.lindblad import (
    LindbladSpec,
    RateMatrixError,
    assemble_lindbladian,
    canonical_rates,
    diagonalize_rate_matrix,
    propagate,
    time_local_generator,
    trace_annihilation_error,
    trace_distance_witness,
)
from bystander.models import (
    SM,
    SX,
    SZ,
    FluorDephasingParams,
    coherence_f,
    fluor_canonical_rate,
    fluor_divergence_times,
    fluor_model,
    fluor_stationary_env,
)
from bystander.qrt import system_propagator_family
from bystander.tensor import commutator_super, expm_apply, unvec, vec

from helpers import random_density, random_hermitian

seeds = st.integers(min_value=0, max_value=2**32 - 1)
UP = np.diag([1.0, 0.0]).astype(complex)
DN = np.diag([0.0, 1.0]).astype(complex)


def random_spec(rng, d=3, n=2):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    ops = [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(n)]
    return LindbladSpec(random_hermitian(rng, d), ops, g @ g.conj().T)


def test_decay_generator():
    gen = assemble_lindbladian(LindbladSpec(np.zeros((2, 2)), [SM], [[2.0]]))
    out = unvec(gen @ vec(UP))
    assert np.allclose(out, 2.0 * (DN - UP))


def test_zero_rates_are_pure_commutator(rng):
    h = random_hermitian(rng, 3)
    spec = LindbladSpec(h, [np.eye(3)], [[0.0]])
    gen = assemble_lindbladian(spec)
    assert np.allclose(gen, commutator_super(h))
    assert trace_annihilation_error(gen) < 1e-14


@given(seeds)
def test_nondiagonal_assembly_term_by_term(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, d=2, n=2)
    rho = random_density(rng, 2)
    gen = assemble_lindbladian(spec)
    h = spec.hamiltonian
    ref = -1j * (h @ rho - rho @ h)
    for i, a in enumerate(spec.jump_ops):
        for j, b in enumerate(spec.jump_ops):
            g = spec.rate_matrix[i, j]
            ref = ref + g * (a @ rho @ b.conj().T - 0.5 * (b.conj().T @ a @ rho + rho @ b.conj().T @ a))
    assert np.allclose(unvec(gen @ vec(rho)), ref)
    assert trace_annihilation_error(gen) < 1e-12


def test_rate_matrix_validation():
    with pytest.raises(RateMatrixError):
        LindbladSpec(np.zeros((2, 2)), [SM, SZ], [[1.0, 0.0], [0.0, -0.5]]).validate()
    with pytest.raises(RateMatrixError):
        LindbladSpec(np.zeros((2, 2)), [SM, SZ], [[1.0, 1.0], [0.0, 1.0]]).validate()
    with pytest.raises(ValueError):
        LindbladSpec(np.zeros((2, 2)), [SM], np.eye(2))


def test_diagonalize_already_diagonal():
    spec = LindbladSpec(np.zeros((2, 2)), [SM, SZ], np.diag([0.5, 2.0]))
    out = diagonalize_rate_matrix(spec)
    assert np.allclose(np.diag(out.rate_matrix), [2.0, 0.5])
    assert np.allclose(assemble_lindbladian(out), assemble_lindbladian(spec))


def test_diagonalize_rank_one():
    u = np.array([1.0, 2.0j, -1.0])
    ops = [SM, SZ, SX]
    spec = LindbladSpec(np.zeros((2, 2)), ops, np.outer(u, u.conj()))
    out = diagonalize_rate_matrix(spec)
    assert len(out.jump_ops) == 1
    assert out.rate_matrix[0, 0].real == pytest.approx(np.vdot(u, u).real)
    assert np.allclose(assemble_lindbladian(out), assemble_lindbladian(spec), atol=1e-10)


@given(seeds)
def test_diagonalize_random_psd(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, d=2, n=3)
    out = diagonalize_rate_matrix(spec)
    assert np.max(np.abs(assemble_lindbladian(out) - assemble_lindbladian(spec))) <= 1e-10 * max(
        1.0, np.abs(spec.rate_matrix).max()
    )


def test_propagate_trivial_and_decay():
    times = np.linspace(0, 3, 7)
    rho = np.array([[0.3, 0.1], [0.1, 0.7]], dtype=complex)
    fam = propagate(np.zeros((4, 4)), rho, times)
    assert all(np.allclose(s, rho) for s in fam.states)
    gen = assemble_lindbladian(LindbladSpec(np.zeros((2, 2)), [SM], [[0.8]]))
    fam = propagate(gen, UP, times)
    pops = [s[0, 0].real for s in fam.states]
    assert np.allclose(pops, np.exp(-0.8 * times))


def test_pure_dephasing_coherence():
    gamma = 0.7
    gen = gamma * (np.kron(SZ.T, SZ) - np.eye(4))
    plus = np.full((2, 2), 0.5, dtype=complex)
    for t in (0.0, 0.4, 2.0):
        assert expm_apply(gen, plus, t)[0, 1] == pytest.approx(0.5 * np.exp(-2 * gamma * t))


@given(seeds)
def test_semigroup_composition(seed):
    rng = np.random.default_rng(seed)
    gen = assemble_lindbladian(random_spec(rng, d=2, n=2))
    fam = propagate(gen, None, [0.0, 0.3, 0.5])
    assert np.allclose(fam.maps[2], fam.maps[1] @ propagate(gen, None, [0.0, 0.2]).maps[1], atol=1e-8)


def test_propagate_grid_checks():
    with pytest.raises(ValueError):
        propagate(np.zeros((4, 4)), None, [0.1, 0.2])
    with pytest.raises(ValueError):
        propagate(np.zeros((4, 4)), None, [0.0, 0.2, 0.2])


def test_time_local_generator_semigroup(rng):
    gen = assemble_lindbladian(random_spec(rng, d=2, n=2))
    scale = np.linalg.norm(gen, 2)
    fam = propagate(gen, None, np.linspace(0, 1, 401) / scale)
    est = time_local_generator(fam)
    err = max(np.max(np.abs(g - gen)) for g in est)
    assert err < 1e-3 * scale


def test_fluor_rate_matches_closed_form():
    p = FluorDephasingParams(1.0, 0.25)
    p.rho0e = fluor_stationary_env(p)
    times = np.linspace(0, 5, 1001)
    fam = system_propagator_family(fluor_model(p).generator(), (2, 2), p.rho0e, times)
    est = time_local_generator(fam)
    closed = fluor_canonical_rate(p, times)
    got = np.array([canonical_rates(g)[0] for g in est])
    assert np.max(np.abs(got - closed)) < 1e-4


def test_fluor_divergence_markers_periodic():
    p = FluorDephasingParams(1.0, 1.0)
    p.rho0e = fluor_stationary_env(p)
    times = np.linspace(0, 20, 4001)
    fam = system_propagator_family(fluor_model(p).generator(), (2, 2), p.rho0e, times)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = time_local_generator(fam)
    marks = times[[g is None for g in est]]
    assert marks.size > 0
    # group consecutive markers into clusters, one per pole
    centers = [c.mean() for c in np.split(marks, np.flatnonzero(np.diff(marks) > 0.05) + 1)]
    assert np.allclose(centers, fluor_divergence_times(p, 20.0), atol=0.01)
    # spacing settles once the environment transient has died out
    gaps = np.diff([c for c in centers if c > 4.0])
    assert len(gaps) >= 3
    assert np.max(np.abs(gaps - gaps.mean())) / gaps.mean() < 0.02


def test_witness_identical_states_markov(rng):
    gen = assemble_lindbladian(random_spec(rng, d=2, n=1))
    rho = random_density(rng, 2)
    res = trace_distance_witness(gen, rho, rho, np.linspace(0, 2, 21))
    assert np.allclose(res.distances, 0.0, atol=1e-14)
    assert not res.non_markovian


def _pm_x():
    plus = np.full((2, 2), 0.5, dtype=complex)
    minus = np.array([[0.5, -0.5], [-0.5, 0.5]], dtype=complex)
    return plus, minus


def test_witness_fluor_revivals():
    p = FluorDephasingParams(1.0, 1.0)
    p.rho0e = fluor_stationary_env(p)
    times = np.linspace(0, 15, 301)
    plus, minus = _pm_x()
    res = trace_distance_witness(fluor_model(p).generator(), plus, minus, times, env_state=p.rho0e)
    assert np.allclose(res.distances, np.abs(coherence_f(p, times)), atol=1e-10)
    assert res.non_markovian


def test_witness_fluor_weak_drive_monotone():
    p = FluorDephasingParams(1.0, 0.1)
    p.rho0e = fluor_stationary_env(p)
    times = np.linspace(0, 20, 201)
    f = coherence_f(p, times)
    assert np.all(np.diff(f) <= 0)
    plus, minus = _pm_x()
    res = trace_distance_witness(fluor_model(p).generator(), plus, minus, times, env_state=p.rho0e)
    assert not res.non_markovian
