import numpy as np
import pytest
from scipy import stats

from bystander.jumps import (
    FORMAT_VERSION,
    dumps_records,
    ensemble_average,
    loads_events,
    loads_header,
    simulate_ensemble,
    simulate_trajectory,
    trace_distance_stderr,
    waiting_time_histogram,
)
from bystander.lindblad import propagate
from bystander.models import DN, SM, SZ, FluorDephasingParams, coherence_f, fluor_model
from bystander.structure import BystanderCoupling, ModelSpec
from bystander.tensor import ptrace_env, trace_distance, unvec, vec
from scipy.linalg import expm

from helpers import random_density, random_lindbladian

PLUS = np.full((2, 2), 0.5, dtype=complex)


def poisson_model(rate, horizon):
    c = BystanderCoupling.diagonal([rate], [np.eye(2)], [np.eye(4)])
    z = np.zeros((4, 4))
    return ModelSpec(2, 2, z, z, c, np.eye(2) / 2, np.eye(2) / 2, np.array([0.0, horizon]))


def test_uncoupled_trajectory_is_deterministic(rng):
    ls = random_lindbladian(rng, 2)
    c = BystanderCoupling.diagonal([0.0], [np.eye(2)], [np.eye(4)])
    rs = random_density(rng, 2)
    times = np.linspace(0, 2, 9)
    m = ModelSpec(2, 2, ls, np.zeros((4, 4)), c, rs, DN, times)
    rec = simulate_trajectory(m, seed=1)
    assert rec.events == []
    for t, s in zip(times, rec.sys_states):
        assert np.allclose(s, unvec(expm(t * ls) @ vec(rs)))
    avg = ensemble_average([rec, simulate_trajectory(m, seed=2)])
    assert np.allclose(avg.mean[-1], rec.bipartite(len(times) - 1))
    assert np.allclose(avg.stderr, 0)


def test_undriven_ground_environment_never_jumps():
    p = FluorDephasingParams(1.0, 0.0, rho0e=DN)
    m = fluor_model(p, PLUS, np.linspace(0, 20, 11))
    recs = simulate_ensemble(m, 20, seed=3)
    assert all(r.events == [] for r in recs)
    assert all(np.allclose(r.sys_states[:, 0, 1], 0.5) for r in recs)
    assert np.allclose(coherence_f(p, m.times), 1.0)


def test_poisson_waiting_times():
    rate = 1.5
    recs = simulate_ensemble(poisson_model(rate, 200.0), 34, seed=11)
    w = waiting_time_histogram(recs, bins=40)
    assert w.intervals.size >= 10_000
    ks = stats.kstest(w.intervals, "expon", args=(0, 1 / rate))
    # asymptotic 5% critical value of the one-sample KS statistic
    assert ks.statistic < 1.358 / np.sqrt(w.intervals.size)
    assert abs(w.mean - 1 / rate) < 3 * w.stderr


def test_waiting_time_strong_drive():
    p = FluorDephasingParams(1.0, 10.0)
    m = fluor_model(p, PLUS, np.array([0.0, 400.0]))
    w = waiting_time_histogram(simulate_ensemble(m, 10, seed=5))
    assert w.mean == pytest.approx(2.0, rel=0.05)


def test_waiting_time_weak_drive_renewal_mean():
    # jump rate gamma * stationary excited population
    p = FluorDephasingParams(1.0, 0.1)
    m = fluor_model(p, PLUS, np.array([0.0, 3000.0]))
    w = waiting_time_histogram(simulate_ensemble(m, 150, seed=8))
    expected = (p.gamma ** 2 + 2 * p.omega ** 2) / (p.gamma * p.omega ** 2)
    assert abs(w.mean - expected) < 3 * w.stderr


def test_ensemble_matches_exact():
    p = FluorDephasingParams(1.0, 1.0)
    times = np.linspace(0, 4, 9)
    m = fluor_model(p, PLUS, times)
    recs = simulate_ensemble(m, 2000, seed=21)
    avg = ensemble_average(recs)
    se = trace_distance_stderr(recs, seed=21)
    exact = propagate(m.generator(), m.initial_state(), times).states
    for k in range(1, len(times)):
        assert trace_distance(avg.mean[k], exact[k]) <= 3 * se[k]
    coh = np.array([2 * ptrace_env(x, (2, 2))[0, 1].real for x in avg.mean])
    coh_se = 2 * np.array([ptrace_env(x, (2, 2))[0, 1] for x in avg.stderr]).real
    assert np.all(np.abs(coh - coherence_f(p, times)) <= 4 * coh_se + 1e-12)


def test_reproducible_and_thread_independent():
    m = fluor_model(FluorDephasingParams(1.0, 1.0), PLUS, np.linspace(0, 5, 6))
    a = simulate_ensemble(m, 12, seed=99, threads=1)
    b = simulate_ensemble(m, 12, seed=99, threads=4)
    assert [r.checksum() for r in a] == [r.checksum() for r in b]
    assert dumps_records(a) == dumps_records(b)
    c = simulate_ensemble(m, 12, seed=100)
    assert [r.checksum() for r in a] != [r.checksum() for r in c]
    assert simulate_trajectory(m, seed=99, index=5).checksum() == a[5].checksum()


def test_jump_bookkeeping():
    m = fluor_model(FluorDephasingParams(1.0, 2.0), PLUS, np.linspace(0, 10, 11))
    rec = simulate_trajectory(m, seed=4)
    ts = [t for t, _ in rec.events]
    assert ts == sorted(ts) and all(0 < t <= 10 for t in ts)
    # each jump applies sigma_z to the system, flipping the coherence sign
    for k, t in enumerate(m.times):
        flips = sum(1 for s in ts if s <= t)
        assert rec.sys_states[k][0, 1].real == pytest.approx(0.5 * (-1) ** flips)
    for e in rec.env_states:
        assert np.trace(e).real == pytest.approx(1.0)
        assert np.linalg.eigvalsh(e)[0] >= -1e-12


def test_serialization_roundtrip():
    m = fluor_model(FluorDephasingParams(1.0, 1.0), PLUS, np.linspace(0, 3, 4))
    recs = simulate_ensemble(m, 3, seed=7)
    text = dumps_records(recs)
    head = loads_header(text)
    assert head["version"] == FORMAT_VERSION and head["count"] == 3
    back = loads_events(text)
    assert [b["events"] for b in back] == [r.events for r in recs]
    assert [b["checksum"] for b in back] == [r.checksum() for r in recs]
    bad = text.replace(f'"version": {FORMAT_VERSION}', '"version": 99')
    with pytest.raises(ValueError):
        loads_header(bad)


def test_requires_diagonal_rates():
    c = BystanderCoupling.from_kraus(np.array([[1.0, 0.5], [0.5, 1.0]]), [SM, SM.T], [[[SZ], [SZ]], [[SZ], [SZ]]])
    m = ModelSpec(2, 2, np.zeros((4, 4)), np.zeros((4, 4)), c, PLUS, DN)
    with pytest.raises(ValueError):
        simulate_trajectory(m, seed=0)


def test_grid_check():
    m = fluor_model(FluorDephasingParams(), PLUS)
    with pytest.raises(ValueError):
        simulate_trajectory(m, seed=0, times=[0.5, 1.0])
