import numpy as np
import pytest
from hypothesis import given, strategies as st

from bystander.models import SX, SZ
from bystander.tensor import (
    NotHermitianError,
    check_density_matrix,
    commutator_super,
    dual_super,
    expm_apply,
    gell_mann_basis,
    herm_eig,
    ket,
    hermitian_conjugate_super,
    kraus_super,
    kron,
    partial_trace,
    partial_trace_env_super,
    partial_trace_sys_super,
    proj,
    ptrace_env,
    ptrace_sys,
    realign,
    sandwich,
    spost,
    spre,
    super_kron,
    super_to_tensor,
    trace_distance,
    unvec,
    vec,
)

from helpers import random_density, random_hermitian

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_kron_identity():
    assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))


def test_kron_pauli_entries():
    k = kron(SZ, SX)
    assert k[0, 1] == 1 and k[2, 3] == -1


@given(seeds)
def test_kron_index_sum(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    k = kron(a, b)
    for i in range(2):
        for j in range(2):
            for p in range(2):
                for q in range(2):
                    assert k[2 * i + p, 2 * j + q] == pytest.approx(a[i, j] * b[p, q])


def test_partial_trace_product(rng):
    a, b = random_density(rng, 2), random_density(rng, 3)
    x = np.kron(a, 2.0 * b)
    assert np.allclose(partial_trace(x, (2, 3), 0), 2.0 * a)
    assert np.allclose(ptrace_env(x, (2, 3)), 2.0 * a)
    assert np.allclose(ptrace_sys(x, (2, 3)), 2.0 * b)


UP, DN = ket(0, 2), ket(1, 2)


def test_partial_trace_bell():
    bell = (np.kron(UP, UP) + np.kron(DN, DN)) / np.sqrt(2)
    rho = proj(bell)
    assert np.allclose(ptrace_env(rho, (2, 2)), np.eye(2) / 2)
    assert np.allclose(ptrace_sys(rho, (2, 2)), np.eye(2) / 2)


def test_partial_trace_index_sum(rng):
    x = random_hermitian(rng, 4)
    ref_s = np.array([[sum(x[2 * i + k, 2 * j + k] for k in range(2)) for j in range(2)] for i in range(2)])
    ref_e = np.array([[sum(x[2 * k + i, 2 * k + j] for k in range(2)) for j in range(2)] for i in range(2)])
    assert np.allclose(ptrace_env(x, (2, 2)), ref_s)
    assert np.allclose(ptrace_sys(x, (2, 2)), ref_e)


def test_partial_trace_three_parties(rng):
    a, b, c = (random_density(rng, d) for d in (2, 3, 2))
    x = kron(a, b, c)
    assert np.allclose(partial_trace(x, (2, 3, 2), [0, 2]), np.kron(a, c))
    with pytest.raises(IndexError):
        partial_trace(x, (2, 3, 2), 3)
    with pytest.raises(ValueError):
        partial_trace(x, (2, 2), 0)


def test_herm_eig_paulis():
    w, _ = herm_eig(SZ)
    assert np.allclose(w, [-1, 1])
    w, v = herm_eig(SX)
    assert np.allclose(w, [-1, 1])
    minus = (UP - DN) / np.sqrt(2)
    assert abs(abs(np.vdot(minus, v[:, 0])) - 1) < 1e-12


def test_herm_eig_quadratic():
    rho = np.array([[1, -1j], [1j, 2]]) / 3
    w, _ = herm_eig(rho)
    assert np.allclose(w, [(3 - np.sqrt(5)) / 6, (3 + np.sqrt(5)) / 6])


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        herm_eig(np.array([[0, 1], [0, 0]], dtype=complex))


def test_trace_distance_examples(rng):
    r = random_density(rng, 2)
    assert trace_distance(r, r) == pytest.approx(0.0, abs=1e-15)
    assert trace_distance(proj(UP), proj(DN)) == pytest.approx(1.0)


@given(seeds)
def test_trace_distance_qubit_formula(seed):
    rng = np.random.default_rng(seed)
    r1, r2 = random_density(rng, 2), random_density(rng, 2)
    d = r1 - r2
    # traceless Hermitian 2x2: eigenvalues +-sqrt(-det)
    ref = np.sqrt(max(-np.linalg.det(d).real, 0.0))
    assert trace_distance(r1, r2) == pytest.approx(ref, abs=1e-12)


@given(seeds)
def test_trace_distance_contracts_under_ptrace(seed):
    rng = np.random.default_rng(seed)
    r1, r2 = random_density(rng, 6), random_density(rng, 6)
    assert trace_distance(ptrace_env(r1, (2, 3)), ptrace_env(r2, (2, 3))) <= trace_distance(r1, r2) + 1e-12


def test_check_density_matrix():
    check_density_matrix(np.eye(2) / 2)
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        check_density_matrix(np.eye(2))


def test_gell_mann_orthonormal():
    for d in (2, 3, 4):
        b = gell_mann_basis(d)
        assert len(b) == d * d
        gram = np.array([[np.trace(x.conj().T @ y) for y in b] for x in b])
        assert np.allclose(gram, np.eye(d * d))


@given(seeds)
def test_superoperator_actions(seed):
    rng = np.random.default_rng(seed)
    a, b, x = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(unvec(spre(a) @ vec(x)), a @ x)
    assert np.allclose(unvec(spost(b) @ vec(x)), x @ b)
    assert np.allclose(unvec(sandwich(a, b) @ vec(x)), a @ x @ b)
    assert np.allclose(unvec(commutator_super(a) @ vec(x)), -1j * (a @ x - x @ a))


@given(seeds)
def test_super_kron_and_realign(seed):
    rng = np.random.default_rng(seed)
    ks = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))]
    ke = [rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))]
    s, f = kraus_super(ks), kraus_super(ke)
    xs, xe = random_density(rng, 2), random_density(rng, 3)
    big = super_kron(s, f)
    lhs = unvec(big @ vec(np.kron(xs, xe)))
    rhs = np.kron(unvec(s @ vec(xs)), unvec(f @ vec(xe)))
    assert np.allclose(lhs, rhs)
    r = realign(big, (2, 3))
    assert np.allclose(r, np.outer(super_to_tensor(s).ravel(), super_to_tensor(f).ravel()))


def test_partial_trace_supers(rng):
    x = random_density(rng, 6)
    assert np.allclose(unvec(partial_trace_env_super((2, 3)) @ vec(x)), ptrace_env(x, (2, 3)))
    assert np.allclose(unvec(partial_trace_sys_super((2, 3)) @ vec(x)), ptrace_sys(x, (2, 3)))


def test_dual_and_hermitian_conjugate(rng):
    k = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))]
    s = kraus_super(k) + spre(rng.normal(size=(2, 2)))
    rho, o = random_density(rng, 2), random_hermitian(rng, 2)
    lhs = np.trace(o @ unvec(s @ vec(rho)))
    assert lhs == pytest.approx(np.trace(unvec(dual_super(s) @ vec(o)).conj().T @ rho))
    x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    ref = unvec(s @ vec(x.conj().T)).conj().T
    assert np.allclose(unvec(hermitian_conjugate_super(s) @ vec(x)), ref)


def test_expm_apply_identity_and_semigroup(rng):
    g = commutator_super(random_hermitian(rng, 2))
    x = random_density(rng, 2)
    assert np.allclose(expm_apply(g, x, 0.0), x)
    assert np.allclose(expm_apply(g, expm_apply(g, x, 0.3), 0.4), expm_apply(g, x, 0.7))
    with pytest.raises(ValueError):
        expm_apply(g, x, -1.0)
