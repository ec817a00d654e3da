"""Dense linear algebra on small bipartite Hilbert spaces.

Operators are plain complex ``ndarray`` objects; subsystem structure is passed
explicitly as a ``dims`` tuple (system first, environment second).

Superoperators are matrices acting on *column-stacked* vectorized operators,
``vec(X) = X.flatten(order="F")``, so that ``vec(A X B) = (B.T kron A) vec(X)``.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np
from scipy.linalg import expm

TOL_STRUCT = 1e-10
TOL_NUM = 1e-8

Dims = tuple[int, ...]


class NotHermitianError(ValueError):
    pass


# --- operators -------------------------------------------------------------

def dag(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def kron(*ops: np.ndarray) -> np.ndarray:
    """Tensor product, first factor is the slow index."""
    return reduce(np.kron, ops)


def is_hermitian(a: np.ndarray, tol: float = TOL_STRUCT) -> bool:
    return bool(np.max(np.abs(a - dag(a)), initial=0.0) <= tol)


def partial_trace(x: np.ndarray, dims: Sequence[int], keep: int | Sequence[int]) -> np.ndarray:
    """Reduced operator on the subsystems listed in ``keep``.

    ``dims`` must declare at least two subsystems whose product is ``x.shape[0]``.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("partial_trace needs at least two subsystems")
    if int(np.prod(dims)) != x.shape[0] or x.shape[0] != x.shape[1]:
        raise ValueError(f"operator shape {x.shape} does not match dims {dims}")
    keep = [keep] if np.isscalar(keep) else list(keep)
    n = len(dims)
    for k in keep:
        if not 0 <= k < n:
            raise IndexError(f"invalid subsystem index {k} for {n} subsystems")
    keep = sorted(set(keep))
    traced = [i for i in range(n) if i not in keep]
    t = x.reshape(dims + dims)
    for count, i in enumerate(traced):
        cur = i - count
        t = np.trace(t, axis1=cur, axis2=cur + t.ndim // 2)
    dk = int(np.prod([dims[i] for i in keep]))
    return t.reshape(dk, dk)


def ptrace_env(x: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """System marginal of a bipartite operator (traces out subsystem 1)."""
    ds, de = dims
    return np.einsum("aebe->ab", x.reshape(ds, de, ds, de))


def ptrace_sys(x: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Environment marginal of a bipartite operator (traces out subsystem 0)."""
    ds, de = dims
    return np.einsum("aeaf->ef", x.reshape(ds, de, ds, de))


def herm_eig(h: np.ndarray, tol: float = TOL_STRUCT) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvector columns of a Hermitian matrix.

    Inside degenerate eigenspaces the basis is arbitrary.
    """
    if not is_hermitian(h, tol):
        raise NotHermitianError("herm_eig requires a Hermitian matrix")
    h = 0.5 * (h + dag(h))
    w, v = np.linalg.eigh(h)
    return w, v


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    if rho1.shape != rho2.shape:
        raise ValueError("trace_distance: shape mismatch")
    diff = rho1 - rho2
    diff = 0.5 * (diff + dag(diff))
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def check_density_matrix(rho: np.ndarray, tol: float = TOL_STRUCT, trace: float | None = 1.0) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, PSD and (optionally) of given trace."""
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if not is_hermitian(rho, tol):
        raise ValueError("density matrix is not Hermitian")
    if trace is not None and abs(np.trace(rho) - trace) > tol:
        raise ValueError(f"density matrix trace {np.trace(rho).real:.3g} != {trace}")
    lam = np.linalg.eigvalsh(0.5 * (rho + dag(rho)))
    if lam[0] < -tol:
        raise ValueError(f"density matrix has negative eigenvalue {lam[0]:.3g}")


def ket(index: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[index] = 1.0
    return v


def proj(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def gell_mann_basis(d: int) -> list[np.ndarray]:
    """Hermitian basis of d x d matrices: identity/sqrt(d) followed by the
    generalized Gell-Mann matrices, orthonormal under Tr(A^dag B)."""
    basis = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            a = np.zeros((d, d), dtype=complex)
            a[j, k], a[k, j] = -1j, 1j
            basis += [s / np.sqrt(2), a / np.sqrt(2)]
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        basis.append(np.diag(diag).astype(complex) / np.sqrt(l * (l + 1)))
    return basis


# --- vectorization and superoperators ---------------------------------------

def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).flatten(order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    if d is None:
        d = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(d, d, order="F")


def vec_identity_row(d: int) -> np.ndarray:
    """Row vector r with ``r @ vec(X) = Tr(X)``."""
    return vec(np.eye(d))


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X."""
    return np.kron(np.eye(a.shape[0]), a)


def spost(b: np.ndarray) -> np.ndarray:
    """Superoperator of X -> X B."""
    return np.kron(b.T, np.eye(b.shape[0]))


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X B."""
    return np.kron(b.T, a)


def commutator_super(h: np.ndarray) -> np.ndarray:
    """Superoperator of X -> -i[H, X]."""
    return -1j * (spre(h) - spost(h))


def anticommutator_super(a: np.ndarray) -> np.ndarray:
    """Superoperator of X -> {A, X}."""
    return spre(a) + spost(a)


def kraus_super(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Superoperator of X -> sum_k V_k X V_k^dag."""
    return sum(sandwich(v, dag(v)) for v in kraus)


def apply_super(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = x.shape[0]
    if s.shape != (d * d, d * d):
        raise ValueError(f"superoperator of shape {s.shape} cannot act on {x.shape} operator")
    return unvec(s @ vec(x), d)


def super_dim(s: np.ndarray) -> int:
    return int(round(np.sqrt(s.shape[0])))


def is_trace_preserving(s: np.ndarray, tol: float = TOL_STRUCT) -> bool:
    d = super_dim(s)
    r = vec_identity_row(d)
    return bool(np.max(np.abs(r @ s - r)) <= tol)


def super_to_tensor(s: np.ndarray) -> np.ndarray:
    """T[i, j, k, l] with (S[X])[i, j] = sum_kl T[i, j, k, l] X[k, l]."""
    d = super_dim(s)
    return s.reshape(d, d, d, d, order="F")


def tensor_to_super(t: np.ndarray) -> np.ndarray:
    d = t.shape[0]
    return t.reshape(d * d, d * d, order="F")


def super_kron(s_sys: np.ndarray, s_env: np.ndarray) -> np.ndarray:
    """Superoperator of the product map X_s (x) X_e -> S_s[X_s] (x) S_e[X_e]."""
    ds, de = super_dim(s_sys), super_dim(s_env)
    ts, te = super_to_tensor(s_sys), super_to_tensor(s_env)
    # axes: rows (a,b),(a',b'); cols (c,e),(c',e')
    t8 = np.einsum("pqrs,bBeE->pbqBresE", ts, te)
    d = ds * de
    return tensor_to_super(t8.reshape(d, d, d, d))


def realign(s: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Realignment R of a bipartite superoperator.

    ``super_kron(S, F)`` maps to the rank-one matrix
    ``outer(super_to_tensor(S).ravel(), super_to_tensor(F).ravel())``, so a sum
    of product maps becomes a sum of rank-one terms.
    """
    ds, de = dims
    t8 = super_to_tensor(s).reshape(ds, de, ds, de, ds, de, ds, de)
    return np.einsum("pbqBresE->pqrsbBeE", t8).reshape(ds ** 4, de ** 4)


def unrealign_env(row: np.ndarray, de: int) -> np.ndarray:
    """Inverse of the environment half of :func:`realign`."""
    return tensor_to_super(np.asarray(row).reshape(de, de, de, de))


def lift_sys(s_sys: np.ndarray, de: int) -> np.ndarray:
    return super_kron(s_sys, np.eye(de * de))


def lift_env(s_env: np.ndarray, ds: int) -> np.ndarray:
    return super_kron(np.eye(ds * ds), s_env)


def partial_trace_sys_super(dims: Sequence[int]) -> np.ndarray:
    """Matrix of vec(X_se) -> vec(Tr_s X_se)."""
    ds, de = dims
    d = ds * de
    out = np.zeros((de * de, d * d), dtype=complex)
    for col in range(d * d):
        e = np.zeros(d * d, dtype=complex)
        e[col] = 1.0
        out[:, col] = vec(ptrace_sys(unvec(e, d), dims))
    return out


def partial_trace_env_super(dims: Sequence[int]) -> np.ndarray:
    """Matrix of vec(X_se) -> vec(Tr_e X_se)."""
    ds, de = dims
    d = ds * de
    out = np.zeros((ds * ds, d * d), dtype=complex)
    for col in range(d * d):
        e = np.zeros(d * d, dtype=complex)
        e[col] = 1.0
        out[:, col] = vec(ptrace_env(unvec(e, d), dims))
    return out


def dual_super(s: np.ndarray) -> np.ndarray:
    """Heisenberg-picture dual: Tr(O S[rho]) = Tr(rho S#[O])."""
    return s.conj().T


def hermitian_conjugate_super(s: np.ndarray) -> np.ndarray:
    """Matrix of X -> (S[X^dag])^dag."""
    t = super_to_tensor(s)
    # (S[X^dag])^dag_{ij} = conj(sum_kl T[j,i,k,l] conj(X[l,k]))
    return tensor_to_super(np.einsum("jilk->ijkl", t).conj())


def expm_apply(gen: np.ndarray, x: np.ndarray, t: float) -> np.ndarray:
    """exp(t L)[X] for a superoperator L."""
    if t < 0:
        raise ValueError("expm_apply needs t >= 0")
    d = x.shape[0]
    if gen.shape != (d * d, d * d):
        raise ValueError(f"generator of shape {gen.shape} cannot act on {x.shape} operator")
    if t == 0:
        return np.array(x, dtype=complex)
    return unvec(expm(t * gen) @ vec(x), d)
