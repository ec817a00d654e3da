"""Two-time system correlations: exact bipartite values versus the
quantum-regression prediction built from the system-only propagator."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .lindblad import Propagation, propagate
from .tensor import partial_trace_env_super, ptrace_env, ptrace_sys, unvec, vec


def _evolve(gen: np.ndarray, rho: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("times must be non-negative")
    if t == 0:
        return np.array(rho, dtype=complex)
    return unvec(expm(t * gen) @ vec(rho), rho.shape[0])


def _check(gen: np.ndarray, dims, rho: np.ndarray, ops: Sequence[np.ndarray]) -> None:
    ds, de = dims
    d = ds * de
    if rho.shape != (d, d) or gen.shape != (d * d, d * d):
        raise ValueError("state or generator does not match dims")
    for a in ops:
        if a.shape != (ds, ds):
            raise ValueError("observables must act on the system factor")


def expectation(gen: np.ndarray, dims, rho0_se: np.ndarray, ops: Sequence[np.ndarray], tau: float) -> np.ndarray:
    """Tr[(A (x) I) rho_tau] for each A."""
    _check(gen, dims, rho0_se, ops)
    rs = ptrace_env(_evolve(gen, rho0_se, tau), dims)
    return np.array([np.trace(a @ rs) for a in ops])


def exact_correlation(
    gen: np.ndarray, dims, rho0_se: np.ndarray, left: np.ndarray, ops: Sequence[np.ndarray], t: float, tau: float
) -> np.ndarray:
    """Tr[(A (x) I) G_tau[rho_t (O (x) I)]] for each A."""
    _check(gen, dims, rho0_se, list(ops) + [left])
    de = dims[1]
    rho_t = _evolve(gen, rho0_se, t)
    seed = rho_t @ np.kron(left, np.eye(de))
    rs = ptrace_env(_evolve(gen, seed, tau), dims)
    return np.array([np.trace(a @ rs) for a in ops])


def system_propagator(gen: np.ndarray, dims, rho0_e: np.ndarray, tau: float) -> np.ndarray:
    """Matrix of X -> Tr_e(G_tau[X (x) rho0_e])."""
    ds, de = dims
    lift = np.array([vec(np.kron(unvec(e, ds), rho0_e)) for e in np.eye(ds * ds)]).T
    g = expm(tau * gen) if tau > 0 else np.eye(gen.shape[0], dtype=complex)
    return partial_trace_env_super(dims) @ g @ lift


def qrt_prediction(
    gen: np.ndarray, dims, rho0_se: np.ndarray, left: np.ndarray, ops: Sequence[np.ndarray], t: float, tau: float,
    rho0_e: np.ndarray | None = None,
) -> np.ndarray:
    """Tr[A G^s_tau[rho^s_t O]] with G^s built on the initial environment state."""
    _check(gen, dims, rho0_se, list(ops) + [left])
    ds, de = dims
    if rho0_e is None:
        rho0_e = ptrace_sys(rho0_se, dims)
    rs_t = ptrace_env(_evolve(gen, rho0_se, t), dims)
    out = unvec(system_propagator(gen, dims, rho0_e, tau) @ vec(rs_t @ left), ds)
    return np.array([np.trace(a @ out) for a in ops])


def qrt_deviation(
    gen: np.ndarray, dims, rho0_se: np.ndarray, left: np.ndarray, ops: Sequence[np.ndarray], t: float, tau: float,
    rho0_e: np.ndarray | None = None,
) -> float:
    exact = exact_correlation(gen, dims, rho0_se, left, ops, t, tau)
    pred = qrt_prediction(gen, dims, rho0_se, left, ops, t, tau, rho0_e)
    return float(np.max(np.abs(exact - pred)))


def system_propagator_family(gen: np.ndarray, dims, rho0_e: np.ndarray, times) -> Propagation:
    """Grid family of reduced maps X -> Tr_e(exp(t L)[X (x) rho0_e])."""
    ds, de = dims
    lift = np.array([vec(np.kron(unvec(e, ds), rho0_e)) for e in np.eye(ds * ds)]).T
    full = propagate(gen, None, times)
    ptr = partial_trace_env_super(dims)
    return Propagation(full.times, [ptr @ g @ lift for g in full.maps])
