"""GKSL generators, grid propagation and time-local generator extraction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .tensor import (
    TOL_NUM,
    TOL_STRUCT,
    anticommutator_super,
    check_density_matrix,
    commutator_super,
    dag,
    gell_mann_basis,
    is_hermitian,
    ptrace_env,
    sandwich,
    super_dim,
    trace_distance,
    unvec,
    vec,
    vec_identity_row,
)


class RateMatrixError(ValueError):
    """Rate matrix is not Hermitian positive semidefinite."""


@dataclass
class LindbladSpec:
    hamiltonian: np.ndarray
    jump_ops: list[np.ndarray]
    rate_matrix: np.ndarray

    def __post_init__(self):
        self.hamiltonian = np.asarray(self.hamiltonian, dtype=complex)
        self.jump_ops = [np.asarray(t, dtype=complex) for t in self.jump_ops]
        self.rate_matrix = np.atleast_2d(np.asarray(self.rate_matrix, dtype=complex))
        n = len(self.jump_ops)
        if self.rate_matrix.shape != (n, n):
            raise ValueError(f"rate matrix shape {self.rate_matrix.shape} does not match {n} jump operators")

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def validate(self, tol: float = TOL_STRUCT) -> None:
        g = self.rate_matrix
        if g.size and not is_hermitian(g, tol):
            raise RateMatrixError("rate matrix is not Hermitian")
        if g.size:
            lam = np.linalg.eigvalsh(0.5 * (g + dag(g)))
            if lam[0] < -tol:
                raise RateMatrixError(f"rate matrix has negative eigenvalue {lam[0]:.3g}")


def dissipator(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Superoperator of rho -> A rho B^dag - 1/2 {B^dag A, rho}."""
    if b is None:
        b = a
    return sandwich(a, dag(b)) - 0.5 * anticommutator_super(dag(b) @ a)


def assemble_lindbladian(spec: LindbladSpec) -> np.ndarray:
    spec.validate()
    gen = commutator_super(spec.hamiltonian)
    for i, ti in enumerate(spec.jump_ops):
        for j, tj in enumerate(spec.jump_ops):
            if spec.rate_matrix[i, j] != 0:
                gen = gen + spec.rate_matrix[i, j] * dissipator(ti, tj)
    return gen


def diagonalize_rate_matrix(spec: LindbladSpec, tol: float = TOL_STRUCT) -> LindbladSpec:
    """Equivalent spec with a diagonal rate matrix.

    Channels whose rate falls below ``tol`` (relative to the largest rate) are dropped.
    """
    spec.validate(tol)
    g = 0.5 * (spec.rate_matrix + dag(spec.rate_matrix))
    lam, u = np.linalg.eigh(g)
    order = np.argsort(lam)[::-1]
    lam, u = lam[order], u[:, order]
    cutoff = tol * max(1.0, float(np.abs(lam).max(initial=0.0)))
    keep = lam > cutoff
    jumps = [sum(u[i, k] * t for i, t in enumerate(spec.jump_ops)) for k in np.flatnonzero(keep)]
    return LindbladSpec(spec.hamiltonian, jumps, np.diag(lam[keep]))


def canonical_rates(gen: np.ndarray) -> np.ndarray:
    """Canonical decoherence rates of a (possibly time-local) generator.

    Eigenvalues, in descending order, of the dissipation matrix obtained by
    expanding the generator in an orthonormal Hermitian operator basis.
    Negative entries flag non-CP-divisible dynamics.
    """
    d = super_dim(gen)
    basis = gell_mann_basis(d)
    n = len(basis)
    c = np.empty((n, n), dtype=complex)
    for m, fm in enumerate(basis):
        for k, fk in enumerate(basis):
            elem = np.kron(fk.conj(), fm)  # superoperator of X -> F_m X F_k^dag
            c[m, k] = np.vdot(elem, gen)
    diss = c[1:, 1:]
    diss = 0.5 * (diss + dag(diss))
    return np.sort(np.linalg.eigvalsh(diss))[::-1]


@dataclass
class Propagation:
    """Propagator family G_{t,0} on a time grid plus the state trajectory."""

    times: np.ndarray
    maps: list[np.ndarray]
    states: list[np.ndarray] = field(default_factory=list)


def _check_grid(times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if times[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


def propagate(gen: np.ndarray, rho0: np.ndarray | None, times: Sequence[float]) -> Propagation:
    """Exact grid propagation of a constant generator.

    Each step multiplies by exp(h L); steps of equal length share one exponential.
    ``rho0`` may be ``None`` to build only the propagator family.
    """
    times = _check_grid(times)
    n = gen.shape[0]
    cache: dict[float, np.ndarray] = {}
    maps = [np.eye(n, dtype=complex)]
    for h in np.diff(times):
        key = round(float(h), 15)
        if key not in cache:
            cache[key] = expm(h * gen)
        maps.append(cache[key] @ maps[-1])
    states = []
    if rho0 is not None:
        check_density_matrix(rho0, TOL_STRUCT)
        d = rho0.shape[0]
        v0 = vec(rho0)
        states = [unvec(g @ v0, d) for g in maps]
    return Propagation(times, maps, states)


def time_local_generator(
    fam: Propagation,
    divergence_norm: float = 1e12,
    resolve_limit: float = 1.0,
    warn_limit: float = 0.1,
) -> list[np.ndarray | None]:
    """L(t) = (dG/dt) G^-1 by finite differences on the grid.

    Centered differences in the interior, second-order one-sided at the ends.
    A grid point gets ``None`` (a divergence marker) when ``||G^-1||`` exceeds
    ``divergence_norm`` or when ``h ||L(t)||`` exceeds ``resolve_limit``, i.e.
    the generator changes faster than the grid can resolve (a pole of the rate
    lies next to this point).
    """
    t, gs = fam.times, fam.maps
    n = len(t)
    if n < 3:
        raise ValueError("need at least three grid points")
    out: list[np.ndarray | None] = []
    warned = False
    for i in range(n):
        if i == 0:
            h = t[1] - t[0]
            dg = (-3 * gs[0] + 4 * gs[1] - gs[2]) / (t[2] - t[0])
        elif i == n - 1:
            h = t[-1] - t[-2]
            dg = (3 * gs[-1] - 4 * gs[-2] + gs[-3]) / (t[-1] - t[-3])
        else:
            h = 0.5 * (t[i + 1] - t[i - 1])
            dg = (gs[i + 1] - gs[i - 1]) / (t[i + 1] - t[i - 1])
        try:
            inv = np.linalg.inv(gs[i])
        except np.linalg.LinAlgError:
            out.append(None)
            continue
        if np.linalg.norm(inv, 2) > divergence_norm:
            out.append(None)
            continue
        gen = dg @ inv
        scale = h * np.linalg.norm(gen, 2)
        if scale > resolve_limit:
            out.append(None)
            continue
        if scale > warn_limit and not warned:
            warnings.warn(f"grid step too coarse for the generator (h*||L|| = {scale:.2g} at t = {t[i]:.4g})")
            warned = True
        out.append(gen)
    return out


@dataclass
class WitnessResult:
    times: np.ndarray
    distances: np.ndarray
    non_markovian: bool
    max_increase: float


def trace_distance_witness(
    gen: np.ndarray,
    rho_a: np.ndarray,
    rho_b: np.ndarray,
    times: Sequence[float],
    env_state: np.ndarray | None = None,
    tol: float = TOL_NUM,
) -> WitnessResult:
    """Trace distance between two evolved system states.

    With ``env_state`` the generator is bipartite and both system states start
    as products with that environment state; distances are taken between the
    system marginals. The verdict is non-Markovian when D(t) grows anywhere
    by more than ``tol``.
    """
    if rho_a.shape != rho_b.shape:
        raise ValueError("states must have the same shape")
    if env_state is not None:
        dims = (rho_a.shape[0], env_state.shape[0])
        ra, rb = np.kron(rho_a, env_state), np.kron(rho_b, env_state)
    else:
        ra, rb = rho_a, rho_b
    fam = propagate(gen, None, times)
    d = ra.shape[0]
    va, vb = vec(ra), vec(rb)
    dist = []
    for g in fam.maps:
        sa, sb = unvec(g @ va, d), unvec(g @ vb, d)
        if env_state is not None:
            sa, sb = ptrace_env(sa, dims), ptrace_env(sb, dims)
        dist.append(trace_distance(sa, sb))
    dist = np.array(dist)
    inc = float(np.max(np.diff(dist), initial=0.0))
    return WitnessResult(fam.times, dist, inc > tol, inc)


def trace_annihilation_error(gen: np.ndarray) -> float:
    """max |(vec-row identity) L|; zero for trace-preserving generators."""
    d = super_dim(gen)
    return float(np.max(np.abs(vec_identity_row(d) @ gen)))
