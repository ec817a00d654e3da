"""Conditional past-future (CPF) correlations for three projective measurements.

Two routes are provided. The formula route expands the bipartite propagator
as sum_a S_a (x) F_a(t) and only needs traces of environment maps. The oracle
route simulates the measurement sequence on the full bipartite state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .structure import ModelSpec
from .tensor import (
    TOL_NUM,
    TOL_STRUCT,
    dag,
    dual_super,
    herm_eig,
    ptrace_env,
    ptrace_sys,
    realign,
    super_to_tensor,
    unrealign_env,
    unvec,
    vec,
)


class IllPosedError(ValueError):
    """The decomposition or a conditional probability is not defined."""


# --- measurements ----------------------------------------------------------

@dataclass
class Measurement:
    """Projective measurement: outcome values and their projectors."""

    values: np.ndarray
    projectors: list[np.ndarray]

    @classmethod
    def from_operator(cls, op: np.ndarray, degeneracy_tol: float = 1e-9) -> "Measurement":
        """Eigenprojectors of a Hermitian operator; degenerate eigenvalues share a projector."""
        w, v = herm_eig(np.asarray(op, dtype=complex))
        values, projs = [], []
        i = 0
        while i < len(w):
            j = i + 1
            while j < len(w) and w[j] - w[i] <= degeneracy_tol:
                j += 1
            block = v[:, i:j]
            values.append(float(np.mean(w[i:j])))
            projs.append(block @ dag(block))
            i = j
        return cls(np.array(values[::-1]), projs[::-1])

    @classmethod
    def from_basis(cls, values: Sequence[float], vectors: np.ndarray) -> "Measurement":
        """Rank-one outcomes from orthonormal columns ``vectors``."""
        vectors = np.asarray(vectors, dtype=complex)
        if np.max(np.abs(dag(vectors) @ vectors - np.eye(vectors.shape[1]))) > TOL_STRUCT:
            raise ValueError("measurement vectors are not orthonormal")
        projs = [np.outer(vectors[:, k], vectors[:, k].conj()) for k in range(vectors.shape[1])]
        return cls(np.asarray(values, dtype=float), projs)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def operator(self) -> np.ndarray:
        return sum(v * p for v, p in zip(self.values, self.projectors))

    def dephase(self, rho: np.ndarray) -> np.ndarray:
        return sum(p @ rho @ p for p in self.projectors)

    def post_state(self, k: int) -> np.ndarray:
        """Normalized state attached to outcome k (the projector over its rank)."""
        p = self.projectors[k]
        return p / np.trace(p).real


# --- propagator decomposition ----------------------------------------------

def closure_table(maps: Sequence[np.ndarray], tol: float = TOL_STRUCT) -> np.ndarray | None:
    """table[i, j] = k with S_i S_j = S_k, or ``None`` if the set is not closed."""
    n = len(maps)
    table = np.empty((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            prod = maps[i] @ maps[j]
            hits = [k for k in range(n) if np.max(np.abs(prod - maps[k])) <= tol]
            if not hits:
                return None
            table[i, j] = hits[0]
    return table


@dataclass
class PropagatorDecomposition:
    """exp(t L_T) = sum_a S_a (x) F_a(t) for a fixed, closed set of system maps."""

    gen: np.ndarray
    dims: tuple[int, int]
    sys_maps: list[np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ds, de = self.dims
        if not np.allclose(self.sys_maps[0], np.eye(ds * ds), atol=TOL_STRUCT):
            raise ValueError("the first system map must be the identity")
        if closure_table(self.sys_maps) is None:
            raise IllPosedError("system maps are not closed under composition")
        self._design = np.array([super_to_tensor(s).ravel() for s in self.sys_maps]).T
        if np.linalg.matrix_rank(self._design, tol=1e-10) < len(self.sys_maps):
            raise IllPosedError("system maps are linearly dependent")
        self._pinv = np.linalg.pinv(self._design)

    def env_maps(self, t: float, tol: float = TOL_NUM) -> list[np.ndarray]:
        key = round(float(t), 14)
        if key in self._cache:
            return self._cache[key]
        if t < 0:
            raise ValueError("t must be non-negative")
        ds, de = self.dims
        g = expm(t * self.gen) if t > 0 else np.eye(self.gen.shape[0], dtype=complex)
        r = realign(g, self.dims)
        coef = self._pinv @ r
        err = float(np.max(np.abs(self._design @ coef - r)))
        if err > tol:
            raise IllPosedError(f"propagator is not spanned by the system maps (residual {err:.2g})")
        maps = [unrealign_env(coef[k], de) for k in range(len(self.sys_maps))]
        self._cache[key] = maps
        return maps

    def reconstruct(self, t: float, rho_s: np.ndarray, rho_e: np.ndarray) -> np.ndarray:
        ds, de = self.dims
        out = np.zeros((ds * de, ds * de), dtype=complex)
        for s, f in zip(self.sys_maps, self.env_maps(t)):
            out += np.kron(unvec(s @ vec(rho_s), ds), unvec(f @ vec(rho_e), de))
        return out


def extract_decomposition(model: ModelSpec, sys_maps: Sequence[np.ndarray] | None = None) -> PropagatorDecomposition:
    """Decomposition on the model's label group, duplicates removed."""
    maps = list(model.sys_group if sys_maps is None else sys_maps)
    unique: list[np.ndarray] = []
    for s in maps:
        if not any(np.max(np.abs(s - u)) <= TOL_STRUCT for u in unique):
            unique.append(s)
    return PropagatorDecomposition(model.generator(), model.dims, unique)


# --- results -----------------------------------------------------------------

@dataclass
class CpfResult:
    scheme: str
    t: float
    tau: float
    y_index: int
    y_value: float
    joint: np.ndarray  # P[z, y, x]
    p_y: float
    value: float

    def conditional(self) -> np.ndarray:
        return self.joint[:, self.y_index, :] / self.p_y


def cpf_value(joint: np.ndarray, y_index: int, z_vals: np.ndarray, x_vals: np.ndarray) -> tuple[float, float]:
    """C = sum_zx z x [P(z,x|y) - P(z|y) P(x|y)] and P(y)."""
    slab = joint[:, y_index, :]
    py = float(slab.sum())
    if py <= TOL_NUM:
        raise IllPosedError(f"P(y) = {py:.3g} is too small to condition on")
    cond = slab / py
    pz, px = cond.sum(axis=1), cond.sum(axis=0)
    c = float(z_vals @ cond @ x_vals - (z_vals @ pz) * (x_vals @ px))
    return c, py


def _apply(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    return unvec(s @ vec(x), x.shape[0])


def _env_traces(decomp: PropagatorDecomposition, t: float, tau: float, rho_e: np.ndarray):
    """lam1[b] = Tr F_b(t) rho_e and lam2[a, b] = Tr F_a(tau) F_b(t) rho_e."""
    de = decomp.dims[1]
    ft, ftau = decomp.env_maps(t), decomp.env_maps(tau)
    states = [unvec(f @ vec(rho_e), de) for f in ft]
    lam1 = np.array([np.trace(s) for s in states])
    lam2 = np.array([[np.trace(_apply(fa, s)) for s in states] for fa in ftau])
    return lam1, lam2


def _check_meas(ms: Sequence[Measurement], ds: int) -> None:
    for m in ms:
        if m.projectors[0].shape != (ds, ds):
            raise ValueError("measurement dimension does not match the system")


def cpf_deterministic(
    decomp: PropagatorDecomposition,
    meas: Sequence[Measurement],
    t: float,
    tau: float,
    y_index: int,
    rho0_s: np.ndarray,
    rho0_e: np.ndarray,
) -> CpfResult:
    """Formula route for the deterministic scheme.

    The joint table uses P(z,y,x) = P(x) sum_ab Tr(Pz S_a[Py S_b[rho_x] Py]) Tr F_a(tau) F_b(t) rho_e.
    When the intermediate outcome is rank one the CPF value is assembled from
    the observable factor Theta and the environment factor Lambda; otherwise
    it is read off the joint table.
    """
    mx, my, mz = meas
    ds = decomp.dims[0]
    _check_meas(meas, ds)
    lam1, lam2 = _env_traces(decomp, t, tau, rho0_e)
    maps = decomp.sys_maps
    joint = np.zeros((mz.n, my.n, mx.n))
    for ix, px_proj in enumerate(mx.projectors):
        px = np.trace(px_proj @ rho0_s).real
        if px <= TOL_STRUCT:
            continue
        rho_x = px_proj @ rho0_s @ px_proj / px
        for iy, py_proj in enumerate(my.projectors):
            mids = [py_proj @ _apply(sb, rho_x) @ py_proj for sb in maps]
            for iz, pz_proj in enumerate(mz.projectors):
                acc = 0.0
                for a, sa in enumerate(maps):
                    for b, mid in enumerate(mids):
                        acc += np.trace(pz_proj @ _apply(sa, mid)) * lam2[a, b]
                joint[iz, iy, ix] = px * acc.real
    value, p_y = cpf_value(joint, y_index, mz.values, mx.values)
    if np.trace(my.projectors[y_index]).real < 1.5:
        value = _theta_lambda_value(maps, meas, y_index, rho0_s, lam1, lam2)
    return CpfResult("deterministic", t, tau, y_index, float(my.values[y_index]), joint, p_y, value)


def _theta_lambda_value(maps, meas, y_index, rho0_s, lam1, lam2) -> float:
    mx, my, mz = meas
    rho_under = mx.dephase(rho0_s)
    oz = mz.operator
    ox_rho = mx.operator @ rho_under
    proj_y = my.projectors[y_index]
    y_state = my.post_state(y_index)
    # Theta^{abm} = <y|S_a#[Oz]|y> <y|S_b[Ox rho]|y> <y|S_m[rho]|y>
    first = np.array([np.trace(_apply(dual_super(s), oz) @ y_state) for s in maps])
    second = np.array([np.trace(proj_y @ _apply(s, ox_rho)) for s in maps])
    third = np.array([np.trace(proj_y @ _apply(s, rho_under)) for s in maps])
    p_y = float(np.real(third @ lam1))
    if p_y <= TOL_NUM:
        raise IllPosedError(f"P(y) = {p_y:.3g} is too small to condition on")
    theta = np.einsum("a,b,m->abm", first, second, third)
    lam = np.einsum("ab,m->abm", lam2, lam1) - np.einsum("am,b->abm", lam2, lam1)
    return float(np.real(np.sum(theta * lam)) / p_y ** 2)


def p_y_formula(decomp: PropagatorDecomposition, my: Measurement, mx: Measurement, y_index: int, t: float,
                rho0_s: np.ndarray, rho0_e: np.ndarray) -> float:
    """P(y) = sum_b Tr(Py S_b[rho]) Tr F_b(t) rho_e with rho the dephased initial state."""
    rho_under = mx.dephase(rho0_s)
    de = decomp.dims[1]
    tot = 0.0
    for s, f in zip(decomp.sys_maps, decomp.env_maps(t)):
        tot += np.trace(my.projectors[y_index] @ _apply(s, rho_under)) * np.trace(unvec(f @ vec(rho0_e), de))
    return float(np.real(tot))


def _check_stochastic(wp: np.ndarray, ny: int, nx: int, tol: float = TOL_STRUCT) -> np.ndarray:
    wp = np.asarray(wp, dtype=float)
    if wp.shape != (ny, nx):
        raise ValueError(f"selection matrix must have shape {(ny, nx)}")
    if np.any(wp < -tol) or np.max(np.abs(wp.sum(axis=0) - 1)) > tol:
        raise ValueError("selection matrix columns must be probability vectors")
    return wp


def cpf_random(
    decomp: PropagatorDecomposition,
    meas: Sequence[Measurement],
    wp: np.ndarray,
    t: float,
    tau: float,
    y_index: int,
    rho0_s: np.ndarray,
    rho0_e: np.ndarray,
) -> CpfResult:
    """Formula route for the random scheme.

    ``wp[y, x]`` is the probability of preparing outcome state y after the
    first measurement gave x. The environment enters only through its
    marginal at time t.
    """
    mx, my, mz = meas
    ds, de = decomp.dims
    _check_meas(meas, ds)
    wp = _check_stochastic(wp, my.n, mx.n)
    ft = decomp.env_maps(t)
    rho_te = sum(unvec(f @ vec(rho0_e), de) for f in ft)
    tr_tau = np.array([np.trace(_apply(f, rho_te)) for f in decomp.env_maps(tau)])
    pxs = np.array([np.trace(p @ rho0_s).real for p in mx.projectors])
    joint = np.zeros((mz.n, my.n, mx.n))
    for iy in range(my.n):
        y_state = my.post_state(iy)
        future = np.array([
            np.real(sum(np.trace(pz @ _apply(s, y_state)) * tr for s, tr in zip(decomp.sys_maps, tr_tau)))
            for pz in mz.projectors
        ])
        joint[:, iy, :] = np.outer(future, wp[iy] * pxs)
    value, p_y = cpf_value(joint, y_index, mz.values, mx.values)
    return CpfResult("random", t, tau, y_index, float(my.values[y_index]), joint, p_y, value)


def cpf_measurement_oracle(
    gen: np.ndarray,
    dims: tuple[int, int],
    meas: Sequence[Measurement],
    t: float,
    tau: float,
    y_index: int,
    rho0_s: np.ndarray,
    rho0_e: np.ndarray,
    scheme: str = "deterministic",
    wp: np.ndarray | None = None,
) -> CpfResult:
    """Direct simulation of the measure / evolve / measure / evolve / measure sequence."""
    mx, my, mz = meas
    ds, de = dims
    _check_meas(meas, ds)
    if scheme not in ("deterministic", "random"):
        raise ValueError("scheme must be 'deterministic' or 'random'")
    if scheme == "random":
        wp = _check_stochastic(np.full((my.n, mx.n), 1.0 / my.n) if wp is None else wp, my.n, mx.n)
    gt = expm(t * gen)
    gtau = expm(tau * gen)
    ie = np.eye(de)
    joint = np.zeros((mz.n, my.n, mx.n))
    for ix, px_proj in enumerate(mx.projectors):
        px = np.trace(px_proj @ rho0_s).real
        if px <= TOL_STRUCT:
            continue
        rho_x = px_proj @ rho0_s @ px_proj / px
        state_t = unvec(gt @ vec(np.kron(rho_x, rho0_e)), ds * de)
        env_t = ptrace_sys(state_t, dims)
        for iy, py_proj in enumerate(my.projectors):
            if scheme == "deterministic":
                big = np.kron(py_proj, ie)
                after = big @ state_t @ big
                weight = 1.0
            else:
                after = np.kron(my.post_state(iy), env_t)
                weight = wp[iy, ix]
            final = ptrace_env(unvec(gtau @ vec(after), ds * de), dims)
            for iz, pz_proj in enumerate(mz.projectors):
                joint[iz, iy, ix] = px * weight * np.trace(pz_proj @ final).real
    value, p_y = cpf_value(joint, y_index, mz.values, mx.values)
    return CpfResult(scheme, t, tau, y_index, float(my.values[y_index]), joint, p_y, value)
