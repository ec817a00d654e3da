"""Casual-bystander couplings: generator assembly, structural verifiers and
the separable (classically correlated) decomposition of bipartite states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lindblad import dissipator
from .tensor import (
    TOL_NUM,
    TOL_STRUCT,
    NotHermitianError,
    anticommutator_super,
    dag,
    gell_mann_basis,
    hermitian_conjugate_super,
    herm_eig,
    is_hermitian,
    is_trace_preserving,
    kraus_super,
    lift_env,
    lift_sys,
    partial_trace_sys_super,
    ptrace_env,
    ptrace_sys,
    sandwich,
    super_dim,
    super_kron,
    unvec,
    vec,
)


class CouplingError(ValueError):
    """A bystander coupling violates one of its invariants."""


@dataclass
class BystanderCoupling:
    """Rate matrix Gamma, environment operators B and system maps S.

    ``sys_maps[a][b]`` is the superoperator S_ab. Use :meth:`from_kraus` to
    build it from Kraus operators.
    """

    gamma: np.ndarray
    env_ops: list[np.ndarray]
    sys_maps: list[list[np.ndarray]]

    def __post_init__(self):
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=complex))
        self.env_ops = [np.asarray(b, dtype=complex) for b in self.env_ops]
        self.sys_maps = [[np.asarray(s, dtype=complex) for s in row] for row in self.sys_maps]
        n = len(self.env_ops)
        if self.gamma.shape != (n, n):
            raise CouplingError(f"gamma shape {self.gamma.shape} does not match {n} environment operators")
        if len(self.sys_maps) != n or any(len(row) != n for row in self.sys_maps):
            raise CouplingError("sys_maps must be an n x n table of superoperators")

    @classmethod
    def from_kraus(cls, gamma, env_ops, kraus_table) -> "BystanderCoupling":
        maps = [[kraus_super(ks) for ks in row] for row in kraus_table]
        return cls(gamma, env_ops, maps)

    @classmethod
    def diagonal(cls, rates: Sequence[float], env_ops, sys_maps: Sequence[np.ndarray]) -> "BystanderCoupling":
        """Diagonal Gamma with one system map per channel."""
        n = len(rates)
        ds2 = np.asarray(sys_maps[0]).shape[0]
        table = [[sys_maps[a] if a == b else np.zeros((ds2, ds2), complex) for b in range(n)] for a in range(n)]
        return cls(np.diag(np.asarray(rates, dtype=float)), env_ops, table)

    @property
    def n_channels(self) -> int:
        return len(self.env_ops)

    @property
    def ds(self) -> int:
        return super_dim(self.sys_maps[0][0])

    @property
    def de(self) -> int:
        return self.env_ops[0].shape[0]

    def is_diagonal(self, tol: float = TOL_STRUCT) -> bool:
        off = self.gamma - np.diag(np.diag(self.gamma))
        return bool(np.max(np.abs(off), initial=0.0) <= tol)

    def active_pairs(self, tol: float = TOL_STRUCT):
        n = self.n_channels
        return [(a, b) for a in range(n) for b in range(n) if abs(self.gamma[a, b]) > tol]

    def validate(self, tol: float = TOL_STRUCT) -> None:
        g = self.gamma
        if not is_hermitian(g, tol):
            raise CouplingError("gamma is not Hermitian")
        lam = np.linalg.eigvalsh(0.5 * (g + dag(g)))
        if lam[0] < -tol:
            raise CouplingError(f"gamma has negative eigenvalue {lam[0]:.3g}")
        for a, b in self.active_pairs(tol):
            s = self.sys_maps[a][b]
            if not is_trace_preserving(s, tol):
                raise CouplingError(f"system map S[{a}][{b}] is not trace preserving")
            mirror = hermitian_conjugate_super(self.sys_maps[b][a])
            if np.max(np.abs(s - mirror)) > tol:
                raise CouplingError(f"system maps S[{a}][{b}] and S[{b}][{a}] break the adjoint symmetry")


@dataclass
class ModelSpec:
    """A complete simulation scenario on a system (x) environment space."""

    ds: int
    de: int
    l_sys: np.ndarray
    l_env: np.ndarray
    coupling: BystanderCoupling
    rho0_s: np.ndarray
    rho0_e: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 11))
    # optional group labels {0, ...} with the matching system maps S_0 = id, S_1, ...
    sys_group: list[np.ndarray] | None = None

    @property
    def dims(self) -> tuple[int, int]:
        return (self.ds, self.de)

    def generator(self) -> np.ndarray:
        return build_general_su(self.l_sys, self.l_env, self.coupling)

    def env_generator(self) -> np.ndarray:
        return env_marginal_generator(self.coupling, self.l_env)

    def initial_state(self) -> np.ndarray:
        return np.kron(self.rho0_s, self.rho0_e)


def build_general_su(l_sys: np.ndarray, l_env: np.ndarray, c: BystanderCoupling, check: bool = True) -> np.ndarray:
    """Bipartite Liouvillian L_s + L_e + sum_ab Gamma_ab (B_a S_ab[.] B_b^dag - 1/2 {B_b^dag B_a, .})."""
    if check:
        c.validate()
    ds, de = super_dim(l_sys), super_dim(l_env)
    gen = lift_sys(l_sys, de) + lift_env(l_env, ds)
    for a, b in c.active_pairs():
        ba, bb = c.env_ops[a], c.env_ops[b]
        gen = gen + c.gamma[a, b] * (
            super_kron(c.sys_maps[a][b], sandwich(ba, dag(bb)))
            - 0.5 * lift_env(anticommutator_super(dag(bb) @ ba), ds)
        )
    return gen


def env_marginal_generator(c: BystanderCoupling, l_env: np.ndarray) -> np.ndarray:
    """Autonomous environment generator L_e + sum_ab Gamma_ab D[B_a, B_b]."""
    c.validate()
    gen = np.array(l_env, dtype=complex)
    for a, b in c.active_pairs():
        gen = gen + c.gamma[a, b] * dissipator(c.env_ops[a], c.env_ops[b])
    return gen


@dataclass
class BystanderCheck:
    holds: bool
    env_generator: np.ndarray
    violation: float


def _product_basis(dims) -> np.ndarray:
    ds, de = dims
    cols = [vec(np.kron(x, y)) for x in gell_mann_basis(ds) for y in gell_mann_basis(de)]
    return np.array(cols).T


def verify_bystander_condition(l_se: np.ndarray, dims: Sequence[int], tol: float = TOL_STRUCT) -> BystanderCheck:
    """Test whether Tr_s(L[X (x) Y]) = Tr(X) A[Y] on a Hermitian product basis.

    ``A`` is read off from X = I/d_s; the violation is the largest entry of the
    mismatch over all basis products.
    """
    ds, de = dims
    if l_se.shape != ((ds * de) ** 2,) * 2:
        raise ValueError(f"generator shape {l_se.shape} does not match dims {tuple(dims)}")
    ptr = partial_trace_sys_super(dims)
    m = ptr @ l_se
    # A[Y] = Tr_s L[(I/ds) (x) Y]
    embed = np.array([vec(np.kron(np.eye(ds) / ds, unvec(e, de))) for e in np.eye(de * de)]).T
    a = m @ embed
    mismatch = (m - a @ ptr) @ _product_basis(dims)
    violation = float(np.max(np.abs(mismatch)))
    return BystanderCheck(violation <= tol, a, violation)


@dataclass
class UnitaryCheck:
    is_bystander: bool
    q_env: np.ndarray | None
    h_sys: np.ndarray | None
    violation: float


def unitary_no_go_check(h_se: np.ndarray, dims: Sequence[int], tol: float = TOL_STRUCT) -> UnitaryCheck:
    """Decide whether -i[H, .] satisfies the bystander condition.

    It does iff H = h_s (x) I + I (x) Q_e. The system-local part h_s never
    reaches the environment, so the coupling proper is I (x) Q_e and the
    system and environment do not interact.
    """
    if not is_hermitian(h_se, tol):
        raise NotHermitianError("H_se must be Hermitian")
    ds, de = dims
    d = ds * de
    q = ptrace_sys(h_se, dims) / ds
    h = ptrace_env(h_se, dims) / de - np.trace(h_se) / d * np.eye(ds)
    rest = h_se - np.kron(h, np.eye(de)) - np.kron(np.eye(ds), q)
    violation = float(np.max(np.abs(rest)))
    ok = violation <= tol
    return UnitaryCheck(ok, q if ok else None, h if ok else None, violation)


@dataclass
class DConstraint:
    holds: bool
    gamma: np.ndarray
    violation: float
    sys_maps: list[list[np.ndarray | None]]


def check_d_constraint(
    sys_ops: Sequence[np.ndarray],
    env_ops: Sequence[np.ndarray],
    rates: np.ndarray,
    tol: float = TOL_STRUCT,
) -> DConstraint:
    """Constraint on a factorized raw generator with jumps T_(k,a) = V_k (x) B_a.

    ``rates`` has shape (K, A, K, A) or the flattened (K*A, K*A) with the
    system index k slow. D_ab = sum_kl rates[k,a,l,b] V_l^dag V_k must equal
    Gamma_ab I_s. When it does, the induced system maps
    S_ab[rho] = sum_kl rates[k,a,l,b] V_k rho V_l^dag / Gamma_ab are returned
    (``None`` where Gamma_ab vanishes).
    """
    v = [np.asarray(x, dtype=complex) for x in sys_ops]
    b = [np.asarray(x, dtype=complex) for x in env_ops]
    nk, na = len(v), len(b)
    r = np.asarray(rates, dtype=complex).reshape(nk, na, nk, na)
    ds = v[0].shape[0]
    gam = np.zeros((na, na), dtype=complex)
    violation = 0.0
    maps: list[list[np.ndarray | None]] = [[None] * na for _ in range(na)]
    for a in range(na):
        for c in range(na):
            dmat = sum(r[k, a, l, c] * dag(v[l]) @ v[k] for k in range(nk) for l in range(nk))
            gam[a, c] = np.trace(dmat) / ds
            violation = max(violation, float(np.max(np.abs(dmat - gam[a, c] * np.eye(ds)))))
            if abs(gam[a, c]) > tol:
                s = sum(r[k, a, l, c] * sandwich(v[k], dag(v[l])) for k in range(nk) for l in range(nk))
                maps[a][c] = s / gam[a, c]
    return DConstraint(violation <= tol, gam, violation, maps)


def stationary_state(gen: np.ndarray, gap_tol: float = 1e-10) -> np.ndarray:
    """Unique fixed point of a generator; raises if the kernel is degenerate."""
    w, v = np.linalg.eig(gen)
    order = np.argsort(np.abs(w))
    if len(w) > 1 and abs(w[order[1]]) <= gap_tol:
        raise ValueError("stationary state is not unique (spectral gap below tolerance)")
    d = super_dim(gen)
    rho = unvec(v[:, order[0]], d)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + dag(rho))


# --- separable decomposition ------------------------------------------------

@dataclass
class SeparableDecomposition:
    weights: np.ndarray
    env_basis: np.ndarray  # columns |c>
    cond_states: list[np.ndarray]
    residual: float


def _refine_degenerate(w: np.ndarray, v: np.ndarray, rho: np.ndarray, dims, tol: float) -> np.ndarray:
    """Fix a deterministic basis inside degenerate eigenspaces of rho_e.

    Inside each cluster the basis diagonalizes Tr_s[(W (x) I) rho] for a fixed
    Hermitian W, so the result does not depend on the eigensolver.
    """
    ds, de = dims
    k = np.arange(ds)
    wmat = np.diag(k + 1.0) + 0.1 * (np.eye(ds, k=1) + np.eye(ds, k=-1))
    probe = ptrace_sys(np.kron(wmat, np.eye(de)) @ rho, dims)
    probe = 0.5 * (probe + dag(probe))
    v = v.copy()
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and w[j] - w[i] <= tol:
            j += 1
        if j - i > 1:
            block = v[:, i:j]
            sub = dag(block) @ probe @ block
            _, u = np.linalg.eigh(0.5 * (sub + dag(sub)))
            v[:, i:j] = block @ u
        i = j
    return v


def _fix_phases(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    for k in range(v.shape[1]):
        idx = np.argmax(np.abs(v[:, k]))
        v[:, k] *= np.exp(-1j * np.angle(v[idx, k]))
    return v


def env_blocks(rho_se: np.ndarray, dims, basis: np.ndarray) -> np.ndarray:
    """blocks[c, c'] = <c| rho_se |c'> as system operators."""
    ds, de = dims
    t = rho_se.reshape(ds, de, ds, de)
    return np.einsum("ec,aebf,fd->cdab", basis.conj(), t, basis)


def separability_decompose(rho_se: np.ndarray, dims: Sequence[int], degeneracy_tol: float = 1e-8) -> SeparableDecomposition:
    """Decompose a bipartite state along the eigenbasis of its environment marginal.

    The residual is the largest spectral norm of an off-diagonal block
    <c|rho_se|c'>. It vanishes iff the state has the classically correlated
    form sum_c rho_c (x) |c><c|.
    """
    dims = tuple(dims)
    rho_e = ptrace_sys(rho_se, dims)
    w, v = herm_eig(rho_e, 1e-8)
    v = _refine_degenerate(w, v, rho_se, dims, degeneracy_tol)
    v = _fix_phases(v[:, ::-1])
    blocks = env_blocks(rho_se, dims, v)
    de = dims[1]
    cond = [blocks[c, c] for c in range(de)]
    weights = np.array([np.trace(x).real for x in cond])
    res = 0.0
    for c in range(de):
        for c2 in range(de):
            if c != c2:
                res = max(res, float(np.linalg.norm(blocks[c, c2], 2)))
    return SeparableDecomposition(weights, v, cond, res)


def ppt_min_eigenvalue(rho_se: np.ndarray, dims: Sequence[int]) -> float:
    """Smallest eigenvalue of the partial transpose over the environment."""
    ds, de = dims
    pt = rho_se.reshape(ds, de, ds, de).transpose(0, 3, 2, 1).reshape(ds * de, ds * de)
    return float(np.linalg.eigvalsh(0.5 * (pt + dag(pt)))[0])


# --- conditional rates and residual identities ------------------------------

@dataclass
class ConditionalRates:
    """Rates in a given environment basis.

    ``phi[c, c2]`` is <c|L_e[|c2><c2|]|c>. ``rate[c, c2]`` is the
    coupling-induced transition rate from |c2> to |c>, and ``maps[(c, c2)]``
    the trace-preserving system map applied on that transition (``None`` when
    the rate vanishes).
    """

    phi: np.ndarray
    rate: np.ndarray
    maps: dict[tuple[int, int], np.ndarray | None]


def conditional_rates(c: BystanderCoupling, l_env: np.ndarray, basis: np.ndarray, tol: float = 1e-12) -> ConditionalRates:
    de = basis.shape[0]
    if np.max(np.abs(dag(basis) @ basis - np.eye(basis.shape[1]))) > TOL_NUM:
        raise ValueError("environment basis is not orthonormal")
    n = basis.shape[1]
    phi = np.empty((n, n))
    for j in range(n):
        out = unvec(l_env @ vec(np.outer(basis[:, j], basis[:, j].conj())), de)
        phi[:, j] = np.real(np.einsum("ec,ef,fc->c", basis.conj(), out, basis))
    # amp[a, c, c2] = <c|B_a|c2>
    amp = np.array([dag(basis) @ b @ basis for b in c.env_ops])
    weight = np.einsum("ab,acd,bcd->abcd", c.gamma, amp, amp.conj())
    rate = np.real(weight.sum(axis=(0, 1)))
    ds2 = c.sys_maps[0][0].shape[0]
    maps: dict[tuple[int, int], np.ndarray | None] = {}
    for i in range(n):
        for j in range(n):
            if rate[i, j] > tol:
                s = np.zeros((ds2, ds2), dtype=complex)
                for a, b in c.active_pairs():
                    s += weight[a, b, i, j] * c.sys_maps[a][b]
                maps[(i, j)] = s / rate[i, j]
            else:
                maps[(i, j)] = None
    return ConditionalRates(phi, rate, maps)


@dataclass
class ResidualReport:
    residual: float
    unreliable: np.ndarray  # grid indices skipped because of near-degenerate weights
    per_point: np.ndarray


def _tracked_eigensystem(states, dims, gap_tol: float):
    """Eigenvalues/vectors of each rho_e, ordered by overlap with the previous step."""
    ws, vs, unreliable = [], [], []
    prev = None
    for i, rho in enumerate(states):
        w, v = herm_eig(ptrace_sys(rho, dims), 1e-8)
        if prev is not None:
            ov = np.abs(dag(prev) @ v)
            order = np.empty(len(w), dtype=int)
            free = list(range(len(w)))
            for k in range(len(w)):
                j = max(free, key=lambda m: ov[k, m])
                order[k] = j
                free.remove(j)
            w, v = w[order], v[:, order]
        v = _fix_phases(v)
        if len(w) > 1 and np.min(np.diff(np.sort(w))) < gap_tol:
            unreliable.append(i)
        ws.append(w)
        vs.append(v)
        prev = v
    return np.array(ws), vs, set(unreliable)


def pc_evolution_residual(
    c: BystanderCoupling,
    l_env: np.ndarray,
    times: np.ndarray,
    states: Sequence[np.ndarray],
    dims: Sequence[int],
    gap_tol: float = 1e-8,
) -> ResidualReport:
    """Residual of the population balance for the environment eigenweights.

    dp_c/dt (centered differences of tracked eigenvalues) is compared with
    sum_c2 phi[c,c2] p_c2 + sum_c2 rate[c,c2] p_c2 - p_c sum_c2 rate[c2,c].
    """
    dims = tuple(dims)
    ws, vs, bad = _tracked_eigensystem(states, dims, gap_tol)
    per = np.full(len(times), np.nan)
    skipped = []
    for i in range(1, len(times) - 1):
        if {i - 1, i, i + 1} & bad:
            skipped.append(i)
            continue
        dp = (ws[i + 1] - ws[i - 1]) / (times[i + 1] - times[i - 1])
        cr = conditional_rates(c, l_env, vs[i])
        p = ws[i]
        rhs = cr.phi @ p + cr.rate @ p - p * cr.rate.sum(axis=0)
        per[i] = float(np.max(np.abs(dp - rhs)))
    finite = per[np.isfinite(per)]
    return ResidualReport(float(finite.max()) if finite.size else float("nan"), np.array(skipped, dtype=int), per)


def rho_c_residual(
    model: ModelSpec,
    times: np.ndarray,
    states: Sequence[np.ndarray],
    gap_tol: float = 1e-8,
) -> ResidualReport:
    """Residual of the conditional-state evolution in the environment eigenbasis.

    The total derivative D/Dt rho_c is <c_t| d(rho_se)/dt |c_t> and the right
    side is L_s[rho_c] + sum_c2 phi[c,c2] rho_c2 + rate[c,c2] S_cc2[rho_c2]
    - rho_c sum_c2 rate[c2,c]. The identity holds exactly when the state has
    the classically correlated block form; otherwise the residual measures
    the off-block contribution.
    """
    dims = model.dims
    ds, de = dims
    _, vs, bad = _tracked_eigensystem(states, dims, gap_tol)
    per = np.full(len(times), np.nan)
    skipped = []
    for i in range(1, len(times) - 1):
        if i in bad:
            skipped.append(i)
            continue
        drho = (states[i + 1] - states[i - 1]) / (times[i + 1] - times[i - 1])
        v = vs[i]
        lhs = env_blocks(drho, dims, v)
        blocks = env_blocks(states[i], dims, v)
        cr = conditional_rates(model.coupling, model.l_env, v)
        worst = 0.0
        for k in range(de):
            rhs = unvec(model.l_sys @ vec(blocks[k, k]), ds)
            for j in range(de):
                rhs = rhs + cr.phi[k, j] * blocks[j, j]
                s = cr.maps[(k, j)]
                if s is not None:
                    rhs = rhs + cr.rate[k, j] * unvec(s @ vec(blocks[j, j]), ds)
            rhs = rhs - blocks[k, k] * cr.rate[:, k].sum()
            worst = max(worst, float(np.max(np.abs(lhs[k, k] - rhs))))
        per[i] = worst
    finite = per[np.isfinite(per)]
    return ResidualReport(float(finite.max()) if finite.size else float("nan"), np.array(skipped, dtype=int), per)

