"""Two exactly solvable bystander models.

Fluorescent dephasing: a qubit dephased (S = sz . sz) whenever a driven,
decaying two-level environment emits. Multipartite: an N-qubit register hit
by Pauli-string conjugations on the emission (string a) and absorption
(string b) events of a thermal two-level environment.

Qubit conventions: basis index 0 is the excited (up) state, sz = diag(1, -1)
and the lowering operator is sm = |dn><up|.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .lindblad import dissipator, propagate
from .structure import BystanderCoupling, ModelSpec
from .tensor import (
    TOL_STRUCT,
    anticommutator_super,
    check_density_matrix,
    commutator_super,
    dag,
    sandwich,
    unvec,
    vec,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SM = np.array([[0, 0], [1, 0]], dtype=complex)
UP = np.array([[1, 0], [0, 0]], dtype=complex)
DN = np.array([[0, 0], [0, 1]], dtype=complex)
PAULI = {"I": np.eye(2, dtype=complex), "X": SX, "Y": SY, "Z": SZ}

# eigenvectors of each single-qubit Pauli, +1 first
_EIG = {
    "I": [np.array([1, 0], complex), np.array([0, 1], complex)],
    "X": [np.array([1, 1], complex) / np.sqrt(2), np.array([1, -1], complex) / np.sqrt(2)],
    "Y": [np.array([1, 1j], complex) / np.sqrt(2), np.array([1, -1j], complex) / np.sqrt(2)],
    "Z": [np.array([1, 0], complex), np.array([0, 1], complex)],
}
_EIGVAL = {"I": (1, 1), "X": (1, -1), "Y": (1, -1), "Z": (1, -1)}


# --- Pauli strings ---------------------------------------------------------

def _check_string(s: str) -> str:
    s = s.upper()
    if not s or any(ch not in PAULI for ch in s):
        raise ValueError(f"invalid Pauli string {s!r}")
    return s


def pauli_string(s: str) -> np.ndarray:
    s = _check_string(s)
    return reduce(np.kron, [PAULI[ch] for ch in s])


_MUL = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("Y", "I"): (1, "Y"), ("Z", "I"): (1, "Z"),
    ("X", "X"): (1, "I"), ("Y", "Y"): (1, "I"), ("Z", "Z"): (1, "I"),
    ("X", "Y"): (1j, "Z"), ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"), ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"), ("X", "Z"): (-1j, "Y"),
}


def pauli_product(a: str, b: str) -> tuple[complex, str]:
    """Phase and string with sigma_a sigma_b = phase * sigma_string."""
    a, b = _check_string(a), _check_string(b)
    if len(a) != len(b):
        raise ValueError("Pauli strings must have equal length")
    phase, out = 1 + 0j, []
    for x, y in zip(a, b):
        ph, ch = _MUL[(x, y)]
        phase *= ph
        out.append(ch)
    return phase, "".join(out)


def pauli_anticommute(a: str, b: str) -> bool:
    a, b = _check_string(a), _check_string(b)
    n = sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y)
    return n % 2 == 1


def pauli_eigenbasis(s: str) -> tuple[np.ndarray, np.ndarray]:
    """Product eigenbasis of a Pauli string: (eigenvalues, vectors as columns)."""
    s = _check_string(s)
    vals, vecs = [], []
    for combo in itertools.product((0, 1), repeat=len(s)):
        v = reduce(np.kron, [_EIG[ch][k] for ch, k in zip(s, combo)])
        vals.append(np.prod([_EIGVAL[ch][k] for ch, k in zip(s, combo)]))
        vecs.append(v)
    return np.array(vals, dtype=float), np.array(vecs).T


def pauli_map(s: str) -> np.ndarray:
    p = pauli_string(s)
    return sandwich(p, dag(p))


# --- fluorescent dephasing -------------------------------------------------

@dataclass
class FluorDephasingParams:
    gamma: float = 1.0
    omega: float = 1.0
    rho0e: np.ndarray = field(default_factory=lambda: DN.copy())

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.omega >= 0:
            raise ValueError("omega must be non-negative")
        self.rho0e = np.asarray(self.rho0e, dtype=complex)
        check_density_matrix(self.rho0e, TOL_STRUCT)

    @property
    def delta(self) -> complex:
        return np.sqrt(complex((self.gamma / 4) ** 2 - self.omega ** 2))


def fluor_env_hamiltonian_generator(omega: float) -> np.ndarray:
    return commutator_super(0.5 * omega * SX)


def fluor_model(p: FluorDephasingParams, rho0_s: np.ndarray | None = None, times=None) -> ModelSpec:
    coupling = BystanderCoupling.diagonal([p.gamma], [SM], [sandwich(SZ, SZ)])
    rho0_s = np.full((2, 2), 0.5, dtype=complex) if rho0_s is None else np.asarray(rho0_s, dtype=complex)
    spec = ModelSpec(
        ds=2,
        de=2,
        l_sys=np.zeros((4, 4), dtype=complex),
        l_env=fluor_env_hamiltonian_generator(p.omega),
        coupling=coupling,
        rho0_s=rho0_s,
        rho0_e=p.rho0e,
        sys_group=[np.eye(4, dtype=complex), sandwich(SZ, SZ)],
    )
    if times is not None:
        spec.times = np.asarray(times, dtype=float)
    return spec


def fluor_env_generator(p: FluorDephasingParams) -> np.ndarray:
    return fluor_env_hamiltonian_generator(p.omega) + p.gamma * dissipator(SM)


def fluor_stationary_env(p: FluorDephasingParams) -> np.ndarray:
    g, w = p.gamma, p.omega
    return np.array([[w * w, -1j * g * w], [1j * g * w, g * g + w * w]], dtype=complex) / (g * g + 2 * w * w)


def fluor_env_state(p: FluorDephasingParams, t: float) -> np.ndarray:
    if t == 0:
        return p.rho0e.copy()
    return unvec(expm(t * fluor_env_generator(p)) @ vec(p.rho0e), 2)


def fluor_coefficients(p: FluorDephasingParams, rho_e: np.ndarray) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of f(tau|t) for the environment state at time t."""
    g, w = p.gamma, p.omega
    sy = np.real(np.trace(rho_e @ SY))
    sz = np.real(np.trace(rho_e @ SZ))
    den = g * g + 2 * w * w
    b = (2 * g * w * sy - sz * g * g) / den
    c = -(6 * g * w * sy + sz * (g * g + 8 * w * w)) / (4 * den)
    return 1.0 - b, b, c


def _sinhc(delta: complex, tau: np.ndarray) -> np.ndarray:
    if abs(delta) < 1e-12:
        return tau.astype(complex)
    return np.sinh(delta * tau) / delta


def coherence_f(p: FluorDephasingParams, tau, t: float = 0.0):
    """Coherence factor f(tau|t) for the environment state reached at time t."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0) or t < 0:
        raise ValueError("times must be non-negative")
    a, b, c = fluor_coefficients(p, fluor_env_state(p, t))
    dl = p.delta
    g = p.gamma
    val = np.exp(-g * tau_arr) * a + np.exp(-g * tau_arr / 4) * (b * np.cosh(dl * tau_arr) + c * _sinhc(dl, tau_arr))
    out = np.real(val)
    return float(out) if out.ndim == 0 else out


def coherence_f_derivative(p: FluorDephasingParams, tau, t: float = 0.0):
    """d f(tau|t) / d tau."""
    tau_arr = np.asarray(tau, dtype=float)
    a, b, c = fluor_coefficients(p, fluor_env_state(p, t))
    dl = p.delta
    g = p.gamma
    ch = np.cosh(dl * tau_arr)
    sc = _sinhc(dl, tau_arr)
    inner = b * ch + c * sc
    dinner = b * dl * dl * sc + c * ch
    val = -g * a * np.exp(-g * tau_arr) + np.exp(-g * tau_arr / 4) * (dinner - 0.25 * g * inner)
    out = np.real(val)
    return float(out) if out.ndim == 0 else out


def fluor_canonical_rate(p: FluorDephasingParams, t, zero_tol: float = 1e-14):
    """gamma_t = -d/dt ln f(t|0). NaN marks a divergence (f = 0)."""
    f = np.asarray(coherence_f(p, t, 0.0), dtype=float)
    df = np.asarray(coherence_f_derivative(p, t, 0.0), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(np.abs(f) > zero_tol, -df / f, np.nan)
    return float(rate) if rate.ndim == 0 else rate


def fluor_divergence_times(p: FluorDephasingParams, t_max: float, n_scan: int = 20001) -> np.ndarray:
    """Zeros of f(t|0) on (0, t_max]: located by sign changes, refined by brentq."""
    ts = np.linspace(0.0, t_max, n_scan)
    f = coherence_f(p, ts, 0.0)
    roots = []
    for i in np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0):
        roots.append(brentq(lambda x: coherence_f(p, x, 0.0), ts[i], ts[i + 1], xtol=1e-14))
    return np.array(roots)


def fluor_p_y(p: FluorDephasingParams, t: float, y: int, x_mean: float) -> float:
    return 0.5 * (1 + y * x_mean * coherence_f(p, t, 0.0))


def fluor_cpf_closed_form(p: FluorDephasingParams, t: float, tau: float, y: int, x_mean: float) -> float:
    """Deterministic-scheme CPF for sigma_x measurements."""
    py = fluor_p_y(p, t, y, x_mean)
    bracket = coherence_f(p, t + tau, 0.0) - coherence_f(p, tau, t) * coherence_f(p, t, 0.0)
    return (1 - x_mean ** 2) / (4 * py ** 2) * bracket


def fluor_random_joint(p: FluorDephasingParams, t: float, tau: float, z: int, y: int) -> float:
    """P(z | y) in the random scheme with sigma_x measurements."""
    return 0.5 * (1 + z * y * coherence_f(p, tau, t))


def fluor_signed_generator(p: FluorDephasingParams, sign: int) -> np.ndarray:
    """Environment generator with the emission term weighted by ``sign``."""
    return (
        fluor_env_hamiltonian_generator(p.omega)
        + p.gamma * (sign * sandwich(SM, dag(SM)) - 0.5 * anticommutator_super(dag(SM) @ SM))
    )


# --- multipartite model ----------------------------------------------------

@dataclass
class MultipartiteParams:
    n_qubits: int = 1
    gamma: float = 1.0
    phi: float = 1.0
    omega: float = 0.0
    string_a: str = "Z"
    string_b: str = "X"
    rho0e: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex) / 2)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be at least 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.phi >= 0:
            raise ValueError("phi must be non-negative")
        self.string_a = _check_string(self.string_a)
        self.string_b = _check_string(self.string_b)
        if len(self.string_a) != self.n_qubits or len(self.string_b) != self.n_qubits:
            raise ValueError("Pauli strings must have length n_qubits")
        self.rho0e = np.asarray(self.rho0e, dtype=complex)
        check_density_matrix(self.rho0e, TOL_STRUCT)

    @property
    def chi(self) -> float:
        return float(np.sqrt(self.gamma ** 2 + self.omega ** 2))

    @property
    def string_c(self) -> str:
        return pauli_product(self.string_b, self.string_a)[1]

    def require_balanced(self) -> None:
        if abs(self.phi - self.gamma) > 1e-12 * self.gamma:
            raise ValueError("closed forms require phi == gamma")
        if np.max(np.abs(self.rho0e - np.eye(2) / 2)) > 1e-12:
            raise ValueError("closed forms require the environment state I/2")


def multipartite_group(p: MultipartiteParams) -> list[np.ndarray]:
    """System maps for labels (0, a, b, c) with S_c = S_b S_a."""
    sa, sb = pauli_map(p.string_a), pauli_map(p.string_b)
    return [np.eye(sa.shape[0], dtype=complex), sa, sb, sb @ sa]


def multipartite_model(p: MultipartiteParams, rho0_s: np.ndarray | None = None, times=None) -> ModelSpec:
    ds = 2 ** p.n_qubits
    group = multipartite_group(p)
    coupling = BystanderCoupling.diagonal([p.gamma, p.phi], [SM, dag(SM)], [group[1], group[2]])
    rho0_s = np.eye(ds, dtype=complex) / ds if rho0_s is None else np.asarray(rho0_s, dtype=complex)
    spec = ModelSpec(
        ds=ds,
        de=2,
        l_sys=np.zeros((ds * ds, ds * ds), dtype=complex),
        l_env=fluor_env_hamiltonian_generator(p.omega),
        coupling=coupling,
        rho0_s=rho0_s,
        rho0_e=p.rho0e,
        sys_group=group,
    )
    if times is not None:
        spec.times = np.asarray(times, dtype=float)
    return spec


def multipartite_weights(p: MultipartiteParams, t) -> np.ndarray:
    """Closed-form weights (p0, pa, pb, pc) for phi = gamma; shape (4,) or (4, len(t))."""
    p.require_balanced()
    t = np.asarray(t, dtype=float)
    g, w, chi = p.gamma, p.omega, p.chi
    e = np.exp(-g * t)
    osc = (g * g * np.cos(chi * t) + w * w) / chi ** 2
    p0 = 0.5 * e * (np.cosh(g * t) + osc)
    pa = 0.25 * (1 - np.exp(-2 * g * t))
    pc = 0.5 * e * (np.cosh(g * t) - osc)
    return np.array([p0, pa, pa, pc])


def multipartite_rates(p: MultipartiteParams, t, zero_tol: float = 1e-14) -> np.ndarray:
    """Rates (gamma_a, gamma_b, gamma_c) for phi = gamma; NaN marks a divergence of gamma_c."""
    p.require_balanced()
    t = np.asarray(t, dtype=float)
    g, chi = p.gamma, p.chi
    den = (p.omega / g) ** 2 + np.cos(chi * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        gc = np.where(np.abs(den) > zero_tol, 0.5 * chi * np.sin(chi * t) / den, np.nan)
    half = np.full_like(gc, 0.5 * g)
    return np.array([half, half, gc])


def multipartite_p_y(p: MultipartiteParams, t: float, y: int, x_mean: float) -> float:
    """P(y) for a sigma_a measurement; sigma_a survives S_b unless the strings anticommute."""
    p.require_balanced()
    if not pauli_anticommute(p.string_a, p.string_b):
        return 2.0 ** (-p.n_qubits) * (1 + y * x_mean)
    g, w, chi = p.gamma, p.omega, p.chi
    return 2.0 ** (-p.n_qubits) * (1 + y * x_mean * np.exp(-g * t) * (w * w + g * g * np.cos(chi * t)) / chi ** 2)


def multipartite_cpf_closed_form(
    p: MultipartiteParams, t: float, tau: float, y: int, x_mean: float, observable: str = "a"
) -> float:
    """Deterministic CPF when all three measurements use sigma_a (or sigma_b, or sigma_c).

    Valid for phi = gamma, environment in I/2 and an initial system state
    that is uniform inside each eigenspace of the measured string.
    """
    p.require_balanced()
    if observable not in ("a", "b", "c"):
        raise ValueError("observable must be 'a', 'b' or 'c'")
    if observable == "c" or not pauli_anticommute(p.string_a, p.string_b):
        return 0.0
    g, w, chi = p.gamma, p.omega, p.chi
    py = multipartite_p_y(p, t, y, x_mean)
    bracket = (g * g / chi ** 2) * np.sin(t * chi) * np.sin(tau * chi) - 4 * g * g * w * w / chi ** 4 * np.sin(
        t * chi / 2
    ) ** 2 * np.sin(tau * chi / 2) ** 2
    return float(-(1 - x_mean ** 2) / (2 ** p.n_qubits * py) ** 2 * np.exp(-(t + tau) * g) * bracket)


HADAMARD4 = np.array([[1, 1, 1, 1], [1, 1, -1, -1], [1, -1, 1, -1], [1, -1, -1, 1]], dtype=float)
SIGNS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def signed_env_generator(p: MultipartiteParams, u: int, v: int) -> np.ndarray:
    """Environment generator with the jump terms of channel a (b) weighted by u (v)."""
    anti = anticommutator_super
    return (
        fluor_env_hamiltonian_generator(p.omega)
        + p.gamma * (u * sandwich(SM, dag(SM)) - 0.5 * anti(dag(SM) @ SM))
        + p.phi * (v * sandwich(dag(SM), SM) - 0.5 * anti(SM @ dag(SM)))
    )


@dataclass
class GuvFamily:
    times: np.ndarray
    g: dict[tuple[int, int], list[np.ndarray]]

    def f_vector(self, k: int) -> list[np.ndarray]:
        """(F_0, F_a, F_b, F_c) at grid index k from F = H G / 4."""
        gs = [self.g[s][k] for s in SIGNS]
        return [sum(HADAMARD4[r, j] * gs[j] for j in range(4)) / 4 for r in range(4)]


def guv_solver(p: MultipartiteParams, times) -> GuvFamily:
    out = {}
    for u, v in SIGNS:
        out[(u, v)] = propagate(signed_env_generator(p, u, v), None, times).maps
    return GuvFamily(np.asarray(times, dtype=float), out)
