"""Quantum-jump unravelling of bystander dynamics with a diagonal coupling.

Each trajectory carries a product state rho_s (x) rho_e. The environment
follows the no-jump generator L0 = L_e - 1/2 sum_a G_a {B_a^dag B_a, .}
(renormalized) and the system follows exp(t L_s). A jump in channel a maps
rho_e -> B_a rho_e B_a^dag / norm and rho_s -> S_a[rho_s].

Jump times are drawn by inverting the survival probability Tr(exp(s L0) rho_e),
which is monotone in s, with a bracketing root search on exact exponentials.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .structure import ModelSpec
from .tensor import anticommutator_super, dag, trace_distance, unvec, vec, vec_identity_row

FORMAT_NAME = "bystander-trajectories"
FORMAT_VERSION = 1


@dataclass
class TrajectoryRecord:
    seed: int
    index: int
    times: np.ndarray
    events: list[tuple[float, int]]
    sys_states: np.ndarray  # (n_times, ds, ds)
    env_states: np.ndarray  # (n_times, de, de)

    def bipartite(self, k: int) -> np.ndarray:
        return np.kron(self.sys_states[k], self.env_states[k])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.sys_states).tobytes())
        h.update(np.ascontiguousarray(self.env_states).tobytes())
        return h.hexdigest()


class _Unraveller:
    def __init__(self, model: ModelSpec):
        c = model.coupling
        if not c.is_diagonal():
            raise ValueError("the unravelling needs a diagonal rate matrix")
        self.rates = np.real(np.diag(c.gamma))
        if np.any(self.rates < 0):
            raise ValueError("negative channel rate")
        self.b = c.env_ops
        self.s = [c.sys_maps[a][a] for a in range(c.n_channels)]
        self.ds, self.de = model.ds, model.de
        l0 = np.array(model.l_env, dtype=complex)
        for g, b in zip(self.rates, self.b):
            l0 = l0 - 0.5 * g * anticommutator_super(dag(b) @ b)
        self.l0 = l0
        self.l_sys = np.asarray(model.l_sys, dtype=complex)
        self.sys_static = not np.any(self.l_sys)
        self.row = vec_identity_row(self.de)
        total = sum(g * np.linalg.norm(b, 2) ** 2 for g, b in zip(self.rates, self.b))
        self.max_rate = float(total)

    def survival(self, rho_e_vec: np.ndarray, s: float) -> float:
        return float(np.real(self.row @ (expm(s * self.l0) @ rho_e_vec)))

    def env_at(self, rho_e_vec: np.ndarray, s: float) -> np.ndarray:
        v = expm(s * self.l0) @ rho_e_vec if s > 0 else rho_e_vec
        r = unvec(v, self.de)
        r = r / np.trace(r)
        return 0.5 * (r + dag(r))

    def sys_at(self, rho_s: np.ndarray, s: float) -> np.ndarray:
        if self.sys_static or s == 0:
            return rho_s
        return unvec(expm(s * self.l_sys) @ vec(rho_s), self.ds)

    def run(self, rho0_s, rho0_e, times: np.ndarray, seed: int, index: int) -> TrajectoryRecord:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
        t_end = float(times[-1])
        t = 0.0
        rho_e = vec(np.asarray(rho0_e, dtype=complex))
        rho_s = np.asarray(rho0_s, dtype=complex)
        sys_out = np.empty((len(times), self.ds, self.ds), dtype=complex)
        env_out = np.empty((len(times), self.de, self.de), dtype=complex)
        events: list[tuple[float, int]] = []
        g = 0
        while True:
            u = rng.random()
            remaining = t_end - t
            jump = self.max_rate > 0 and remaining > 0 and self.survival(rho_e, remaining) < u
            if jump:
                lo, hi = 0.0, min(remaining, 1.0 / self.max_rate)
                while self.survival(rho_e, hi) >= u:
                    lo, hi = hi, min(remaining, 2 * hi)
                s_jump = brentq(lambda s: self.survival(rho_e, s) - u, lo, hi, xtol=1e-14, rtol=1e-14)
                t_next = t + s_jump
            else:
                t_next = np.inf
            while g < len(times) and times[g] < t_next:
                dt = times[g] - t
                env_out[g] = self.env_at(rho_e, dt)
                sys_out[g] = self.sys_at(rho_s, dt)
                g += 1
            if not jump:
                break
            pre_env = self.env_at(rho_e, s_jump)
            weights = np.array([r * np.real(np.trace(b @ pre_env @ dag(b))) for r, b in zip(self.rates, self.b)])
            a = int(np.searchsorted(np.cumsum(weights), rng.random() * weights.sum(), side="right"))
            a = min(a, len(weights) - 1)
            b = self.b[a]
            post = b @ pre_env @ dag(b)
            post = post / np.trace(post)
            rho_e = vec(0.5 * (post + dag(post)))
            rho_s = unvec(self.s[a] @ vec(self.sys_at(rho_s, s_jump)), self.ds)
            t = t_next
            events.append((float(t), a))
        return TrajectoryRecord(int(seed), int(index), np.asarray(times, float), events, sys_out, env_out)


def simulate_trajectory(model: ModelSpec, seed: int, times: Sequence[float] | None = None, index: int = 0) -> TrajectoryRecord:
    times = np.asarray(model.times if times is None else times, dtype=float)
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")
    return _Unraveller(model).run(model.rho0_s, model.rho0_e, times, seed, index)


def simulate_ensemble(
    model: ModelSpec, n: int, seed: int, times: Sequence[float] | None = None, threads: int = 1
) -> list[TrajectoryRecord]:
    """Trajectories 0..n-1; record i depends only on (seed, i), never on ``threads``."""
    times = np.asarray(model.times if times is None else times, dtype=float)
    unr = _Unraveller(model)
    job = lambda i: unr.run(model.rho0_s, model.rho0_e, times, seed, i)
    if threads <= 1:
        return [job(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(n)))


@dataclass
class EnsembleAverage:
    times: np.ndarray
    mean: np.ndarray  # (n_times, d, d)
    stderr: np.ndarray  # per-entry standard error, (n_times, d, d)
    n: int


def _stack(records: Sequence[TrajectoryRecord]) -> np.ndarray:
    if len(records) < 2:
        raise ValueError("need at least two records")
    t0 = records[0].times
    for r in records[1:]:
        if r.times.shape != t0.shape or np.any(r.times != t0):
            raise ValueError("records do not share a time grid")
    # product states, shape (n_rec, n_times, d, d)
    return np.stack([np.einsum("tab,tcd->tacbd", r.sys_states, r.env_states).reshape(len(t0), -1) for r in records])


def ensemble_average(records: Sequence[TrajectoryRecord]) -> EnsembleAverage:
    data = _stack(records)
    n = data.shape[0]
    d = records[0].sys_states.shape[1] * records[0].env_states.shape[1]
    nt = data.shape[1]
    mean = data.mean(axis=0)
    se = np.sqrt((data.real.var(axis=0, ddof=1) + data.imag.var(axis=0, ddof=1)) / n)
    return EnsembleAverage(records[0].times, mean.reshape(nt, d, d), se.reshape(nt, d, d), n)


def trace_distance_stderr(records: Sequence[TrajectoryRecord], n_boot: int = 200, seed: int = 0) -> np.ndarray:
    """Bootstrap standard error of the ensemble mean in trace distance, per grid point.

    RMS over resamples of the trace distance between the resampled mean and
    the full-sample mean.
    """
    data = _stack(records)
    n, nt, d2 = data.shape
    d = int(round(np.sqrt(d2)))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2**32 - 1])))
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=n_boot) / n
    mean = data.mean(axis=0)
    boot = np.einsum("bn,ntk->btk", counts, data)
    out = np.empty(nt)
    for k in range(nt):
        m = mean[k].reshape(d, d)
        dist = [trace_distance(boot[b, k].reshape(d, d), m) for b in range(n_boot)]
        out[k] = float(np.sqrt(np.mean(np.square(dist))))
    return out


@dataclass
class WaitingTimes:
    intervals: np.ndarray
    edges: np.ndarray
    density: np.ndarray
    mean: float
    variance: float
    stderr: float

    @property
    def empty(self) -> bool:
        return self.intervals.size == 0


def waiting_time_histogram(records: Iterable[TrajectoryRecord], bins: int | Sequence[float] = 50) -> WaitingTimes:
    """Intervals between consecutive jumps within each trajectory."""
    ints = []
    for r in records:
        ts = np.array([e[0] for e in r.events])
        if ts.size > 1:
            ints.append(np.diff(ts))
    iv = np.concatenate(ints) if ints else np.empty(0)
    if iv.size == 0:
        return WaitingTimes(iv, np.empty(0), np.empty(0), float("nan"), float("nan"), float("nan"))
    density, edges = np.histogram(iv, bins=bins, density=True)
    var = float(iv.var(ddof=1)) if iv.size > 1 else 0.0
    return WaitingTimes(iv, edges, density, float(iv.mean()), var, float(np.sqrt(var / iv.size)))


# --- serialization ------------------------------------------------------------

def dumps_records(records: Sequence[TrajectoryRecord]) -> str:
    """Line-delimited JSON: a versioned header, then one line per trajectory."""
    lines = [json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION, "count": len(records)}, sort_keys=True)]
    for r in records:
        lines.append(
            json.dumps(
                {
                    "seed": r.seed,
                    "index": r.index,
                    "events": [[repr(t), a] for t, a in r.events],
                    "checksum": r.checksum(),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def loads_header(text: str) -> dict:
    head = json.loads(text.splitlines()[0])
    if head.get("format") != FORMAT_NAME:
        raise ValueError("not a trajectory file")
    if head.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported trajectory format version {head.get('version')}")
    return head


def loads_events(text: str) -> list[dict]:
    loads_header(text)
    out = []
    for line in text.splitlines()[1:]:
        if line.strip():
            rec = json.loads(line)
            rec["events"] = [(float(t), int(a)) for t, a in rec["events"]]
            out.append(rec)
    return out
