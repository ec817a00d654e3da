"""Batch driver: JSON scenario in, CSV series plus a JSON manifest out.

Exit status: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import warnings
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config, parse_matrix
from .cpf import IllPosedError, Measurement, cpf_deterministic, cpf_measurement_oracle, cpf_random, extract_decomposition
from .jumps import dumps_records, ensemble_average, simulate_ensemble, trace_distance_stderr, waiting_time_histogram
from .lindblad import RateMatrixError, canonical_rates, propagate, time_local_generator, trace_distance_witness
from .models import (
    DN,
    SX,
    SY,
    SZ,
    UP,
    FluorDephasingParams,
    MultipartiteParams,
    coherence_f,
    fluor_canonical_rate,
    fluor_cpf_closed_form,
    fluor_env_generator,
    fluor_model,
    multipartite_model,
    pauli_eigenbasis,
    pauli_string,
)
from .qrt import exact_correlation, qrt_prediction, system_propagator_family
from .structure import (
    BystanderCoupling,
    CouplingError,
    ModelSpec,
    separability_decompose,
    stationary_state,
    verify_bystander_condition,
)
from .tensor import commutator_super, kraus_super, ptrace_env, ptrace_sys, trace_distance

log = logging.getLogger("bystander")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DIV = "div"


class NumericalFailure(RuntimeError):
    pass


# --- formatting --------------------------------------------------------------

def fmt(x: Any) -> str:
    if x is None:
        return DIV
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if not math.isfinite(v):
        return DIV
    return repr(v)


def matrix_cols(prefix: str, d: int, unit: str = "1") -> list[str]:
    cols = []
    for i in range(d):
        for j in range(d):
            cols += [f"{prefix}_{i}{j}_re[{unit}]", f"{prefix}_{i}{j}_im[{unit}]"]
    return cols


def matrix_vals(m: np.ndarray) -> list[Any]:
    out = []
    for z in np.asarray(m).ravel():
        out += [z.real, z.imag]
    return out


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    data = buf.getvalue().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


# --- model construction ---------------------------------------------------------

def _env_state(spec: Any, env_gen: np.ndarray | None) -> np.ndarray:
    if isinstance(spec, str):
        table = {"ground": DN, "excited": UP, "mixed": np.eye(2, dtype=complex) / 2}
        if spec == "stationary":
            if env_gen is None:
                raise ConfigError("stationary environment state needs an environment generator")
            return stationary_state(env_gen)
        if spec not in table:
            raise ConfigError(f"unknown environment state {spec!r}")
        return table[spec].copy()
    return parse_matrix(spec, "env_state")


def _system_state(spec: Any, ds: int) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "mixed":
            return np.eye(ds, dtype=complex) / ds
        if spec == "up":
            r = np.zeros((ds, ds), dtype=complex)
            r[0, 0] = 1
            return r
        if spec == "plus_x":
            v = np.ones(ds, dtype=complex) / np.sqrt(ds)
            return np.outer(v, v.conj())
        raise ConfigError(f"unknown system state {spec!r}")
    r = parse_matrix(spec, "system_state")
    if r.shape != (ds, ds):
        raise ConfigError("system_state has the wrong dimension")
    return r


def build_fluor(m: dict, omega: float | None = None) -> tuple[ModelSpec, FluorDephasingParams]:
    # gamma is the unit: times are read in 1/gamma and rates written in gamma
    g = float(m.get("gamma", 1.0))
    p = FluorDephasingParams(1.0, float(m.get("omega", 1.0) if omega is None else omega) / g)
    p.rho0e = _env_state(m.get("env_state", "stationary"), fluor_env_generator(p))
    return fluor_model(p), p


def build_model(cfg: ScenarioConfig, omega: float | None = None) -> tuple[ModelSpec, Any]:
    m = cfg.model
    kind = m["kind"]
    if kind == "fluor":
        spec, params = build_fluor(m, omega)
    elif kind == "multipartite":
        g = float(m.get("gamma", 1.0))
        params = MultipartiteParams(
            int(m.get("n_qubits", 1)), 1.0, float(m.get("phi", g)) / g,
            float(m.get("omega", 0.0)) / g, m["string_a"], m["string_b"],
        )
        spec = multipartite_model(params)
        params.rho0e = _env_state(m.get("env_state", "mixed"), spec.env_generator())
        spec.rho0_e = params.rho0e
    else:
        ds, de = int(m["ds"]), int(m["de"])
        chans = m["channels"]
        env_ops = [parse_matrix(c["env_op"], "env_op") for c in chans]
        smaps = [kraus_super([parse_matrix(k, "sys_kraus") for k in c["sys_kraus"]]) for c in chans]
        n = len(chans)
        if "rate_matrix" in m:
            gamma = parse_matrix(m["rate_matrix"], "rate_matrix")
            # a non-diagonal rate matrix is accepted with one shared system map
            if any(np.max(np.abs(s - smaps[0])) > 1e-12 for s in smaps):
                raise ConfigError("rate_matrix needs identical sys_kraus maps on all channels")
            table = [[smaps[0] for _ in range(n)] for _ in range(n)]
        else:
            gamma = np.diag([float(c["rate"]) for c in chans]).astype(complex)
            table = [[smaps[a] if a == b else np.zeros_like(smaps[a]) for b in range(n)] for a in range(n)]
        coupling = BystanderCoupling(gamma, env_ops, table)
        hs = parse_matrix(m.get("system_hamiltonian", np.zeros((ds, ds)).tolist()), "system_hamiltonian")
        he = parse_matrix(m.get("env_hamiltonian", np.zeros((de, de)).tolist()), "env_hamiltonian")
        spec = ModelSpec(ds, de, commutator_super(hs), commutator_super(he), coupling,
                         np.eye(ds, dtype=complex) / ds, np.eye(de, dtype=complex) / de)
        if "group" in m:
            spec.sys_group = [np.eye(ds * ds, dtype=complex)] + smaps
        spec.rho0_e = _env_state(m.get("env_state", "mixed"), spec.env_generator())
        params = None
    spec.rho0_s = _system_state(cfg.system_state, spec.ds)
    spec.times = cfg.times
    return spec, params


def _measurement(label: Any, ds: int) -> Measurement:
    if isinstance(label, str):
        try:
            vals, vecs = pauli_eigenbasis(label)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if vecs.shape[0] != ds:
            raise ConfigError(f"observable {label!r} does not match the system dimension")
        return Measurement.from_basis(vals, vecs)
    op = parse_matrix(label, "observable")
    if op.shape != (ds, ds):
        raise ConfigError("observable has the wrong dimension")
    return Measurement.from_operator(op)


def _time_unit(cfg: ScenarioConfig) -> str:
    return "1/gamma" if cfg.model["kind"] in ("fluor", "multipartite") else "arb"


def _rate_unit(cfg: ScenarioConfig) -> str:
    return "gamma" if cfg.model["kind"] in ("fluor", "multipartite") else "1/arb"


# --- tasks ---------------------------------------------------------------------------

def task_verify(cfg: ScenarioConfig, out: str) -> tuple[dict, dict]:
    spec, _ = build_model(cfg)
    gen = spec.generator()
    chk = verify_bystander_condition(gen, spec.dims)
    env_err = float(np.max(np.abs(chk.env_generator - spec.env_generator())))
    fam = propagate(gen, spec.initial_state(), cfg.times)
    rows, worst = [], 0.0
    for t, st in zip(fam.times, fam.states):
        dec = separability_decompose(st, spec.dims)
        worst = max(worst, dec.residual)
        rows.append([t, dec.residual, np.min(dec.weights)])
    files = {"separability.csv": write_csv(
        os.path.join(out, "separability.csv"),
        [f"time[{_time_unit(cfg)}]", "block_residual[1]", "min_weight[1]"], rows)}
    summary = {"holds": chk.holds, "violation": chk.violation, "env_generator_error": env_err,
               "max_separability_residual": worst}
    return files, summary


def task_evolve(cfg: ScenarioConfig, out: str) -> tuple[dict, dict]:
    spec, _ = build_model(cfg)
    fam = propagate(spec.generator(), spec.initial_state(), cfg.times)
    ds, de = spec.dims
    header = [f"time[{_time_unit(cfg)}]"] + matrix_cols("rho_s", ds) + matrix_cols("rho_e", de)
    rows = []
    for t, st in zip(fam.times, fam.states):
        rows.append([t] + matrix_vals(ptrace_env(st, spec.dims)) + matrix_vals(ptrace_sys(st, spec.dims)))
    files = {"evolve.csv": write_csv(os.path.join(out, "evolve.csv"), header, rows)}
    return files, {"points": len(rows)}


def _witness_series(cfg: ScenarioConfig, spec: ModelSpec, params) -> tuple[list[str], list[list[Any]], dict]:
    gen = spec.generator()
    times = cfg.times
    fam = system_propagator_family(gen, spec.dims, spec.rho0_e, times)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        gens = time_local_generator(fam)
    for w in caught:
        log.info("%s", w.message)
    ds = spec.ds
    opts = cfg.options
    rho_a = parse_matrix(opts["rho_a"], "rho_a") if "rho_a" in opts else _system_state("plus_x", ds)
    if "rho_b" in opts:
        rho_b = parse_matrix(opts["rho_b"], "rho_b")
    else:
        v = np.ones(ds, dtype=complex) / np.sqrt(ds)
        v[1::2] *= -1
        rho_b = np.outer(v, v.conj())
    wit = trace_distance_witness(gen, rho_a, rho_b, times, env_state=spec.rho0_e)
    unit = _time_unit(cfg)
    rate_unit = _rate_unit(cfg)
    header = [f"time[{unit}]", f"rate_min[{rate_unit}]", f"rate_max[{rate_unit}]", "trace_distance[1]"]
    closed = None
    if isinstance(params, FluorDephasingParams):
        header += [f"rate_closed_form[{rate_unit}]", "coherence_f[1]"]
        closed = fluor_canonical_rate(params, times)
    rows = []
    n_div = 0
    for k, t in enumerate(times):
        g = gens[k]
        if g is None:
            lo = hi = None
            n_div += 1
        else:
            rates = canonical_rates(g)
            lo, hi = rates[-1], rates[0]
        row = [t, lo, hi, wit.distances[k]]
        if closed is not None:
            row += [closed[k], coherence_f(params, t)]
        rows.append(row)
    return header, rows, {"non_markovian": wit.non_markovian, "divergent_points": n_div}


def task_witness(cfg: ScenarioConfig, out: str) -> tuple[dict, dict]:
    files, summary = {}, {}
    omegas = cfg.model.get("omegas") if cfg.model["kind"] == "fluor" else None
    if omegas:
        for w in omegas:
            spec, params = build_model(cfg, float(w))
            header, rows, info = _witness_series(cfg, spec, params)
            name = f"witness_omega_{fmt(float(w))}.csv"
            files[name] = write_csv(os.path.join(out, name), header, rows)
            summary[name] = info
    else:
        spec, params = build_model(cfg)
        header, rows, info = _witness_series(cfg, spec, params)
        files["witness.csv"] = write_csv(os.path.join(out, "witness.csv"), header, rows)
        summary["witness.csv"] = info
    return files, summary


def task_cpf(cfg: ScenarioConfig, out: str) -> tuple[dict, dict]:
    spec, params = build_model(cfg)
    o = cfg.options
    scheme = o.get("scheme", "deterministic")
    meas = [_measurement(x, spec.ds) for x in o.get("observables", ["X", "X", "X"])]
    y_index = int(o.get("y_index", 0))
    if not 0 <= y_index < meas[1].n:
        raise ConfigError("y_index out of range")
    wp = np.asarray(o["selection"], dtype=float) if "selection" in o else np.full((meas[1].n, meas[0].n), 1.0 / meas[1].n)
    if wp.shape != (meas[1].n, meas[0].n):
        raise ConfigError("selection matrix has the wrong shape")
    taus = o.get("tau_values")
    decomp = extract_decomposition(spec)
    gen = spec.generator()
    unit = _time_unit(cfg)
    header = [f"t[{unit}]", f"tau[{unit}]", "value_formula[1]", "value_oracle[1]", "p_y[1]"]
    closed = isinstance(params, FluorDephasingParams) and scheme == "deterministic" and all(
        isinstance(x, str) and x.upper() == "X" for x in o.get("observables", ["X", "X", "X"]))
    if closed:
        header.append("value_closed_form[1]")
    rows = []
    for t in cfg.times:
        for tau in ([t] if taus is None else taus):
            args = (t, tau, y_index, spec.rho0_s, spec.rho0_e)
            if scheme == "deterministic":
                r = cpf_deterministic(decomp, meas, *args)
            else:
                r = cpf_random(decomp, meas, wp, *args)
            orc = cpf_measurement_oracle(gen, spec.dims, meas, t, tau, y_index, spec.rho0_s, spec.rho0_e, scheme, wp)
            row = [t, tau, r.value, orc.value, r.p_y]
            if closed:
                x_mean = float(np.real(np.trace(SX @ spec.rho0_s)))
                row.append(fluor_cpf_closed_form(params, t, tau, int(r.y_value), x_mean))
            rows.append(row)
    files = {"cpf.csv": write_csv(os.path.join(out, "cpf.csv"), header, rows)}
    gap = max(abs(r[2] - r[3]) for r in rows)
    return files, {"scheme": scheme, "max_route_gap": gap, "max_abs_value": max(abs(r[2]) for r in rows)}


def task_qrt(cfg: ScenarioConfig, out: str) -> tuple[dict, dict]:
    spec, _ = build_model(cfg)
    o = cfg.options
    ds = spec.ds
    named = {"X": SX, "Y": SY, "Z": SZ}

    def op(x):
        if isinstance(x, str):
            return pauli_string(x) if len(x) > 1 or x.upper() not in named else named[x.upper()]
        return parse_matrix(x, "operator")

    left = op(o.get("left", "Z"))
    ops = [op(x) for x in o.get("right", ["X", "Y", "Z"])]
    if left.shape != (ds, ds) or any(a.shape != (ds, ds) for a in ops):
        raise ConfigError("qrt operators have the wrong dimension")
    ts = o.get("t_values", list(cfg.times))
    taus = o.get("tau_values", [1.0])
    gen = spec.generator()
    r0 = spec.initial_state()
    unit = _time_unit(cfg)
    header = [f"t[{unit}]", f"tau[{unit}]"]
    for k in range(len(ops)):
        header += [f"exact_{k}_re[1]", f"exact_{k}_im[1]", f"qrt_{k}_re[1]", f"qrt_{k}_im[1]"]
    header.append("deviation[1]")
    rows = []
    for t in ts:
        for tau in taus:
            ex = exact_correlation(gen, spec.dims, r0, left, ops, t, tau)
            pr = qrt_prediction(gen, spec.dims, r0, left, ops, t, tau, spec.rho0_e)
            row = [t, tau]
            for a, b in zip(ex, pr):
                row += [a.real, a.imag, b.real, b.imag]
            row.append(float(np.max(np.abs(ex - pr))))
            rows.append(row)
    files = {"qrt.csv": write_csv(os.path.join(out, "qrt.csv"), header, rows)}
    return files, {"max_deviation": max(r[-1] for r in rows)}


def task_trajectories(cfg: ScenarioConfig, out: str, threads: int) -> tuple[dict, dict]:
    spec, _ = build_model(cfg)
    n = int(cfg.options.get("n_trajectories", 100))
    recs = simulate_ensemble(spec, n, cfg.seed, cfg.times, threads=threads)
    avg = ensemble_average(recs)
    exact = propagate(spec.generator(), spec.initial_state(), cfg.times).states
    se = trace_distance_stderr(recs, seed=cfg.seed)
    unit = _time_unit(cfg)
    rows = []
    for k, t in enumerate(cfg.times):
        rs = ptrace_env(avg.mean[k], spec.dims)
        rows.append([t, trace_distance(avg.mean[k], exact[k]), se[k]] + matrix_vals(rs))
    header = [f"time[{unit}]", "trace_distance_to_exact[1]", "trace_distance_stderr[1]"] + matrix_cols("rho_s_mean", spec.ds)
    files = {"ensemble.csv": write_csv(os.path.join(out, "ensemble.csv"), header, rows)}
    wt = waiting_time_histogram(recs, bins=int(cfg.options.get("bins", 30)))
    wrows = [[wt.edges[i], wt.edges[i + 1], wt.density[i]] for i in range(len(wt.density))]
    files["waiting_times.csv"] = write_csv(
        os.path.join(out, "waiting_times.csv"),
        [f"bin_lo[{unit}]", f"bin_hi[{unit}]", f"density[{_rate_unit(cfg)}]"], wrows)
    text = dumps_records(recs).encode("utf-8")
    with open(os.path.join(out, "trajectories.jsonl"), "wb") as fh:
        fh.write(text)
    files["trajectories.jsonl"] = hashlib.sha256(text).hexdigest()
    ratio = max(r[1] / r[2] for r in rows if r[2] > 0) if any(r[2] > 0 for r in rows) else 0.0
    summary = {"n_trajectories": n, "max_td_over_se": ratio, "mean_waiting_time": wt.mean,
               "waiting_time_stderr": wt.stderr, "intervals": int(wt.intervals.size)}
    return files, summary


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(float(x)) else DIV
    return x


def run(cfg: ScenarioConfig, out: str, threads: int = 1) -> dict:
    os.makedirs(out, exist_ok=True)
    if cfg.task == "verify":
        files, summary = task_verify(cfg, out)
    elif cfg.task == "evolve":
        files, summary = task_evolve(cfg, out)
    elif cfg.task == "witness":
        files, summary = task_witness(cfg, out)
    elif cfg.task == "cpf":
        files, summary = task_cpf(cfg, out)
    elif cfg.task == "qrt":
        files, summary = task_qrt(cfg, out)
    else:
        files, summary = task_trajectories(cfg, out, threads)
    manifest = {
        "library": "bystander",
        "version": __version__,
        "task": cfg.task,
        "seed": cfg.seed,
        "config": cfg.raw,
        "files": {k: {"sha256": v} for k, v in sorted(files.items())},
        "summary": _jsonable(summary),
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="bystander", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="scenario JSON file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
            cfg.raw = dict(cfg.raw, seed=args.seed)
        if args.threads < 1:
            raise ConfigError("threads must be positive")
        manifest = run(cfg, args.out, args.threads)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (RateMatrixError, CouplingError, IllPosedError, NumericalFailure, np.linalg.LinAlgError,
            FloatingPointError, ValueError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    log.info("wrote %d files to %s", len(manifest["files"]), args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
