"""Scenario configuration: JSON schema, parsing and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SCHEMA_VERSION = 1
TASKS = ("verify", "evolve", "cpf", "qrt", "witness", "trajectories")
MODEL_KINDS = ("fluor", "multipartite", "custom")


class ConfigError(ValueError):
    """The configuration does not match the schema."""


def parse_matrix(obj: Any, name: str) -> np.ndarray:
    """Nested lists of numbers or [re, im] pairs."""
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric matrix") from exc
    if arr.ndim == 3 and arr.shape[2] == 2:
        arr = arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{name}: expected a square matrix")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: non-finite entries")
    return arr.astype(complex)


def _num(d: dict, key: str, default=None, lo: float | None = None, strict: bool = False) -> float:
    if key not in d:
        if default is None:
            raise ConfigError(f"missing field {key!r}")
        return float(default)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key!r} must be a number")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(f"{key!r} must be finite")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(f"{key!r} out of range")
    return v


def parse_times(obj: Any) -> np.ndarray:
    if isinstance(obj, dict):
        start = _num(obj, "start", 0.0)
        stop = _num(obj, "stop")
        num = obj.get("num")
        if not isinstance(num, int) or isinstance(num, bool) or num < 2:
            raise ConfigError("times.num must be an integer >= 2")
        times = np.linspace(start, stop, num)
    elif isinstance(obj, list):
        try:
            times = np.asarray(obj, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("times must be numbers") from exc
    else:
        raise ConfigError("times must be a list or {start, stop, num}")
    if times.ndim != 1 or times.size < 2 or times[0] != 0.0:
        raise ConfigError("time grid must start at 0 and hold at least two points")
    if np.any(np.diff(times) <= 0) or not np.all(np.isfinite(times)):
        raise ConfigError("time grid must be strictly increasing")
    return times


@dataclass
class ScenarioConfig:
    task: str
    model: dict
    times: np.ndarray
    system_state: Any = "plus_x"
    seed: int = 0
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def validate_config(doc: Any) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    task = doc.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}")
    model = doc.get("model")
    if not isinstance(model, dict) or model.get("kind") not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
    _validate_model(model)
    times = parse_times(doc.get("times", {"start": 0.0, "stop": 10.0, "num": 101}))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    options = doc.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options must be an object")
    _validate_options(task, options)
    state = doc.get("system_state", "plus_x")
    if not isinstance(state, str):
        parse_matrix(state, "system_state")
    return ScenarioConfig(task, model, times, state, seed, options, doc)


def _validate_model(m: dict) -> None:
    kind = m["kind"]
    if kind == "fluor":
        _num(m, "gamma", 1.0, 0.0, strict=True)
        _num(m, "omega", 1.0, 0.0)
        if "omegas" in m:
            if not isinstance(m["omegas"], list) or not m["omegas"]:
                raise ConfigError("omegas must be a non-empty list")
            for w in m["omegas"]:
                _num({"w": w}, "w", lo=0.0)
    elif kind == "multipartite":
        n = m.get("n_qubits", 1)
        if not isinstance(n, int) or isinstance(n, bool) or not 1 <= n <= 3:
            raise ConfigError("n_qubits must be an integer in [1, 3]")
        _num(m, "gamma", 1.0, 0.0, strict=True)
        _num(m, "phi", m.get("gamma", 1.0), 0.0)
        _num(m, "omega", 0.0, 0.0)
        for key in ("string_a", "string_b"):
            s = m.get(key)
            if not isinstance(s, str) or len(s) != n or any(ch not in "IXYZ" for ch in s.upper()):
                raise ConfigError(f"{key} must be a Pauli string of length {n}")
    else:
        ds, de = m.get("ds"), m.get("de")
        if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in (ds, de)):
            raise ConfigError("custom model needs integer ds and de")
        for key, dim in (("system_hamiltonian", ds), ("env_hamiltonian", de)):
            if key in m and parse_matrix(m[key], key).shape != (dim, dim):
                raise ConfigError(f"{key} has the wrong dimension")
        chans = m.get("channels")
        if not isinstance(chans, list) or not chans:
            raise ConfigError("custom model needs a non-empty channels list")
        for i, ch in enumerate(chans):
            if not isinstance(ch, dict):
                raise ConfigError("each channel must be an object")
            if parse_matrix(ch.get("env_op"), f"channels[{i}].env_op").shape != (de, de):
                raise ConfigError(f"channels[{i}].env_op has the wrong dimension")
            kraus = ch.get("sys_kraus")
            if not isinstance(kraus, list) or not kraus:
                raise ConfigError(f"channels[{i}].sys_kraus must be a non-empty list")
            for k in kraus:
                if parse_matrix(k, f"channels[{i}].sys_kraus").shape != (ds, ds):
                    raise ConfigError(f"channels[{i}].sys_kraus has the wrong dimension")
        if "rate_matrix" in m:
            g = parse_matrix(m["rate_matrix"], "rate_matrix")
            if g.shape != (len(chans), len(chans)):
                raise ConfigError("rate_matrix must be n_channels x n_channels")
        else:
            for i, ch in enumerate(chans):
                _num(ch, "rate")


def _validate_options(task: str, o: dict) -> None:
    if task == "cpf":
        if o.get("scheme", "deterministic") not in ("deterministic", "random"):
            raise ConfigError("scheme must be deterministic or random")
        obs = o.get("observables", ["X", "X", "X"])
        if not isinstance(obs, list) or len(obs) != 3:
            raise ConfigError("observables must list three entries (x, y, z)")
        if "selection" in o:
            w = np.asarray(o["selection"], dtype=float)
            if w.ndim != 2 or np.any(w < 0) or np.max(np.abs(w.sum(axis=0) - 1)) > 1e-10:
                raise ConfigError("selection must be a column-stochastic matrix")
        if not isinstance(o.get("y_index", 0), int):
            raise ConfigError("y_index must be an integer")
    if task == "trajectories":
        n = o.get("n_trajectories", 100)
        if not isinstance(n, int) or isinstance(n, bool) or n < 2:
            raise ConfigError("n_trajectories must be an integer >= 2")
    if task == "qrt":
        for key in ("t_values", "tau_values"):
            if key in o and (not isinstance(o[key], list) or any(not isinstance(v, (int, float)) or v < 0 for v in o[key])):
                raise ConfigError(f"{key} must be a list of non-negative numbers")


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return validate_config(doc)
