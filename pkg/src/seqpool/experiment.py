"""Experiment configuration, schedule execution, storage, and run diagnostics.

A schedule is an ordered list of update elements (data, not code); one
iteration applies every element in order and records one sample per element
marked ``record`` on recording iterations (controlled by the thinning factor).
Runs are deterministic given their seed; different seeds run as independent
workers.
"""
from __future__ import annotations

import json
import os
import re
import struct
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .ehmm import EhmmConfig, EhmmStats, ehmm_update, independence_pool_update
from .errors import ConfigError, NumericalError
from .metropolis import MetropolisStats, conditional_moments, metropolis_update
from .model import ModelSpec, chain_rng, validate_obs
from .pgbs import pgbs_update

SAMPLE_HEADER = struct.Struct("<QQQ")  # n, P, sample count (little-endian uint64)


@dataclass
class UpdateElement:
    """One schedule entry; fields beyond ``kind`` are kind-specific."""

    kind: str
    record: bool = True
    L: int = 1
    direction: str = "forward"
    eps_range: tuple[float, float] = (0.1, 0.4)
    flip: bool = False
    shift_window: int | None = None
    reps: int = 1
    eps: tuple[float, float] = (0.2, 0.8)

    def as_dict(self) -> dict:
        d = {"type": self.kind, "record": self.record}
        if self.kind in ("ehmm", "pgbs", "independence_pool"):
            d["L"] = self.L
        if self.kind in ("ehmm", "pgbs"):
            d["direction"] = self.direction
        if self.kind == "ehmm":
            d.update(eps_range=list(self.eps_range), flip=self.flip, shift_window=self.shift_window)
        if self.kind == "metropolis":
            d.update(reps=self.reps, eps=list(self.eps))
        return d


def element_from_dict(d: dict) -> UpdateElement:
    if "type" not in d:
        raise ConfigError(f"schedule element missing 'type': {d}")
    kind = str(d["type"])
    known = {"ehmm", "pgbs", "metropolis", "independence_pool"}
    if kind not in known:
        raise ConfigError(f"unknown schedule element type {kind!r} (expected one of {sorted(known)})")
    el = UpdateElement(kind=kind, record=bool(d.get("record", True)))
    if kind in ("ehmm", "pgbs", "independence_pool"):
        if "L" not in d:
            raise ConfigError(f"{kind} schedule element requires L")
        el.L = int(d["L"])
    if kind in ("ehmm", "pgbs"):
        el.direction = str(d.get("direction", "forward"))
    if kind == "ehmm":
        er = d.get("eps_range", (0.1, 0.4))
        el.eps_range = (float(er[0]), float(er[1]))
        el.flip = bool(d.get("flip", False))
        sw = d.get("shift_window")
        el.shift_window = None if sw is None else int(sw)
        EhmmConfig(L=el.L, eps_range=el.eps_range, shift_window=el.shift_window, flip_enabled=el.flip)
    if kind == "metropolis":
        el.reps = int(d.get("reps", 1))
        if el.reps < 1:
            raise ConfigError("metropolis reps must be >= 1")
        ep = d.get("eps", (0.2, 0.8))
        el.eps = (float(ep[0]), float(ep[1]))
    return el


def load_schedule_file(path) -> tuple[list[UpdateElement], str | float]:
    """Parse a YAML schedule file: key ``schedule`` (list of elements) and an
    optional ``init`` (zeros | ones | prior | number)."""
    import yaml

    with open(path) as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict) or "schedule" not in cfg:
        raise ConfigError(f"schedule file {path} must contain a 'schedule' list")
    elements = [element_from_dict(d) for d in cfg["schedule"]]
    return elements, cfg.get("init", "zeros")


@dataclass
class ExperimentConfig:
    spec: ModelSpec
    y: np.ndarray
    schedule: list[UpdateElement]
    iterations: int
    seeds: list[int]
    out_dir: Path
    thin: int = 1
    sample_format: str = "csv"  # csv | bin
    init: str | float = "zeros"
    model_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.schedule:
            raise ConfigError("schedule must be nonempty")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be a nonempty list of distinct integers")
        if self.thin < 1:
            raise ConfigError("thinning factor must be >= 1")
        if self.sample_format not in ("csv", "bin"):
            raise ConfigError(f"unknown sample format {self.sample_format!r}")
        self.y = validate_obs(self.spec, self.y)
        self.out_dir = Path(self.out_dir)


def variable_names(n: int, P: int) -> list[str]:
    """Flattened variable addresses, time-major: x[dim][time], both 1-based."""
    return [f"x[{j + 1}][{i + 1}]" for i in range(n) for j in range(P)]


_VAR_RE = re.compile(r"^x\[(\d+)\]\[(\d+)\]$")


def variable_index(name: str, n: int, P: int) -> int:
    m = _VAR_RE.match(name.strip())
    if not m:
        raise ConfigError(f"bad variable address {name!r}; expected x[dim][time], e.g. x[1][300]")
    j, i = int(m.group(1)), int(m.group(2))
    if not (1 <= j <= P and 1 <= i <= n):
        raise ConfigError(f"variable address {name!r} outside model shape (P={P}, n={n})")
    return (i - 1) * P + (j - 1)


def _initial_sequence(config: ExperimentConfig, rng) -> np.ndarray:
    n, P = config.spec.n, config.spec.P
    init = config.init
    if init == "prior":
        x = np.empty((n, P))
        x[0] = config.spec.chol_init @ rng.standard_normal(P)
        for i in range(1, n):
            x[i] = config.spec.phi * x[i - 1] + config.spec.chol_sigma @ rng.standard_normal(P)
        return x
    if init == "zeros":
        return np.zeros((n, P))
    if init == "ones":
        return np.ones((n, P))
    try:
        return np.full((n, P), float(init))
    except (TypeError, ValueError):
        raise ConfigError(f"unknown init {init!r} (zeros | ones | prior | number)") from None


def _apply_element(el: UpdateElement, x, spec, y, rng, state: dict):
    if el.kind == "ehmm":
        direction = el.direction
        if direction == "alternate":
            direction = "forward" if state["iteration"] % 2 == 0 else "reversed"
        return ehmm_update(x, spec, y, state["ehmm_cfg"], direction, rng, state["stats"])
    if el.kind == "independence_pool":
        return independence_pool_update(x, spec, y, el.L, rng, state["stats"])
    if el.kind == "pgbs":
        direction = el.direction
        if direction == "alternate":
            direction = "forward" if state["iteration"] % 2 == 0 else "reversed"
        return pgbs_update(x, spec, y, el.L, direction, rng)
    if el.kind == "metropolis":
        cm = state["cm"]
        x, state["parity"] = metropolis_update(
            x, spec, y, cm, el.eps, el.reps, rng, state["parity"], state["stats"]
        )
        return x
    raise ConfigError(f"unknown element kind {el.kind!r}")


def run_schedule(
    spec: ModelSpec,
    y: np.ndarray,
    schedule: list[UpdateElement],
    iterations: int,
    thin: int,
    rng,
    x0: np.ndarray,
):
    """Execute a schedule and collect recorded samples in memory.

    Returns (samples (count, n*P), provenance rows [(iteration, element)],
    per-element stats dicts, final sequence).
    """
    n, P = spec.n, spec.P
    states = []
    cm = None
    for el in schedule:
        st: dict = {"iteration": 0}
        if el.kind in ("ehmm", "independence_pool"):
            st["stats"] = EhmmStats(n)
            if el.kind == "ehmm":
                st["ehmm_cfg"] = EhmmConfig(
                    L=el.L, eps_range=el.eps_range, shift_window=el.shift_window, flip_enabled=el.flip
                )
        elif el.kind == "metropolis":
            if cm is None:
                cm = conditional_moments(spec)
            st["cm"] = cm
            st["stats"] = MetropolisStats(n)
            st["parity"] = 0
        states.append(st)

    rows = []
    provenance = []
    x = x0
    for it in range(iterations):
        record_now = (it + 1) % thin == 0
        for k, el in enumerate(schedule):
            states[k]["iteration"] = it
            x = _apply_element(el, x, spec, y, rng, states[k])
            if record_now and el.record:
                rows.append(x.ravel().copy())
                provenance.append((it + 1, k))
    samples = np.array(rows) if rows else np.empty((0, n * P))
    stats_out = {}
    for k, el in enumerate(schedule):
        st = states[k].get("stats")
        if st is None:
            continue
        d = st.as_dict()
        if d:
            stats_out[str(k)] = {"kind": el.kind, **d}
    return samples, provenance, stats_out, x


def write_samples(run_dir: Path, samples: np.ndarray, provenance, seed: int, n: int, P: int, fmt: str):
    """Persist recorded samples.

    csv: one row per sample with seed, iteration, element provenance columns
    and %.17g values (bitwise round-trippable).  bin: little-endian header of
    three uint64 (n, P, count) followed by count*n*P little-endian float64 in
    (sample, time, dim) order, plus a provenance sidecar CSV.
    """
    count = samples.shape[0]
    if fmt == "csv":
        names = variable_names(n, P)
        with open(run_dir / "samples.csv", "w") as f:
            f.write("seed,iteration,element," + ",".join(names) + "\n")
            for r in range(count):
                it, el = provenance[r]
                f.write(f"{seed},{it},{el}," + ",".join("%.17g" % v for v in samples[r]) + "\n")
    else:
        with open(run_dir / "samples.bin", "wb") as f:
            f.write(SAMPLE_HEADER.pack(n, P, count))
            f.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())
        with open(run_dir / "samples_index.csv", "w") as f:
            f.write("row,seed,iteration,element\n")
            for r in range(count):
                it, el = provenance[r]
                f.write(f"{r},{seed},{it},{el}\n")


def load_samples(run_dir) -> tuple[np.ndarray, list[tuple[int, int, int]], dict]:
    """Load one run's samples: (values (count, n*P), provenance rows
    (seed, iteration, element), meta dict)."""
    run_dir = Path(run_dir)
    with open(run_dir / "meta.json") as f:
        meta = json.load(f)
    n, P = meta["n"], meta["P"]
    if (run_dir / "samples.bin").exists():
        with open(run_dir / "samples.bin", "rb") as f:
            hn, hp, count = SAMPLE_HEADER.unpack(f.read(SAMPLE_HEADER.size))
            if (hn, hp) != (n, P):
                raise ConfigError(f"binary sample header {(hn, hp)} disagrees with meta {(n, P)}")
            values = np.frombuffer(f.read(), dtype="<f8").reshape(count, n * P).astype(float)
        prov = []
        with open(run_dir / "samples_index.csv") as f:
            next(f)
            for line in f:
                _, seed, it, el = line.strip().split(",")
                prov.append((int(seed), int(it), int(el)))
        return values, prov, meta
    rows = []
    prov = []
    with open(run_dir / "samples.csv") as f:
        next(f)
        for line in f:
            parts = line.rstrip("\n").split(",")
            prov.append((int(parts[0]), int(parts[1]), int(parts[2])))
            rows.append(np.array([float(v) for v in parts[3:]]))
    values = np.array(rows) if rows else np.empty((0, n * P))
    return values, prov, meta


def run_single(config: ExperimentConfig, seed: int) -> Path:
    """Run one seed's chain; writes samples, meta.json, and (on a numerical
    failure) error.json into <out_dir>/run_seed<seed>/."""
    run_dir = config.out_dir / f"run_seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    spec = config.spec
    rng = chain_rng(seed, 0)
    x0 = _initial_sequence(config, rng)
    c0 = (spec.counter.trans, spec.counter.obs)
    t0 = time.perf_counter()
    try:
        samples, provenance, stats, _ = run_schedule(
            spec, config.y, config.schedule, config.iterations, config.thin, rng, x0
        )
    except NumericalError as e:
        with open(run_dir / "error.json", "w") as f:
            json.dump(
                {"error": type(e).__name__, "message": str(e), "seed": seed,
                 "traceback": traceback.format_exc()},
                f,
                indent=2,
            )
        raise
    elapsed = time.perf_counter() - t0
    write_samples(run_dir, samples, provenance, seed, spec.n, spec.P, config.sample_format)
    meta = {
        "seed": seed,
        "n": spec.n,
        "P": spec.P,
        "iterations": config.iterations,
        "thin": config.thin,
        "format": config.sample_format,
        "init": config.init,
        "model": config.model_echo,
        "schedule": [el.as_dict() for el in config.schedule],
        "samples_recorded": int(samples.shape[0]),
        "elapsed_seconds": elapsed,
        "secs_per_sample": elapsed / max(1, samples.shape[0]),
        "counters": {
            "trans": spec.counter.trans - c0[0],
            "obs": spec.counter.obs - c0[1],
        },
        "acceptance": stats,
        "status": "ok",
    }
    with open(run_dir / "meta.json", "w") as f:
        json.dump(meta, f, indent=2)
    return run_dir


def _worker(args) -> tuple[int, str, str]:
    config, seed = args
    try:
        run_single(config, seed)
        return seed, "ok", ""
    except NumericalError as e:
        return seed, "numerical-error", str(e)


def max_workers() -> int:
    env = os.environ.get("SEQPOOL_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"SEQPOOL_THREADS must be an integer, got {env!r}") from None
        return max(1, cap)
    return os.cpu_count() or 1


def run_experiment(config: ExperimentConfig) -> dict[int, tuple[str, str]]:
    """Run every seed (concurrently, capped by SEQPOOL_THREADS).

    Returns {seed: (status, message)}; a seed's numerical failure leaves a
    diagnostic file in its run directory and does not affect other seeds.
    """
    config.out_dir.mkdir(parents=True, exist_ok=True)
    workers = min(max_workers(), len(config.seeds))
    results: dict[int, tuple[str, str]] = {}
    if workers <= 1 or len(config.seeds) == 1:
        for seed in config.seeds:
            results[seed] = _worker((config, seed))[1:]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for seed, status, msg in ex.map(_worker, [(config, s) for s in config.seeds]):
                results[seed] = (status, msg)
    return results


def diagnose(
    run_dirs: list,
    variables: str | list[str] = "all",
    burn_in_frac: float = 0.10,
    rule: str = "threshold",
    threshold: float = 0.01,
) -> diag.DiagnosticsReport:
    """Pooled multi-run autocorrelation-time report over selected variables."""
    if not run_dirs:
        raise ConfigError("at least one run directory is required")
    loaded = [load_samples(d) for d in run_dirs]
    n, P = loaded[0][2]["n"], loaded[0][2]["P"]
    for vals, _, meta in loaded:
        if (meta["n"], meta["P"]) != (n, P):
            raise ConfigError("run directories have mismatched model shapes")
        if vals.shape[0] == 0:
            raise ConfigError("cannot diagnose a run with no recorded samples")
    names = variable_names(n, P)
    if variables == "all":
        idx = list(range(n * P))
    else:
        if isinstance(variables, str):
            variables = [v for v in variables.split(",") if v.strip()]
        idx = [variable_index(v, n, P) for v in variables]
    runs = [vals[:, idx] for vals, _, _ in loaded]
    taus = diag.act_per_variable(runs, burn_in_frac, rule, threshold)
    secs = float(np.mean([meta["secs_per_sample"] for _, _, meta in loaded]))
    acceptance = _aggregate_acceptance([meta for _, _, meta in loaded])
    cost = {
        "trans": int(sum(meta["counters"]["trans"] for _, _, meta in loaded)),
        "obs": int(sum(meta["counters"]["obs"] for _, _, meta in loaded)),
    }
    thin = loaded[0][2].get("thin", 1)
    return diag.DiagnosticsReport(
        variables=[names[k] for k in idx],
        act=taus,
        secs_per_sample=secs,
        acceptance=acceptance,
        cost=cost,
        thinning=thin,
        burn_in_frac=burn_in_frac,
        rule=rule,
        threshold=threshold if rule == "threshold" else None,
    )


def _aggregate_acceptance(metas: list[dict]) -> dict:
    """Sum per-element proposal/acceptance counts across runs; report rates."""
    agg: dict = {}
    for meta in metas:
        for key, entry in meta.get("acceptance", {}).items():
            slot = agg.setdefault(key, {"kind": entry["kind"]})
            for kind, counts in entry.items():
                if kind == "kind":
                    continue
                tgt = slot.setdefault(kind, {"proposed": 0, "accepted": 0})
                tgt["proposed"] += int(np.sum(counts["proposed"]))
                tgt["accepted"] += int(np.sum(counts["accepted"]))
    for slot in agg.values():
        for kind, counts in slot.items():
            if kind == "kind":
                continue
            counts["rate"] = counts["accepted"] / counts["proposed"] if counts["proposed"] else float("nan")
    return agg


def export_trace(run_dirs: list, variable: str, path) -> None:
    """Write a plot-ready CSV (run, iteration, value) for one variable."""
    loaded = [load_samples(d) for d in run_dirs]
    n, P = loaded[0][2]["n"], loaded[0][2]["P"]
    k = variable_index(variable, n, P)
    with open(path, "w") as f:
        f.write("run,iteration,value\n")
        for r, (vals, prov, _) in enumerate(loaded):
            for row in range(vals.shape[0]):
                f.write(f"{r},{prov[row][1]},{vals[row, k]!r}\n")
