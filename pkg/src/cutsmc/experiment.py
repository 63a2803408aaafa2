"""Batch orchestration and output files for configured experiments."""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import run_direct
from .bounds import T_REQUIREMENT
from .config import ExperimentConfig, build_estimators, build_model
from .exceptions import CutSMCError, InvalidInputError
from .smc import run_cut_smc

__all__ = ["run_batch", "run_experiment", "emit_samples", "emit_summary", "read_samples",
           "resolve_threads"]

SAMPLES_FILE = "samples.csv"
SUMMARY_FILE = "summary.json"


def resolve_threads(threads=None) -> int:
    """--threads, else CUTSMC_THREADS, else 1."""
    if threads is None:
        env = os.environ.get("CUTSMC_THREADS")
        if env is None or env.strip() == "":
            return 1
        try:
            threads = int(env)
        except ValueError:
            raise InvalidInputError(f"CUTSMC_THREADS must be an integer, got {env!r}")
    if threads < 1:
        raise InvalidInputError("thread count must be >= 1")
    return int(threads)


def run_batch(cfg: ExperimentConfig, batch: int) -> dict:
    """Run one batch and return its rows and diagnostics (picklable)."""
    model = build_model(cfg.model)
    try:
        return _run_batch(cfg, model, batch)
    except CutSMCError as exc:
        new = type(exc)(f"batch {batch}: {exc}")
        new.batch = batch
        raise new from exc
    finally:
        close = getattr(model, "close", None)
        if close is not None:
            close()


def _run_batch(cfg, model, batch):
    if cfg.method_kind == "smc":
        run = run_cut_smc(model, cfg.method["S"], cfg.smc_config(), cfg.seed, batch=batch)
        nu, theta, s = run.pooled()
        particle = np.concatenate([np.arange(ps.particles.shape[0])
                                   for ps in run.retained_systems])
        steps = [{"step": d.step, "retained": bool(d.retained), "ess": d.ess,
                  "acceptance_rate": d.acceptance_rate, "wall_time": d.wall_time}
                 for d in run.diagnostics]
        extra = {"init_time": run.init_time, "approximate_init": run.approximate_init,
                 "visited_steps": len(run.sequence)}
    else:
        m = cfg.method
        run = run_direct(model, m["S"], cfg.kernel_config(), m["L"], m["burn_in"], cfg.seed,
                         thin=m["thin"], batch=batch)
        nu, theta, s, particle = run.pooled()
        steps = [{"chain": i, "acceptance_rate": r} for i, r in enumerate(run.acceptance_rates)]
        extra = {"chain_length": run.chain_length, "burn_in": run.burn_in, "thin": run.thin}
    return {"batch": batch, "nu": nu, "theta": theta, "s": s, "particle": particle,
            "wall_time": run.wall_time, "seed": run.seed, "steps": steps, **extra}


def run_experiment(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> dict:
    """Run every batch (in a process pool when threads > 1) and write outputs.

    Each batch draws from its own counter-based stream, so results do not
    depend on the thread count or on completion order.
    """
    t0 = time.perf_counter()
    batches = range(cfg.batch_count)
    if threads > 1 and cfg.batch_count > 1:
        with ProcessPoolExecutor(max_workers=min(threads, cfg.batch_count)) as pool:
            results = list(pool.map(run_batch, [cfg] * cfg.batch_count, batches))
    else:
        results = [run_batch(cfg, b) for b in batches]
    total = time.perf_counter() - t0
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    emit_samples(results, out / SAMPLES_FILE)
    summary = build_summary(cfg, results, total, threads)
    emit_summary(summary, out / SUMMARY_FILE)
    return summary


def _fmt(x) -> str:
    return repr(float(x))


def emit_samples(results, path) -> None:
    """CSV with header batch,s,particle,nu_1..,theta_1.. and round-trip floats."""
    if not results:
        raise InvalidInputError("no batches to write")
    d_nu = results[0]["nu"].shape[1]
    d = results[0]["theta"].shape[1]
    header = ["batch", "s", "particle"] + [f"nu_{j + 1}" for j in range(d_nu)] \
        + [f"theta_{j + 1}" for j in range(d)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in sorted(results, key=lambda r: r["batch"]):
            b = str(r["batch"])
            for s, p, nu, th in zip(r["s"], r["particle"], r["nu"], r["theta"]):
                fh.write(",".join([b, str(int(s)), str(int(p))] + [_fmt(v) for v in nu]
                                  + [_fmt(v) for v in th]) + "\n")


def read_samples(path):
    """Load a samples CSV: returns (header, int columns (n, 3), nu, theta)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header[:3] != ["batch", "s", "particle"]:
        raise InvalidInputError(f"{path}: not a samples file (bad header)")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d_nu = sum(h.startswith("nu_") for h in header)
    ids = data[:, :3].astype(int)
    return header, ids, data[:, 3:3 + d_nu], data[:, 3 + d_nu:]


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def build_summary(cfg: ExperimentConfig, results, total_time: float, threads: int) -> dict:
    ests = build_estimators(cfg.estimators)
    results = sorted(results, key=lambda r: r["batch"])
    batches = []
    pooled = {name: [] for name in ests}
    max_abs = {name: 0.0 for name in ests}
    for r in results:
        per = {}
        for name, g in ests.items():
            vals = np.array([g(nu, th) for nu, th in zip(r["nu"], r["theta"])])
            max_abs[name] = max(max_abs[name], float(np.max(np.abs(vals))))
            if cfg.method_kind == "smc":
                # mean over retained steps of the particle mean
                per[name] = float(np.mean([vals[r["s"] == s].mean() for s in np.unique(r["s"])]))
            else:
                per[name] = float(vals.mean())
            pooled[name].append(per[name])
        entry = {"batch": r["batch"], "wall_time": r["wall_time"], "n_samples": int(r["theta"].shape[0]),
                 "seed": r["seed"], "estimates": per}
        for key in ("init_time", "approximate_init", "visited_steps", "chain_length", "burn_in", "thin"):
            if key in r:
                entry[key] = r[key]
        batches.append(entry)
    walls = [r["wall_time"] for r in results]
    diag = []
    for r in results:
        for st in r["steps"]:
            diag.append({"batch": r["batch"], **{k: _clean(v) for k, v in st.items()}})
    ess = [st["ess"] for st in diag if st.get("ess") is not None]
    acc = [st["acceptance_rate"] for st in diag if st.get("acceptance_rate") is not None]
    return {
        "software": {"name": "cutsmc", "version": __version__},
        "method": cfg.method_kind,
        "config": cfg.as_dict(),
        "seed": {"seed": cfg.seed, "streams": "Philox keyed by SeedSequence(seed, spawn_key=path)",
                 "batch_paths": [b["seed"]["path"] for b in batches]},
        "threads": threads,
        "estimates": {name: float(np.mean(v)) for name, v in pooled.items()},
        "estimates_batch_sd": {name: (float(np.std(v, ddof=1)) if len(v) > 1 else None)
                               for name, v in pooled.items()},
        # the finite-sample bounds assume |g| <= 1
        "estimator_max_abs": max_abs,
        "batches": batches,
        "wall_time": {"min": min(walls), "max": max(walls), "total": total_time},
        "diagnostics": {
            "mean_ess": float(np.mean(ess)) if ess else None,
            "min_ess": float(np.min(ess)) if ess else None,
            "mean_acceptance_rate": float(np.mean(acc)) if acc else None,
            "steps": diag,
        },
        "t_requirement": T_REQUIREMENT if cfg.method_kind == "smc" else None,
        "samples_file": SAMPLES_FILE,
    }


def emit_summary(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return _clean(float(o))
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
