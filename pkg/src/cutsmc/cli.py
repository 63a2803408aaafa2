"""Command line entry point: ``cutsmc <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.

External models speak a line protocol over the child's stdin/stdout. Each
request is one line holding d_nu values of nu followed by d values of theta,
space separated, in round-trip decimal. The reply is one line holding
log q(theta; nu) as a decimal float (``-inf`` allowed, ``nan`` is an error).
The child process stays alive for the whole run.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import compare_runs
from .bounds import (
    BoundsRequest,
    Chi2OverflowWarning,
    bounds_report,
    chi2_gaussian_closed_form,
    chi2_self_normalized_mc,
    e_alpha_from_sequence,
    required_S,
)
from .config import PRESETS, build_model, load_config, parse_config, preset
from .exceptions import ConfigurationError, CutSMCError, InvalidInputError, NumericalFailure
from .experiment import SAMPLES_FILE, read_samples, resolve_threads, run_experiment
from .model import GaussianConjugateModel
from .rng import CUT_DRAWS, STUDY, as_key
from .sequencing import (
    CutSequence,
    DistanceMetric,
    draw_cut_sequence,
    hamiltonian_study,
    correlated_normal_sampler,
    max_consecutive_distance,
    permute_tsp,
    temper_sequence,
    tsp_path_order,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="experiment config (YAML or JSON)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out", help="output directory (overrides config)")
    g.add_argument("--threads", type=int,
                   help="worker processes for batches (default: $CUTSMC_THREADS or 1)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="cutsmc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"cutsmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common], help="sample-size requirements")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--e-alpha", type=float,
                   help="bound on 1 + max consecutive chi^2; otherwise computed from --config")
    p.add_argument("--e-alpha-method", choices=("closed-form", "mc"), default="closed-form")
    p.add_argument("-P", "--tempering", type=int, default=None, help="interpolants per gap")
    p.add_argument("--t", type=int, default=None, help="kernel steps assumed for the cost")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")

    p = sub.add_parser("chi2", parents=[common], help="consecutive chi^2 along a sequence")
    p.add_argument("--sequence", help="whitespace matrix of cut points, one per row "
                                      "(default: draw S + 1 points from the config)")
    p.add_argument("--method", choices=("closed-form", "mc", "both"), default="both")
    p.add_argument("--n", type=int, default=100_000, help="exact draws per MC estimate")
    p.add_argument("-P", "--tempering", type=int, default=0)
    p.add_argument("--permute", action="store_true")

    p = sub.add_parser("tsp-order", parents=[common], help="approximate shortest path order")
    p.add_argument("input", help="whitespace matrix of cut draws, one per row ('-' for stdin)")
    p.add_argument("--metric", choices=("euclidean", "scaled-euclidean"), default="euclidean")
    p.add_argument("--scale", type=float, nargs="+")
    p.add_argument("--bottleneck", action="store_true")
    p.add_argument("-o", "--output", help="write indices here instead of stdout")

    for name, label in (("run-smc", "smc"), ("run-direct", "direct")):
        p = sub.add_parser(name, parents=[common], help=f"run a configured {label} experiment")
        p.add_argument("--preset", choices=sorted(k for k in PRESETS
                                                  if (k.endswith("direct")) == (label == "direct")))

    p = sub.add_parser("compare", parents=[common], help="KS and energy distance of two runs")
    p.add_argument("a", help="samples.csv (or a run directory)")
    p.add_argument("b", help="samples.csv (or a run directory)")
    p.add_argument("--ks-threshold", type=float, default=0.1)
    p.add_argument("--ed-threshold", type=float)
    p.add_argument("-o", "--output", help="write the JSON report here")

    p = sub.add_parser("study-hamiltonian", parents=[common],
                       help="random versus permuted max consecutive distance")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--n-points", type=int, default=25)
    p.add_argument("--n-resamples", type=int, default=1000)
    p.add_argument("--threshold", type=float, default=10.0)
    p.add_argument("--rho", type=float, default=0.7)
    p.add_argument("--scale", type=float, default=1.0)
    return parser


# --------------------------------------------------------------------------


def _config(args, required=True):
    if args.config is None:
        if getattr(args, "preset", None):
            data = preset(args.preset)
        elif required:
            raise ConfigurationError("--config (or --preset) is required")
        else:
            return None
    else:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        data = load_config(path)
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    data = copy.deepcopy(data)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output"] = args.out
    base = str(Path(args.config).parent) if args.config else None
    return parse_config(data, base_dir=base)


def _read_matrix(source):
    text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not rows:
        raise InvalidInputError(f"{source}: no points")
    if len({len(r) for r in rows}) != 1:
        raise InvalidInputError(f"{source}: rows have different lengths")
    try:
        return np.array(rows, dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{source}: {exc}")


def _cmd_bounds(args):
    P = args.tempering
    cfg = _config(args, required=False)
    if P is None:
        P = cfg.method.get("P", 0) if cfg is not None and cfg.method_kind == "smc" else 0
    t = args.t
    if t is None:
        t = cfg.method["kernel"]["t"] if cfg is not None and cfg.method_kind == "smc" else 5
    if args.e_alpha is not None:
        e_alpha, source = args.e_alpha, "user"
    else:
        if cfg is None:
            raise ConfigurationError("give --e-alpha or a --config to compute it from")
        model = build_model(cfg.model)
        if args.e_alpha_method == "closed-form" and not isinstance(model, GaussianConjugateModel):
            raise ConfigurationError("closed-form E_alpha needs the gaussian-conjugate model; "
                                     "use --e-alpha-method mc or --e-alpha")
        S = required_S(args.epsilon, args.delta)
        key = as_key(cfg.seed)
        seq = draw_cut_sequence(model, S, key.child(0, CUT_DRAWS).generator())
        if cfg.method_kind == "smc" and cfg.method["permute"]:
            seq = permute_tsp(seq, cfg.smc_config().metric)
        if P > 0:
            seq = temper_sequence(seq, P)
        e_alpha = e_alpha_from_sequence(model, seq.points, args.e_alpha_method, rng=key.child(STUDY))
        source = f"{args.e_alpha_method} sweep over a drawn sequence (seed {cfg.seed})"
    report = bounds_report(BoundsRequest(args.epsilon, args.delta, e_alpha, P, t, source))
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
    else:
        print(report.to_text())
        print(json.dumps(report.as_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_chi2(args):
    cfg = _config(args)
    model = build_model(cfg.model)
    key = as_key(cfg.seed)
    if args.sequence:
        seq = CutSequence.from_draws(_read_matrix(args.sequence))
        if seq.points.shape[1] != model.d_nu:
            raise InvalidInputError(f"sequence has {seq.points.shape[1]} columns, model d_nu is {model.d_nu}")
    else:
        S = cfg.method["S"]
        seq = draw_cut_sequence(model, S, key.child(0, CUT_DRAWS).generator())
    if args.permute:
        seq = permute_tsp(seq)
    if args.tempering:
        seq = temper_sequence(seq, args.tempering)
    closed = args.method in ("closed-form", "both")
    if closed and not isinstance(model, GaussianConjugateModel):
        raise ConfigurationError("closed-form chi^2 needs the gaussian-conjugate model")
    rows = []
    gen = key.child(STUDY).generator()
    for i, (a, b) in enumerate(zip(seq.points[:-1], seq.points[1:])):
        row = {"pair": i}
        if closed:
            row["closed_form"] = chi2_gaussian_closed_form(model, a, b)
        if args.method in ("mc", "both"):
            est = chi2_self_normalized_mc(model, a, b, n=args.n, rng=gen)
            row["mc"], row["mc_se"] = est.value, est.std_error
        rows.append(row)
    keyname = "closed_form" if closed else "mc"
    out = {"pairs": rows, "steps": len(seq),
           "max": max((r[keyname] for r in rows), default=0.0),
           "max_consecutive_distance": max_consecutive_distance(seq) if len(seq) > 1 else 0.0}
    print(json.dumps(out, indent=2, default=float))
    return EXIT_OK


def _cmd_tsp(args):
    pts = _read_matrix(args.input)
    if args.metric == "scaled-euclidean":
        if not args.scale:
            raise ConfigurationError("--scale is required for scaled-euclidean")
        metric = DistanceMetric("scaled-euclidean", tuple(args.scale))
    else:
        metric = DistanceMetric()
    order = tsp_path_order(pts, metric, bottleneck=args.bottleneck)
    text = "".join(f"{int(i)}\n" for i in order)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_run(args, kind):
    cfg = _config(args)
    if cfg.method_kind != kind:
        raise ConfigurationError(f"config has a {cfg.method_kind} method block; "
                                 f"use run-{'smc' if cfg.method_kind == 'smc' else 'direct'}")
    threads = resolve_threads(args.threads)
    summary = run_experiment(cfg, threads)
    out = {"output": cfg.output, "estimates": summary["estimates"],
           "wall_time": summary["wall_time"]}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _samples_path(p):
    p = Path(p)
    return p / SAMPLES_FILE if p.is_dir() else p


def _cmd_compare(args):
    _, _, _, ta = read_samples(_samples_path(args.a))
    _, _, _, tb = read_samples(_samples_path(args.b))
    report = compare_runs(ta, tb, args.ks_threshold, args.ed_threshold)
    text = json.dumps(report.as_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_study(args):
    seed = args.seed if args.seed is not None else 0
    sampler = correlated_normal_sampler(args.dim, args.rho, args.scale)
    rand, perm = hamiltonian_study(args.dim, args.n_points, args.n_resamples, args.threshold,
                                   sampler=sampler, rng=seed)
    print(json.dumps({"dim": args.dim, "n_points": args.n_points,
                      "n_resamples": args.n_resamples, "threshold": args.threshold,
                      "fraction_random_exceeds": rand, "fraction_permuted_exceeds": perm},
                     indent=2))
    return EXIT_OK


_COMMANDS = {
    "bounds": _cmd_bounds,
    "chi2": _cmd_chi2,
    "tsp-order": _cmd_tsp,
    "run-smc": lambda a: _cmd_run(a, "smc"),
    "run-direct": lambda a: _cmd_run(a, "direct"),
    "compare": _cmd_compare,
    "study-hamiltonian": _cmd_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", Chi2OverflowWarning)
            return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CutSMCError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
