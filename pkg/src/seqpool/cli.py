"""Command-line front-end.

Subcommands: simulate, run, diagnose, oracle.  Exit codes: 0 success,
2 configuration error, 3 numerical-fatal.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .errors import ConfigError, NumericalError
from .model import load_model_file, read_dataset, simulate, write_dataset
from .oracle import grid_hmm_posterior, kalman_smoother


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqpool", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="simulate a dataset from a model file")
    ps.add_argument("--model", required=True, help="model YAML file")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--seed", type=int, default=None, help="override the model file's seed")

    pr = sub.add_parser("run", help="run a sampler schedule on a dataset")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True, help="dataset CSV (from 'simulate')")
    pr.add_argument("--schedule", required=True, help="schedule YAML file")
    pr.add_argument("--iters", type=int, required=True)
    pr.add_argument("--seed", required=True, help="comma-separated chain seeds, e.g. 1,2,3")
    pr.add_argument("--thin", type=int, default=1)
    pr.add_argument("--out", required=True, help="output directory (one run_seed<S> subdir per seed)")
    pr.add_argument("--format", choices=("csv", "bin"), default="csv")
    pr.add_argument("--init", default=None, help="override schedule init: zeros | ones | prior | number")

    pd = sub.add_parser("diagnose", help="autocorrelation-time report over completed runs")
    pd.add_argument("--runs", required=True, help="comma-separated run directories")
    pd.add_argument("--vars", default="all", help='"all" or comma list like x[1][300]')
    pd.add_argument("--burn-in", type=float, default=0.10)
    pd.add_argument("--rule", choices=("threshold", "initial-positive"), default="threshold")
    pd.add_argument("--threshold", type=float, default=0.01)
    pd.add_argument("--out", required=True, help="report path prefix (writes .json and .csv)")
    pd.add_argument("--trace", default=None, help="also export a trace CSV for this variable")

    po = sub.add_parser("oracle", help="exact posterior summaries for debugging")
    po.add_argument("--model", required=True)
    po.add_argument("--data", required=True)
    po.add_argument("--method", choices=("kalman", "grid"), required=True)
    po.add_argument("--grid-points", type=int, default=2000)
    po.add_argument("--out", required=True, help="output CSV of per-time means/variances")
    return p


def _cmd_simulate(args) -> int:
    spec, file_seed = load_model_file(args.model)
    seed = file_seed if args.seed is None else args.seed
    x, y = simulate(spec, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "data.csv", x, y)
    with open(out / "simulate_meta.json", "w") as f:
        json.dump({"model": str(args.model), "seed": seed, "n": spec.n, "P": spec.P}, f, indent=2)
    print(f"wrote {out / 'data.csv'} ({spec.n} x {spec.P}, seed {seed})")
    return 0


def _cmd_run(args) -> int:
    spec, _ = load_model_file(args.model)
    with open(args.model) as f:
        import yaml

        model_echo = yaml.safe_load(f)
    _, y = read_dataset(args.data, spec)
    schedule, init = experiment.load_schedule_file(args.schedule)
    if args.init is not None:
        init = args.init
    seeds = [int(s) for s in str(args.seed).split(",") if s.strip()]
    config = experiment.ExperimentConfig(
        spec=spec,
        y=y,
        schedule=schedule,
        iterations=args.iters,
        seeds=seeds,
        out_dir=Path(args.out),
        thin=args.thin,
        sample_format=args.format,
        init=init,
        model_echo=model_echo,
    )
    results = experiment.run_experiment(config)
    failed = {s: m for s, (st, m) in results.items() if st != "ok"}
    for s in sorted(results):
        st, msg = results[s]
        print(f"seed {s}: {st}" + (f" ({msg})" if msg else ""))
    if failed:
        print(f"{len(failed)} of {len(results)} seeds failed numerically", file=sys.stderr)
        return 3
    return 0


def _cmd_diagnose(args) -> int:
    run_dirs = [d for d in args.runs.split(",") if d.strip()]
    report = experiment.diagnose(
        run_dirs,
        variables=args.vars,
        burn_in_frac=args.burn_in,
        rule=args.rule,
        threshold=args.threshold,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(out.with_suffix(".json"))
    report.to_csv(out.with_suffix(".csv"))
    if args.trace:
        trace_path = out.parent / f"trace_{args.trace.replace('[', '_').replace(']', '')}.csv"
        experiment.export_trace(run_dirs, args.trace, trace_path)
        print(f"wrote {trace_path}")
    finite = report.act[np.isfinite(report.act)]
    summary = f"median act {np.median(finite):.3g}" if finite.size else "no finite act values"
    print(f"wrote {out.with_suffix('.json')} and {out.with_suffix('.csv')} ({summary})")
    return 0


def _cmd_oracle(args) -> int:
    spec, _ = load_model_file(args.model)
    _, y = read_dataset(args.data, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.method == "kalman":
        res = kalman_smoother(spec, y)
        with open(out, "w") as f:
            f.write("t,dim,mean,var\n")
            for i in range(spec.n):
                for j in range(spec.P):
                    f.write(f"{i + 1},{j + 1},{res.means[i, j]!r},{res.covariances[i, j, j]!r}\n")
        print(f"wrote {out} (loglik {res.loglik:.6f})")
    else:
        post = grid_hmm_posterior(spec, y, points=args.grid_points)
        mean, var = post.mean(), post.var()
        with open(out, "w") as f:
            f.write("t,dim,mean,var\n")
            for i in range(spec.n):
                f.write(f"{i + 1},1,{mean[i]!r},{var[i]!r}\n")
        print(f"wrote {out} (loglik {post.loglik:.6f})")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "run": _cmd_run,
        "diagnose": _cmd_diagnose,
        "oracle": _cmd_oracle,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
