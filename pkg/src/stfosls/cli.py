"""Command-line experiment driver.

    stfosls run <experiment> [--out DIR] [--config FILE] [key overrides]

Experiments: rb-offline, rb-online, control-1d, control-2d, moving-1d,
moving-2d, selftest.  Each run writes `<experiment>.csv` plus a
`<experiment>.meta` key=value file into the output directory.  A config
file holds `key=value` lines; command-line flags override it.
"""

import argparse
import datetime
import os
import sys
import time
from pathlib import Path

EXPERIMENTS = ("rb-offline", "rb-online", "control-1d", "control-2d",
               "moving-1d", "moving-2d", "selftest")

DEFAULTS = {
    "rb-offline": {"truth_n": 64, "train_n": 17, "eps_tol": 1e-3,
                   "n_max": 50, "end_time": 0.3},
    "rb-online": {"truth_n": 64, "train_n": 17, "eps_tol": 1e-3,
                  "n_max": 50, "end_time": 0.3, "points": 11},
    "control-1d": {"levels": 9, "rho": 0.01, "solver": "direct"},
    "control-2d": {"levels": 5, "rho": 0.01, "solver": "direct"},
    "moving-1d": {"levels": 8, "solver": "direct"},
    "moving-2d": {"levels": 5, "solver": "direct"},
    "selftest": {},
}

_INT_KEYS = {"truth_n", "train_n", "n_max", "levels", "points", "seed",
             "threads"}
_FLOAT_KEYS = {"eps_tol", "rho", "end_time"}


def _parse_value(key, value):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def _load_config(path):
    cfg = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def _write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _fmt(x):
    import numpy as np

    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_meta(path, experiment, params, extra):
    lines = [f"experiment={experiment}",
             f"timestamp={datetime.datetime.now().isoformat()}"]
    lines += [f"{k}={v}" for k, v in sorted(params.items())]
    lines += [f"{k}={v}" for k, v in extra.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_run(args):
    if args.experiment not in EXPERIMENTS:
        print(f"unknown experiment {args.experiment!r}; choose from "
              f"{', '.join(EXPERIMENTS)}", file=sys.stderr)
        return 2
    params = dict(DEFAULTS[args.experiment])
    if args.config:
        for k, v in _load_config(args.config).items():
            if k in params or k in ("seed", "threads"):
                params[k] = _parse_value(k, v)
    for item in args.set or []:
        key, _, value = item.partition("=")
        params[key] = _parse_value(key, value)
    if args.levels is not None:
        params["levels"] = args.levels
    if args.eps_tol is not None:
        params["eps_tol"] = args.eps_tol
    if args.rho is not None:
        params["rho"] = args.rho
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    if args.experiment == "selftest":
        from .selftest import run_selftest
        failures = run_selftest()
        _write_meta(outdir / "selftest.meta", "selftest", params,
                    {"failures": failures, "wall_s": f"{time.time()-t0:.3f}"})
        return 1 if failures else 0

    from . import experiments as X

    if args.experiment in ("control-1d", "control-2d"):
        d = 1 if args.experiment.endswith("1d") else 2
        rows = X.run_control_experiment(
            d, params["levels"], rho=params["rho"], method=params["solver"],
            progress=lambda lvl, r: print(
                f"level {lvl}: ndof {r['ndof']} err_U {r['err_U']:.4e} "
                f"[{r['wall_s']:.1f}s]", flush=True))
        name = args.experiment.replace("-", "_")
        _write_csv(outdir / f"{name}.csv", X.CONTROL_COLUMNS, rows)
        extra = {"ndof_per_level": " ".join(str(r["ndof"]) for r in rows),
                 "wall_s": f"{time.time()-t0:.3f}"}
        _write_meta(outdir / f"{name}.meta", args.experiment, params, extra)
        return 0

    if args.experiment in ("moving-1d", "moving-2d"):
        d = 1 if args.experiment.endswith("1d") else 2
        rows = X.run_moving_experiment(
            d, params["levels"], method=params["solver"],
            progress=lambda lvl, r: print(
                f"level {lvl}: ndof {r['ndof']} est {r['est']:.4e} "
                f"[{r['wall_s']:.1f}s]", flush=True))
        name = args.experiment.replace("-", "_")
        _write_csv(outdir / f"{name}.csv", X.MOVING_COLUMNS, rows)
        extra = {"ndof_per_level": " ".join(str(r["ndof"]) for r in rows),
                 "wall_s": f"{time.time()-t0:.3f}"}
        _write_meta(outdir / f"{name}.meta", args.experiment, params, extra)
        return 0

    if args.experiment == "rb-offline":
        model, rows = X.run_rb_offline(
            truth_n=params["truth_n"], train_n=params["train_n"],
            eps_tol=params["eps_tol"], n_max=params["n_max"],
            end_time=params["end_time"], verbose=True)
        _write_csv(outdir / "rb_offline.csv", ("N", "maxtrain"), rows)
        model.save(outdir / "rb_model")
        _write_meta(outdir / "rb_offline.meta", "rb-offline", params,
                    {"N": model.N, "truth_ndof": model.basis.shape[0],
                     "wall_s": f"{time.time()-t0:.3f}"})
        return 0

    if args.experiment == "rb-online":
        from .reduced_basis import (benchmark_problem, benchmark_truth_space,
                                    expand_forms, load_model)
        problem = benchmark_problem(params["end_time"])
        space = benchmark_truth_space(params["truth_n"], params["end_time"])
        model_dir = outdir / "rb_model"
        if model_dir.exists():
            forms = expand_forms(problem, space)
            model = load_model(model_dir, problem, space, forms)
            print(f"loaded reduced model N={model.N} from {model_dir}")
        else:
            print("no persisted model found; running the offline phase first")
            model, rows = X.run_rb_offline(
                truth_n=params["truth_n"], train_n=params["train_n"],
                eps_tol=params["eps_tol"], n_max=params["n_max"],
                end_time=params["end_time"], verbose=True)
            _write_csv(outdir / "rb_offline.csv", ("N", "maxtrain"), rows)
            model.save(model_dir)
        rows = X.run_rb_online(model, problem, space,
                               n_points=params["points"])
        cols = ("mu1", "est_mu1", "err_mu1", "mu2", "est_mu2", "err_mu2")
        _write_csv(outdir / "rb_online.csv", cols, rows)
        _write_meta(outdir / "rb_online.meta", "rb-online", params,
                    {"wall_s": f"{time.time()-t0:.3f}"})
        return 0

    raise AssertionError("unreachable")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stfosls",
        description="space-time FOSLS experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one experiment")
    runp.add_argument("experiment", help=f"one of: {', '.join(EXPERIMENTS)}")
    runp.add_argument("--out", default="results", help="output directory")
    runp.add_argument("--config", help="key=value config file")
    runp.add_argument("--levels", type=int, help="refinement levels")
    runp.add_argument("--eps-tol", type=float, dest="eps_tol",
                      help="greedy tolerance")
    runp.add_argument("--rho", type=float, help="control regularization")
    runp.add_argument("--threads", type=int,
                      help="cap BLAS/OpenMP worker threads")
    runp.add_argument("--set", action="append", metavar="KEY=VALUE",
                      help="override any experiment parameter")
    runp.set_defaults(func=cmd_run)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
