"""Command-line front end.

    shrinktm simulate --design lr --grid 30x30 --n 10 --seed 1 --out run/
    shrinktm fit --data run/data.csv --locs run/locations.csv --method shrinktm --out run/model.stm
    shrinktm sample --model run/model.stm --n 5 --seed 2 --svg
    shrinktm score --model run/model.stm --data test.csv
    shrinktm experiment --design lr --methods shrinktm,simpletm,matcov --ns 1,2,5,10 --reps 10

Every subcommand accepts ``--config FILE`` with ``key = value`` lines naming
long flags (``iters = 500``); explicit flags win over the file, the file wins
over built-in defaults. Exit status: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .basegauss import BaseFamily
from .geometry import maximin_order
from .io import DataError, load_any, read_data, read_locations, save_gaussian, save_model, write_data, \
    write_locations
from .optimize import PROTOCOL, OptimizerConfig, fit, initial_hyperparams
from .score import METHODS, METRICS, CompareConfig, GaussianModel, compare, fit_method, log_scores, \
    write_results
from .simulate import DESIGNS, SimDesign, simulate
from .svg import symmetric_limit, write_panels

log = logging.getLogger("shrinktm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> tuple:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 30x30, got {text!r}") from None
    if nx < 1 or ny < 1 or nx * ny < 2:
        raise argparse.ArgumentTypeError("grid needs at least two points")
    return nx, ny


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("expected non-negative integers")
    return vals


def _choices_list(allowed):
    def parse(text: str) -> list[str]:
        vals = [v.strip() for v in text.split(",") if v.strip()]
        bad = [v for v in vals if v not in allowed]
        if bad or not vals:
            raise argparse.ArgumentTypeError(f"choose from {','.join(allowed)}; got {text!r}")
        return vals
    return parse


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="worker processes for replications (default 1)")
    p.add_argument("--config", metavar="FILE", help="key=value file of flag defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _optimizer_flags(p: argparse.ArgumentParser, iters: int, lr: float):
    p.add_argument("--iters", type=_positive_int, default=iters, help=f"Adam iterations (default {iters})")
    p.add_argument("--lr", type=float, default=lr, help=f"initial learning rate (default {lr})")
    p.add_argument("--lr-floor", type=float, default=0.0, help="cosine-annealing floor (default 0)")
    p.add_argument("--gradient", choices=("analytic", "fd"), default="analytic",
                   help="gradient mode (default analytic)")
    p.add_argument("--init-base", choices=("default", "matcov"), default="matcov",
                   help="start the base covariance at fixed defaults or at its MLE (default matcov)")
    p.add_argument("--freeze-base-below", type=_nonneg_int, default=2,
                   help="hold base parameters fixed when fewer replicates are given (default 2)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="shrinktm", description="Bayesian transport maps for spatial fields.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate fields on a grid")
    p.add_argument("--design", choices=DESIGNS, default="lr", help="generating design (default lr)")
    p.add_argument("--grid", type=_grid, default=(30, 30), help="grid size NXxNY (default 30x30)")
    p.add_argument("--n", type=_nonneg_int, default=10, help="number of replicates (default 10)")
    p.add_argument("--amplitude", type=float, default=2.0, help="sine amplitude for nr (default 2)")
    p.add_argument("--frequency", type=float, default=4.0, help="sine frequency for nr (default 4)")
    p.add_argument("--variance", type=float, default=1.0, help="covariance variance (default 1)")
    p.add_argument("--range", type=float, default=0.3, help="covariance range (default 0.3)")
    p.add_argument("--smoothness", type=float, default=0.5,
                   help="Matern smoothness; 0.5 is exponential (default 0.5)")
    p.add_argument("--out", default=".", help="output directory (default .)")
    _common(p)

    p = sub.add_parser("fit", help="fit a map (or a Matern model) to data")
    p.add_argument("--data", required=True, help="data CSV: one row per replicate, columns = location ids")
    p.add_argument("--locs", required=True, help="locations CSV: id,x[,y[,z]]")
    p.add_argument("--method", choices=METHODS, default="shrinktm", help="model (default shrinktm)")
    p.add_argument("--kind", choices=("matern", "exponential"), default="matern",
                   help="base covariance family (default matern)")
    p.add_argument("--init-from", metavar="MODEL", help="start from the hyperparameters of a saved model")
    p.add_argument("--out", default="model.stm", help="model file (default model.stm)")
    p.add_argument("--trace", help="trace CSV (default: model path + .trace.csv)")
    _optimizer_flags(p, 200, 0.01)
    _common(p)

    p = sub.add_parser("sample", help="draw (conditional) samples from a saved model")
    p.add_argument("--model", required=True, help="model file written by fit")
    p.add_argument("--n", type=_nonneg_int, default=5, help="number of samples (default 5)")
    p.add_argument("--condition-on", metavar="CSV", help="data CSV whose first row is the conditioning field")
    p.add_argument("--observed-k", type=_nonneg_int, default=100,
                   help="ordered locations held at the conditioning field (default 100)")
    p.add_argument("--out", default="samples.csv", help="samples CSV (default samples.csv)")
    p.add_argument("--svg", action="store_true", help="also write one heatmap per sample")
    _common(p)

    p = sub.add_parser("score", help="log-scores of a saved model on held-out fields")
    p.add_argument("--model", required=True, help="model file written by fit")
    p.add_argument("--data", required=True, help="held-out data CSV")
    p.add_argument("--out", default="scores.csv", help="results CSV (default scores.csv)")
    _common(p)

    p = sub.add_parser("experiment", help="compare methods over training sizes and replications")
    p.add_argument("--design", choices=DESIGNS, default="lr", help="generating design (default lr)")
    p.add_argument("--grid", type=_grid, default=(30, 30), help="grid size (default 30x30)")
    p.add_argument("--methods", type=_choices_list(METHODS), default=list(METHODS),
                   help="comma-separated methods (default all)")
    p.add_argument("--ns", type=_int_list, default=[1, 2, 5, 10], help="training sizes (default 1,2,5,10)")
    p.add_argument("--reps", type=_positive_int, default=10, help="replications (default 10)")
    p.add_argument("--n-test", type=_positive_int, default=20, help="held-out fields (default 20)")
    p.add_argument("--metrics", type=_choices_list(METRICS), default=["logscore"],
                   help="comma-separated metrics (default logscore)")
    p.add_argument("--rmse-k", type=_positive_int, help="observed prefix for rmse (default N/5)")
    p.add_argument("--amplitude", type=float, default=2.0, help="sine amplitude for nr (default 2)")
    p.add_argument("--frequency", type=float, default=4.0, help="sine frequency for nr (default 4)")
    p.add_argument("--out", default="results.csv", help="results CSV (default results.csv)")
    _optimizer_flags(p, PROTOCOL.iterations, PROTOCOL.lr)
    _common(p)
    return ap


# -- config file --------------------------------------------------------------
def read_config(path) -> dict:
    out = {}
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{k}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv):
    """Re-parse with config-file values installed as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        values = read_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if act.nargs == 0:  # store_true
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            val = act.type(raw) if act.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config {key}: {exc}") from None
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"config {key}: {raw!r} not in {sorted(act.choices)}")
        defaults[key] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- commands -----------------------------------------------------------------
def _optimizer(args) -> OptimizerConfig:
    try:
        return OptimizerConfig(lr=args.lr, iterations=args.iters, lr_floor=args.lr_floor,
                               gradient=args.gradient, seed=args.seed, init_base=args.init_base,
                               freeze_base_below=args.freeze_base_below)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    family = BaseFamily.create("matern", variance=args.variance, range=args.range, smoothness=args.smoothness)
    if args.smoothness == 0.5:
        family = BaseFamily.create("exponential", variance=args.variance, range=args.range)
    design = SimDesign(kind=args.design, grid=args.grid, family=family, amplitude=args.amplitude,
                       frequency=args.frequency, seed=args.seed)
    sim = simulate(design, args.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_locations(out / "locations.csv", sim.ids, sim.coords)
    write_data(out / "data.csv", sim.ids, sim.y_original)
    print(f"wrote {out / 'locations.csv'} and {out / 'data.csv'} ({args.n} x {len(sim.ids)})")
    return EXIT_OK


def cmd_fit(args) -> int:
    ids, coords = read_locations(args.locs)
    _, y = read_data(args.data, ids)
    if y.shape[0] < 1:
        raise DataError(f"{args.data}: no replicates")
    cfg = _optimizer(args)
    t0 = time.perf_counter()
    if args.method == "matcov":
        ordering = maximin_order(coords)
        model = fit_method("matcov", ordering.to_ordered(y), ordering, CompareConfig(matcov_kind=args.kind))
        loglik = float(np.sum(model.log_density(ordering.to_ordered(y))))
        save_gaussian(args.out, model.family, ordering, ids, loglik)
        fam = model.family
        print(f"matcov: variance={fam.variance:.6g} range={fam.range:.6g} smoothness={fam.smoothness:.6g} "
              f"loglik={loglik:.6f}")
        print(f"wrote {args.out} ({time.perf_counter() - t0:.1f}s)")
        return EXIT_OK
    init = initial_hyperparams(args.method, args.kind)
    if args.init_from:
        prev, meta = load_any(args.init_from)
        if not hasattr(prev, "hp") or prev.hp.mode != args.method:
            raise DataError(f"{args.init_from}: not a {args.method} model")
        init = prev.hp
        cfg = replace(cfg, init_base="default")  # keep the saved base parameters
    ordering = maximin_order(coords, m_max=init.m_max)
    res = fit(ordering.to_ordered(y), ordering, cfg, init, args.method)
    save_model(args.out, res.map, ids, args.method)
    trace = args.trace or f"{args.out}.trace.csv"
    res.trace.write_csv(trace)
    print(f"{args.method}: objective={res.objective:.6f} iterations={len(res.trace)} "
          f"m'={res.hp.m_prime} ({time.perf_counter() - t0:.1f}s)")
    print(f"wrote {args.out} and {trace}")
    return EXIT_OK


def _conditioning(args, model, ids):
    _, field = read_data(args.condition_on, ids)
    if field.shape[0] < 1:
        raise DataError(f"{args.condition_on}: no field to condition on")
    if args.observed_k > model.size:
        raise UsageError(f"--observed-k {args.observed_k} exceeds N={model.size}")
    return model.ordering.to_ordered(field[0])[:args.observed_k]


def cmd_sample(args) -> int:
    model, meta = load_any(args.model)
    ids = meta["ids"]
    rng = np.random.default_rng(args.seed)
    observed = _conditioning(args, model, ids) if args.condition_on else np.zeros(0)
    if args.n == 0:
        draws = np.zeros((0, model.size))
    elif isinstance(model, GaussianModel):
        draws = model.conditional_sample(observed, args.n, rng)
    else:
        draws = model.conditional_inverse(rng.standard_normal((args.n, model.size)), observed)
    if not np.all(np.isfinite(draws)):
        raise FloatingPointError("non-finite samples")
    original = model.ordering.to_original(draws)
    write_data(args.out, ids, original)
    print(f"wrote {args.out} ({args.n} samples)")
    if args.svg and args.n:
        coords = model.ordering.to_original_coords()
        if coords.shape[1] != 2:
            raise UsageError("--svg needs 2-D locations")
        train = getattr(model, "y", None)
        limit = symmetric_limit(train if train is not None and train.size else draws)
        prefix = os.path.splitext(args.out)[0]
        paths = write_panels(prefix, coords, original, limit)
        print(f"wrote {len(paths)} heatmaps {prefix}_*.svg")
    return EXIT_OK


def cmd_score(args) -> int:
    model, meta = load_any(args.model)
    ids = meta["ids"]
    _, y = read_data(args.data, ids)
    if y.shape[0] < 1:
        raise DataError(f"{args.data}: no fields to score")
    t0 = time.perf_counter()
    scores = log_scores(model, model.ordering.to_ordered(y))
    secs = time.perf_counter() - t0
    method = meta.get("method", "shrinktm")
    n = getattr(model, "n", 0)
    rows = []
    for r, s in enumerate(scores):
        base = {"method": method, "n": n, "replication": r, "seed": args.seed, "seconds": secs / len(scores)}
        rows.append({**base, "metric": "logscore", "value": float(s)})
        rows.append({**base, "metric": "logscore_per_location", "value": float(s) / model.size})
    write_results(rows, args.out)
    print(f"mean log-score {np.mean(scores):.4f} over {len(scores)} fields; wrote {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    design = SimDesign(kind=args.design, grid=args.grid, amplitude=args.amplitude, frequency=args.frequency,
                       seed=args.seed)
    cfg = CompareConfig(n_test=args.n_test, optimizer=_optimizer(args), rmse_k=args.rmse_k)
    if 0 in args.ns:
        raise UsageError("training sizes must be at least 1")

    def progress(row):
        log.info("%s n=%d rep=%d %s=%.4f", row["method"], row["n"], row["replication"], row["metric"],
                 row["value"])

    rows = compare(design, args.methods, args.ns, args.reps, args.seed, cfg, progress,
                   metrics=args.metrics, workers=args.threads)
    write_results(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "sample": cmd_sample, "score": cmd_score,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        first = parser.parse_args(argv)
        if first.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        sub = parser._subparsers._group_actions[0].choices[first.command]
        args = _apply_config(parser, sub, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"shrinktm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError) as exc:
        print(f"shrinktm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        if str(exc).startswith("degenerate"):
            print(f"shrinktm: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"shrinktm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"shrinktm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
