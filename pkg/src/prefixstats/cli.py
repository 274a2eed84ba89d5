"""Command-line entry point: ``prefixstats <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import McConfig, batch_mc_estimate, make_source
from .condition_space import ConditionDistribution, interval_to_quantiles
from .dynamics import PARAM_FIELDS, as_param_array, generate_dataset, load_dataset, save_dataset
from .errors import InvalidConfig, PrefixStatsError
from .harness import (
    ErrorReport,
    StageError,
    WidthBin,
    diagnostics_report,
    load_model,
    run_experiment,
    width_binned_eval,
    write_gnuplot,
)
from .nn import Checkpoint
from .query import IntervalQuery, interval_statistic, quantile_bisect
from .training import TrainConfig, train_predictor, train_prefix
from .transforms import CdfAt, Quantile, parse_stat, stat_from_dict

log = logging.getLogger("prefixstats")


def _traj_arg(text: str):
    """A trajectory id (int) or inline parameters ``a,b,phi_r,omega0,alpha_spin,phi_omega,phi0``."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        vals = []
    if len(vals) != len(PARAM_FIELDS):
        raise argparse.ArgumentTypeError(f"expected an id or {len(PARAM_FIELDS)} values ({', '.join(PARAM_FIELDS)})")
    return np.array(vals)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset CSV written by gen-data")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--hidden-layers", type=int)


def _trajectory(args) -> np.ndarray:
    if isinstance(args.traj, np.ndarray):
        return args.traj
    if args.data is None:
        raise InvalidConfig("a trajectory id needs --data")
    params, _ = load_dataset(args.data).split(args.split)
    if not 0 <= args.traj < len(params):
        raise InvalidConfig(f"--traj {args.traj} outside the {args.split} split of size {len(params)}")
    return params[args.traj]


def _add_trajectory_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--traj", type=_traj_arg, required=True,
                   help=f"trajectory id in --data, or inline {','.join(PARAM_FIELDS)}")
    p.add_argument("--data", help="dataset CSV holding the trajectory")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--c0", type=float, required=True)
    p.add_argument("--c1", type=float, required=True)
    p.add_argument("--stat", required=True, help="e.g. mean, max:beta=10, quantile:alpha=0.5")


def _add_global_options(p: argparse.ArgumentParser, default) -> None:
    top = default is None
    p.add_argument("--config", default=None if top else default,
                   help="JSON file; its keys become option defaults (for `run`, the experiment config)")
    p.add_argument("--seed", type=int, default=0 if top else default)
    p.add_argument("--out", default="out" if top else default, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=False if top else default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefixstats", description=__doc__)
    _add_global_options(parser, None)
    # the same flags are accepted after the subcommand; SUPPRESS keeps the top-level values otherwise
    common = argparse.ArgumentParser(add_help=False)
    _add_global_options(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_parser = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add_parser(*a, parents=[common], **kw)  # type: ignore[method-assign]

    p = sub.add_parser("gen-data", help="sample trajectories and write the dataset CSV")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--grid", type=int, default=64)

    p = sub.add_parser("train-predictor", help="fit the single-condition energy predictor")
    _add_train_options(p)

    p = sub.add_parser("train-prefix", help="train a prefix network for one statistic family")
    _add_train_options(p)
    p.add_argument("--stat", default="mean")
    p.add_argument("--predictor", help="predictor checkpoint (needed for pretrained-mlp mode)")
    p.add_argument("--predictor-mode", choices=("pretrained-mlp", "analytic-oracle"))
    p.add_argument("--lambda-data", type=float)
    p.add_argument("--delta-s", type=float)
    p.add_argument("--threshold-sampling", choices=("per-step", "per-sample"))

    p = sub.add_parser("query", help="answer one interval query from a prefix checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_trajectory_options(p)
    p.add_argument("--y-bracket", type=_floats, help="ymin,ymax for quantile bisection")

    p = sub.add_parser("baseline", help="Monte Carlo estimate of one interval query")
    _add_trajectory_options(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    p.add_argument("--source", choices=("analytic", "predictor"), default="analytic")
    p.add_argument("--predictor", help="predictor checkpoint for --source predictor")

    p = sub.add_parser("eval", help="width-binned relL2 of a prefix checkpoint and MC baselines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stat", help="defaults to the checkpoint's statistic")
    p.add_argument("--reference", choices=("analytic", "dense"), default="analytic")
    p.add_argument("--mc", type=_ints, default=[10, 100, 400], help="comma-separated K values")
    p.add_argument("--mc-seeds", type=int, default=5)
    p.add_argument("--source", choices=("analytic", "predictor"), default="analytic")
    p.add_argument("--predictor")
    p.add_argument("--widths", type=_floats)
    p.add_argument("--intervals-per-width", type=int, default=8)
    p.add_argument("--n-traj", type=int)

    p = sub.add_parser("diagnose", help="prefix curves against the quadrature prefix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n-traj", type=int, default=4)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--threshold", type=float, help="response level for CDF-family checkpoints")

    p = sub.add_parser("report", help="print a report CSV, optionally emit gnuplot files")
    p.add_argument("report", help="report CSV from eval or run")
    p.add_argument("--gnuplot", action="store_true")

    sub.add_parser("run", help="run the whole pipeline from --config")
    return parser


def _train_config(args, **extra) -> TrainConfig:
    keys = ("epochs", "batch_size", "max_lr", "weight_decay", "hidden_width", "hidden_layers",
            "predictor_mode", "lambda_data", "delta_s", "threshold_sampling")
    d = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return TrainConfig(seed=args.seed, **d, **extra)


def cmd_gen_data(args) -> int:
    ds = generate_dataset(args.n_train, args.n_test, args.grid, args.seed)
    path = save_dataset(ds, Path(args.out) / "dataset.csv")
    print(path)
    return 0


def cmd_train_predictor(args) -> int:
    res = train_predictor(load_dataset(args.data), _train_config(args))
    out = Path(args.out)
    res.report.write_csv(out / "predictor_loss.csv")
    print(res.checkpoint.save(out / "predictor.json"))
    return 0


def cmd_train_prefix(args) -> int:
    ds = load_dataset(args.data)
    predictor = Checkpoint.load(args.predictor).net if args.predictor else None
    cfg = _train_config(args, stat=parse_stat(args.stat))
    res = train_prefix(ds, predictor, cfg)
    out = Path(args.out)
    res.report.write_csv(out / "prefix_loss.csv")
    print(res.checkpoint.save(out / "prefix.json"))
    return 0


def cmd_query(args) -> int:
    model = load_model(args.checkpoint)
    q = IntervalQuery(_trajectory(args), args.c0, args.c1, parse_stat(args.stat))
    if isinstance(q.stat, Quantile):
        res = quantile_bisect(model, q, tuple(args.y_bracket) if args.y_bracket else None)
    else:
        res = interval_statistic(model, q)
    print(res.to_json())
    return 0


def cmd_baseline(args) -> int:
    predictor = norm = None
    if args.source == "predictor":
        if not args.predictor:
            raise InvalidConfig("--source predictor needs --predictor")
        ckpt = Checkpoint.load(args.predictor)
        predictor, norm = ckpt.net, ckpt.normalization
    src = make_source(args.source, predictor, norm)
    iv = interval_to_quantiles(ConditionDistribution(), args.c0, args.c1)
    stat = parse_stat(args.stat)
    p = as_param_array(_trajectory(args))
    seeds = list(range(args.seed, args.seed + args.seeds))
    if not seeds:
        raise InvalidConfig("--seeds must be >= 1")
    values = [float(batch_mc_estimate(src, [p], [iv.s0], [iv.s1], stat, args.k, s)[0]) for s in seeds]
    print(json.dumps({
        "value": float(np.mean(values)),
        "n_evaluations": args.k,
        "s0": iv.s0,
        "s1": iv.s1,
        "per_seed": values,
    }))
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    stat = parse_stat(args.stat) if args.stat else _checkpoint_stat(ckpt)
    predictor = Checkpoint.load(args.predictor).net if args.predictor else None
    seeds = tuple(range(args.seed, args.seed + args.mc_seeds))
    mc = [McConfig(k, seeds, args.source) for k in args.mc]
    bins = WidthBin(args.widths or WidthBin().widths, args.intervals_per_width)
    report = width_binned_eval(model, ds, stat, bins, args.reference, mc, predictor, args.n_traj)
    print(report.write_csv(Path(args.out) / "report.csv"))
    return 0


def _checkpoint_stat(ckpt: Checkpoint):
    return stat_from_dict(ckpt.metadata["stat"])


def cmd_diagnose(args) -> int:
    model = load_model(args.checkpoint)
    stat = CdfAt(args.threshold) if args.threshold is not None else None
    path = Path(args.out) / "diagnostics.csv"
    diagnostics_report(model, load_dataset(args.data), args.n_traj, path, stat=stat, grid=args.grid)
    print(path)
    return 0


def cmd_report(args) -> int:
    report = ErrorReport.read_csv(args.report)
    print(f"{'method':<10} {'width':>6} {'rel_l2':>10} {'se':>10} {'n_eval':>8}")
    for r in report.rows:
        print(f"{r.method:<10} {r.width:>6.2f} {r.rel_l2_mean:>10.4f} {r.rel_l2_se:>10.4f} {r.n_eval_mean:>8.1f}")
    if args.gnuplot:
        for p in write_gnuplot(args.report, args.out):
            print(p)
    return 0


def cmd_run(args) -> int:
    if not args.config:
        raise InvalidConfig("run needs --config")
    manifest = run_experiment(args.config, args.out)
    print(json.dumps(manifest["outputs"], indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-predictor": cmd_train_predictor,
    "train-prefix": cmd_train_prefix,
    "query": cmd_query,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
    "run": cmd_run,
}


GLOBAL_KEYS = ("seed", "out", "config", "verbose")


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Load ``--config`` and use its keys as defaults for every subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or "run" in argv:
        return
    try:
        cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read --config {known.config}: {exc}") from None
    defaults = {k.replace("-", "_"): v for k, v in cfg.items()}
    parser.set_defaults(**{k: v for k, v in defaults.items() if k in GLOBAL_KEYS})
    local = {k: v for k, v in defaults.items() if k not in GLOBAL_KEYS}
    for sp in parser._subparsers._group_actions[0].choices.values():
        sp.set_defaults(**local)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
    except PrefixStatsError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error [{args.command}:{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 2
    except (PrefixStatsError, OSError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
