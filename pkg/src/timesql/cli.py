"""Command-line entry point: ``timesql <subcommand> [--config FILE] [--seed N] [--a.b value ...]``.

Unrecognised ``--dotted.path value`` flags override leaf fields of the JSON
config. Exit codes: 0 success, 1 runtime error (missing run, bad data, failed
theorem check), 2 configuration error, 3 every arm diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from timesql import experiments as ex
from timesql import theory
from timesql.config import ConfigError, load_config, parse_overrides
from timesql.data import TrigSpec, dataset_stats, generate_trig, write_csv
from timesql.training import TrainingDivergence

log = logging.getLogger("timesql")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _config(args, extra: list[str]):
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    return load_config(args.config, overrides)


def _finish(out_dir: Path, cfg, command: str, outputs: list[Path]) -> None:
    ex.write_manifest(out_dir, cfg, command, [p.name for p in outputs])
    for p in outputs:
        print(p)


def _all_diverged(rows: list[dict]) -> bool:
    return bool(rows) and all(r["status"] != "ok" for r in rows)


def cmd_simulate(args, cfg) -> int:
    out = cfg.output_dir
    rows = ex.run_simulation_suite(cfg)
    fields = ["noise_std", "arm", "seed", "loss_choice", "horizon", "test_mse", "test_mae", "best_epoch", "initial_mse", "status"]
    files = [ex.write_rows(out / "simulation.csv", rows, fields)]
    summary = ex.summarize(rows, ("noise_std", "arm"))
    files.append(ex.write_rows(out / "simulation_summary.csv", summary))
    files.append(ex.write_plot_rows(out / "plot_simulation.csv", ex.simulation_rows(out)))
    _finish(out, cfg, "simulate", files)
    print(ex.format_grid(summary, row_key="noise_std"))
    return EXIT_DIVERGED if _all_diverged(rows) else EXIT_OK


def cmd_ablate(args, cfg) -> int:
    out = cfg.output_dir
    arms, horizons = cfg.arms, None
    if args.preset == "loss":
        arms = ex.loss_ablation_arms()
    elif args.preset == "patching":
        arms = ex.patching_ablation_arms(cfg)
    elif args.preset == "horizon":
        arms, horizons = ex.horizon_sweep_arms(), [4, 8, 16, 32]
    rows = ex.run_ablation(cfg, arms, horizons)
    fields = ["arm", "horizon", "seed", "loss_choice", "test_mse", "test_mae", "best_epoch", "initial_mse", "status"]
    files = [ex.write_rows(out / "ablation.csv", rows, fields)]
    summary = ex.summarize(rows, ("horizon", "arm"))
    files.append(ex.write_rows(out / "ablation_summary.csv", summary))
    _finish(out, cfg, f"ablate --preset {args.preset}", files)
    print(ex.format_grid(summary))
    return EXIT_DIVERGED if _all_diverged(rows) else EXIT_OK


def cmd_train(args, cfg) -> int:
    out = cfg.output_dir
    try:
        metrics = ex.train_run(cfg, out)
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _finish(out, cfg, "train", [out / "model.json", out / "model.npy", out / "history.jsonl", out / "metrics.json"])
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    run_dir = Path(args.run) if args.run else cfg.output_dir
    metrics = ex.evaluate_run(cfg, run_dir)
    path = ex.write_json(run_dir / "evaluation.json", metrics)
    print(path)
    print(json.dumps({k: metrics[k] for k in ("mse", "mae")}, indent=2))
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    seed = cfg.seeds[0]
    t1 = theory.verify_value_bound(args.samples, seed)
    t2 = theory.verify_gradient_bound(args.samples, seed)
    report = {
        "value_bound": {
            "samples": t1.samples,
            "violations": t1.violations,
            "worst_ratio": t1.worst_ratio,
            "ratio_identity_max_error": t1.ratio_identity_max_error,
            "seed": seed,
        },
        "gradient_bound": {
            "samples": t2.samples,
            "violations": t2.violations,
            "worst_margin": t2.worst_margin,
            "strata": t2.strata,
            "outside_exceedances": t2.outside_exceedances,
            "outside_example": t2.outside_example,
            "seed": seed,
        },
    }
    path = ex.write_json(cfg.output_dir / "theorems.json", report)
    ex.write_manifest(cfg.output_dir, cfg, "verify-theorems", [path.name])
    print(json.dumps(report, indent=2))
    ok = t1.violations == 0 and t2.violations == 0
    return EXIT_OK if ok else EXIT_ERROR


def cmd_gen_data(args, cfg) -> int:
    if args.spec:
        spec = TrigSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        if cfg.dataset_kind() != "trig":
            raise ConfigError("gen-data needs a trig dataset in the config or --spec")
        spec = cfg.trig_spec(cfg.seeds[0])
    out = cfg.output_dir
    files = [write_csv(out / "data.csv", generate_trig(spec)), ex.write_json(out / "trig_spec.json", spec.to_dict())]
    _finish(out, cfg, "gen-data", files)
    return EXIT_OK


def cmd_stats(args, cfg) -> int:
    series = ex.load_series(cfg, cfg.seeds[0])
    stats = dataset_stats(series)
    path = ex.write_json(cfg.output_dir / "stats.json", stats)
    print(path)
    print(json.dumps({k: stats[k] for k in ("num_features", "num_samples")}))
    return EXIT_OK


def cmd_plot_data(args, cfg) -> int:
    run_dir = Path(args.run) if args.run else cfg.output_dir
    if args.kind == "loss-curves":
        rows = ex.loss_curve_rows(c=args.c if args.c is not None else cfg.train.hp.c)
    elif args.kind == "history":
        rows = ex.history_rows(run_dir)
    elif args.kind == "simulation":
        rows = ex.simulation_rows(run_dir)
    else:
        rows = ex.prediction_rows(cfg, run_dir, args.window, args.variable)
    path = ex.write_plot_rows(cfg.output_dir / f"plot_{args.kind.replace('-', '_')}.csv", rows)
    print(path)
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "noise-level x loss grid on synthetic sinusoids"),
    "ablate": (cmd_ablate, "per-arm MSE/MAE table (loss terms, patching scales, horizons)"),
    "train": (cmd_train, "train one model and save a checkpoint"),
    "evaluate": (cmd_evaluate, "score a saved checkpoint on the test split"),
    "verify-theorems": (cmd_verify, "Monte-Carlo check of the noise-effect inequalities"),
    "gen-data": (cmd_gen_data, "write a synthetic sinusoid dataset as CSV"),
    "stats": (cmd_stats, "dataset statistics"),
    "plot-data": (cmd_plot_data, "export long-format series for external plotting"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timesql", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults are used for missing fields)")
        p.add_argument("--seed", type=int, help="run with this single seed")
        if name == "ablate":
            p.add_argument("--preset", choices=ex.ABLATION_PRESETS + ("config",), default="config")
        if name in ("evaluate", "plot-data"):
            p.add_argument("--run", help="run directory (defaults to output_dir)")
        if name == "verify-theorems":
            p.add_argument("--samples", type=int, default=1_000_000)
        if name == "gen-data":
            p.add_argument("--spec", help="TrigSpec JSON document")
        if name == "plot-data":
            p.add_argument("--kind", choices=("loss-curves", "history", "simulation", "prediction"), default="loss-curves")
            p.add_argument("--c", type=float, help="kernel width for loss curves")
            p.add_argument("--window", type=int, default=0)
            p.add_argument("--variable", type=int, default=0)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args, extra)
        return COMMANDS[args.command][0](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
