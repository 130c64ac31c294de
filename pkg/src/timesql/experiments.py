"""Simulation suite, ablations, single runs and plot-data export.

Every cell (noise level x arm x seed, or arm x horizon x seed) is trained
from the same seed-derived initialization and batch order as its siblings,
so differences between arms come from the varied factor alone.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from timesql import losses
from timesql.config import Arm, ExperimentConfig
from timesql.data import StandardScaler, generate_trig, load_csv
from timesql.model import ModelParams, init_params, load_checkpoint, save_checkpoint
from timesql.training import TrainingDivergence, evaluate, predict_batched, train
from timesql.types import SeriesMatrix, split_series, window_arrays

log = logging.getLogger(__name__)

PLOT_HEADER = ("series_name", "x", "y")


@dataclass
class PreparedData:
    train: SeriesMatrix
    val: Optional[SeriesMatrix]
    test: SeriesMatrix
    scaler: Optional[StandardScaler]


def load_series(cfg: ExperimentConfig, seed: int, noise_std: Optional[float] = None) -> SeriesMatrix:
    if cfg.dataset_kind() == "trig":
        return generate_trig(cfg.trig_spec(seed, noise_std))
    path, opts = cfg.csv_source()
    return load_csv(path, opts)


def prepare(cfg: ExperimentConfig, seed: int, noise_std: Optional[float] = None) -> PreparedData:
    """Split, then z-score every split with statistics from the training split."""
    series = load_series(cfg, seed, noise_std)
    train_s, val_s, test_s = split_series(series, cfg.split)
    scaler = None
    if cfg.standardize:
        scaler = StandardScaler.fit(train_s)
        train_s = scaler.transform(train_s)
        val_s = scaler.transform(val_s) if val_s is not None else None
        test_s = scaler.transform(test_s)
    return PreparedData(train_s, val_s, test_s, scaler)


def run_cell(
    cfg: ExperimentConfig,
    data: PreparedData,
    arm: Optional[Arm],
    seed: int,
    horizon: Optional[int] = None,
    history_path: Optional[Path] = None,
    raise_divergence: bool = False,
) -> dict:
    """Train one arm on prepared data and score it on the test split.

    Divergence is reported in ``status`` unless ``raise_divergence``.
    """
    horizon = cfg.horizon if horizon is None else horizon
    arch = cfg.architecture(data.train.num_variables, arm, horizon)
    tc = cfg.arm_train_config(arm, seed)
    x, y = window_arrays(data.train, cfg.lookback, horizon, cfg.window_stride)
    xv = yv = None
    if data.val is not None and len(data.val) >= cfg.lookback + horizon:
        xv, yv = window_arrays(data.val, cfg.lookback, horizon, cfg.eval_stride)
    xt, yt = window_arrays(data.test, cfg.lookback, horizon, cfg.eval_stride)
    params = init_params(arch, seed)
    row = {"arm": arm.name if arm else "base", "seed": seed, "horizon": horizon, "loss_choice": tc.loss_choice}
    try:
        result = train(params, x, y, tc, xv, yv, history_path=history_path)
    except TrainingDivergence as exc:
        if raise_divergence:
            raise
        log.warning("arm %s seed %d diverged: %s", row["arm"], seed, exc)
        row.update(status=f"diverged: {exc}", test_mse=math.nan, test_mae=math.nan, best_epoch=None)
        return row
    m = evaluate(result.params, xt, yt)
    row.update(
        status="ok",
        test_mse=m.mse,
        test_mae=m.mae,
        best_epoch=result.best_epoch,
        initial_mse=result.initial_mse,
        params=result.params,
        history=result.history,
    )
    return row


def _public(row: dict) -> dict:
    return {k: v for k, v in row.items() if k not in ("params", "history")}


def run_simulation_suite(
    cfg: ExperimentConfig,
    noise_stds: Optional[Iterable[float]] = None,
    seeds: Optional[Iterable[int]] = None,
    arms: Optional[list[Arm]] = None,
) -> list[dict]:
    """Noise level x arm x seed grid on synthetic sinusoids, scored on the clean test suffix."""
    if cfg.dataset_kind() != "trig":
        raise ValueError("the simulation suite needs a trig dataset")
    arms = cfg.arms if arms is None else arms
    if len(arms) < 2:
        raise ValueError("the simulation suite compares at least two arms")
    rows = []
    for std in cfg.noise_stds if noise_stds is None else noise_stds:
        for seed in cfg.seeds if seeds is None else seeds:
            data = prepare(cfg, seed, std)
            for arm in arms:
                row = _public(run_cell(cfg, data, arm, seed))
                row["noise_std"] = std
                log.info("std=%s seed=%s arm=%s mse=%.6g", std, seed, arm.name, row["test_mse"])
                rows.append(row)
    return rows


def run_ablation(
    cfg: ExperimentConfig,
    arms: Optional[list[Arm]] = None,
    horizons: Optional[Iterable[int]] = None,
    seeds: Optional[Iterable[int]] = None,
) -> list[dict]:
    """One row per arm x horizon x seed with test MSE/MAE."""
    arms = cfg.arms if arms is None else arms
    rows = []
    for seed in cfg.seeds if seeds is None else seeds:
        data = prepare(cfg, seed)
        for horizon in cfg.horizons if horizons is None else horizons:
            for arm in arms:
                rows.append(_public(run_cell(cfg, data, arm, seed, horizon)))
    return rows


def summarize(rows: list[dict], keys: tuple[str, ...]) -> list[dict]:
    """Mean test MSE/MAE over seeds for each combination of ``keys``."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, grp in groups.items():
        ok = [r for r in grp if r["status"] == "ok"]
        out.append(
            {
                **dict(zip(keys, key)),
                "test_mse": float(np.mean([r["test_mse"] for r in ok])) if ok else math.nan,
                "test_mae": float(np.mean([r["test_mae"] for r in ok])) if ok else math.nan,
                "runs": len(ok),
            }
        )
    return out


def format_grid(summary: list[dict], row_key: str = "horizon", col_key: str = "arm") -> str:
    """MSE/MAE grid: one line per ``row_key``, an MSE and MAE column per ``col_key``."""
    cols = list(dict.fromkeys(r[col_key] for r in summary))
    rows = list(dict.fromkeys(r[row_key] for r in summary))
    cell = {(r[row_key], r[col_key]): r for r in summary}
    head = [row_key] + [f"{c}:{m}" for c in cols for m in ("MSE", "MAE")]
    lines = ["\t".join(head)]
    for rk in rows:
        vals = [str(rk)]
        for c in cols:
            r = cell.get((rk, c))
            vals += [f"{r['test_mse']:.4f}", f"{r['test_mae']:.4f}"] if r else ["-", "-"]
        lines.append("\t".join(vals))
    return "\n".join(lines)


# --- single runs -------------------------------------------------------------------


def train_run(cfg: ExperimentConfig, out_dir: Path, seed: Optional[int] = None) -> dict:
    """Train the base configuration once and write checkpoint, history and metrics."""
    seed = cfg.seeds[0] if seed is None else seed
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare(cfg, seed)
    row = run_cell(cfg, data, None, seed, history_path=out_dir / "history.jsonl", raise_divergence=True)
    extra = {"seed": seed}
    if data.scaler is not None:
        extra["scaler"] = {"mean": data.scaler.mean.ravel().tolist(), "std": data.scaler.std.ravel().tolist()}
    save_checkpoint(out_dir / "model", row["params"], extra)
    metrics = _public(row)
    write_json(out_dir / "metrics.json", metrics)
    return metrics


def evaluate_run(cfg: ExperimentConfig, run_dir: Path, seed: Optional[int] = None) -> dict:
    seed = cfg.seeds[0] if seed is None else seed
    params = load_checkpoint(run_dir / "model")
    data = prepare(cfg, seed)
    expected = cfg.architecture(data.test.num_variables, horizon=params.arch.horizon)
    if expected != params.arch:
        raise ValueError(f"checkpoint architecture {params.arch.to_dict()} does not match config {expected.to_dict()}")
    xt, yt = window_arrays(data.test, cfg.lookback, params.arch.horizon, cfg.eval_stride)
    return evaluate(params, xt, yt).to_dict()


# --- plot data --------------------------------------------------------------------


def loss_curve_rows(c: float = 0.08, lo: float = -3.0, hi: float = 3.0, points: int = 601) -> list[tuple]:
    """Loss values and gradients against the error for RQF, MSE and MAE."""
    e = np.linspace(lo, hi, points)
    series = {
        "rqf_loss": losses.rqf_loss(e, 0.0, c),
        "rqf_grad": losses.rqf_grad(e, 0.0, c),
        "mse_loss": e * e,
        "mse_grad": 2.0 * e,
        "mae_loss": np.abs(e),
        "mae_grad": np.sign(e),
    }
    return [(name, float(x), float(v)) for name, ys in series.items() for x, v in zip(e, ys)]


def history_rows(run_dir: Path) -> list[tuple]:
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    rows = []
    for path in sorted(run_dir.glob("**/history*.jsonl")):
        prefix = path.stem if path.parent == run_dir else f"{path.parent.name}/{path.stem}"
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("train_loss", "val_mse", "val_mae"):
                if rec.get(key) is not None:
                    rows.append((f"{prefix}:{key}", rec["epoch"], rec[key]))
    return rows


def simulation_rows(run_dir: Path) -> list[tuple]:
    """Mean clean-test MSE per arm against the noise level."""
    path = run_dir / "simulation.csv"
    if not path.exists():
        raise FileNotFoundError(f"no simulation results in {run_dir}")
    with path.open() as fh:
        recs = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
    for r in recs:
        r["test_mse"] = float(r["test_mse"])
        r["test_mae"] = float(r["test_mae"])
        r["noise_std"] = float(r["noise_std"])
    return [
        (f"{s['arm']}:test_mse", s["noise_std"], s["test_mse"]) for s in summarize(recs, ("arm", "noise_std"))
    ]


def prediction_rows(cfg: ExperimentConfig, run_dir: Path, window: int = 0, variable: int = 0) -> list[tuple]:
    """Input, ground truth and forecast of one test window for one variable."""
    params: ModelParams = load_checkpoint(run_dir / "model")
    data = prepare(cfg, cfg.seeds[0])
    xt, yt = window_arrays(data.test, cfg.lookback, params.arch.horizon, cfg.eval_stride)
    if not 0 <= window < len(xt):
        raise IndexError(f"window {window} out of range (0..{len(xt) - 1})")
    pred = predict_batched(params, xt[window : window + 1])[0]
    lb = cfg.lookback
    rows = [("input", t, float(v)) for t, v in enumerate(xt[window, variable])]
    rows += [("ground_truth", lb + t, float(v)) for t, v in enumerate(yt[window, variable])]
    rows += [("prediction", lb + t, float(v)) for t, v in enumerate(pred[variable])]
    return rows


# --- writers ----------------------------------------------------------------------


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_rows(path: Path, rows: list[dict], fields: Optional[list[str]] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = fields or (list(dict.fromkeys(k for r in rows for k in r)) if rows else [])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def write_plot_rows(path: Path, rows: list[tuple]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_HEADER)
        for name, x, y in rows:
            w.writerow([name, repr(x) if isinstance(x, float) else x, repr(float(y))])
    return path


def write_manifest(out_dir: Path, cfg: ExperimentConfig, command: str, outputs: list[str]) -> Path:
    return write_json(out_dir / "manifest.json", {"command": command, "config": cfg.to_dict(), "outputs": outputs})


# --- ablation presets -------------------------------------------------------------


def loss_ablation_arms() -> list[Arm]:
    """Full SQL, each term removed in turn, and plain MSE.

    Removing RQF leaves MAE plus the outlier penalties (alpha 0); removing
    MAE leaves RQF plus the penalties (alpha 1).
    """
    return [
        Arm("sql", "SQL"),
        Arm("-rqf", "SQL", {"alpha": 0.0}),
        Arm("-or", "SQL", {"beta": 0.0, "gamma": 0.0}),
        Arm("-mae", "SQL", {"alpha": 1.0}),
        Arm("mse", "MSE"),
    ]


def patching_ablation_arms(cfg: ExperimentConfig, single=(16, 8)) -> list[Arm]:
    return [Arm("multi_scale", "SQL", scales=cfg.raw["scales"]), Arm("single_scale", "SQL", scales=[list(single)])]


def horizon_sweep_arms() -> list[Arm]:
    return [Arm("sql", "SQL"), Arm("mse", "MSE")]


ABLATION_PRESETS = ("loss", "patching", "horizon")
