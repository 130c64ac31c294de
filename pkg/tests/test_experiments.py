import csv

import numpy as np
import pytest

from timesql.config import DEFAULTS, Arm, ExperimentConfig, deep_merge, set_dotted
from timesql.experiments import (
    format_grid,
    history_rows,
    loss_ablation_arms,
    loss_curve_rows,
    prepare,
    run_ablation,
    run_cell,
    run_simulation_suite,
    summarize,
    write_plot_rows,
    write_rows,
)

TINY = {
    "dataset": {"trig": {"preset": "simulation", "num_points": 600, "noise_std": 0.2}},
    "lookback": 16,
    "horizon": 4,
    "scales": [[4, 2], [8, 4]],
    "model": {"hidden": 4},
    "train": {"max_epochs": 2, "batch_size": 32},
    "seeds": [0, 1],
    "noise_stds": [0.1],
}


def tiny(**over):
    raw = deep_merge(DEFAULTS, TINY)
    for key, value in over.items():
        set_dotted(raw, key, value)
    return ExperimentConfig(raw)


def test_prepare_standardizes_with_train_statistics():
    data = prepare(tiny(), seed=0, noise_std=0.3)
    assert len(data.train) == 480 and len(data.test) == 120 and data.val is None
    # variables with nonzero spread are z-scored on the training split
    spread = data.train.values.std(axis=1) > 0.5
    np.testing.assert_allclose(data.train.values.mean(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(data.train.values[spread].std(axis=1), 1)


def test_prepare_without_standardization():
    data = prepare(tiny(standardize=False), seed=0, noise_std=0.0)
    assert data.scaler is None
    assert abs(data.test.values[9]).max() > 10  # the largest amplitude survives


def test_noiseless_control_is_learnable():
    # default architecture on a shorter pure-sinusoid series
    raw = deep_merge(DEFAULTS, {"dataset": {"trig": {"preset": "simulation", "num_points": 3000}}})
    cfg = ExperimentConfig(raw)
    data = prepare(cfg, seed=0, noise_std=0.0)
    rows = [run_cell(cfg, data, arm, 0) for arm in cfg.arms]
    assert all(r["test_mse"] < 1e-3 for r in rows)


def test_arms_share_initialization():
    cfg = tiny()
    data = prepare(cfg, seed=1, noise_std=0.5)
    firsts = {run_cell(cfg, data, arm, 1)["initial_mse"] for arm in loss_ablation_arms()}
    assert len(firsts) == 1


def test_validation_split_drives_early_stopping():
    cfg = tiny(split={"train_fraction": 0.6, "val_fraction": 0.2, "test_fraction": 0.2})
    data = prepare(cfg, seed=0, noise_std=0.2)
    row = run_cell(cfg, data, cfg.arms[0], 0)
    assert all(h["val_mse"] is not None for h in row["history"])


def test_simulation_suite_rows():
    cfg = tiny()
    rows = run_simulation_suite(cfg, noise_stds=[0.1, 0.4], seeds=[0])
    assert [(r["noise_std"], r["arm"]) for r in rows] == [(0.1, "rqf"), (0.1, "mse"), (0.4, "rqf"), (0.4, "mse")]
    assert all(r["status"] == "ok" for r in rows)
    assert "params" not in rows[0]


def test_simulation_suite_needs_two_arms():
    with pytest.raises(ValueError, match="two arms"):
        run_simulation_suite(tiny(), arms=[Arm("x", "MSE")])


def test_divergence_is_recorded_and_suite_continues():
    cfg = tiny(**{"train.learning_rate": 1e300})
    with np.errstate(all="ignore"):
        rows = run_simulation_suite(cfg, noise_stds=[0.1], seeds=[0])
    assert len(rows) == 2
    assert all(r["status"].startswith("diverged") for r in rows)
    assert all(np.isnan(r["test_mse"]) for r in rows)


def test_ablation_summary_and_grid():
    cfg = tiny()
    rows = run_ablation(cfg, [Arm("sql", "SQL"), Arm("mse", "MSE")], horizons=[2, 4])
    assert len(rows) == 2 * 2 * 2
    summary = summarize(rows, ("horizon", "arm"))
    assert len(summary) == 4 and all(s["runs"] == 2 for s in summary)
    mean = np.mean([r["test_mse"] for r in rows if r["arm"] == "sql" and r["horizon"] == 2])
    assert [s["test_mse"] for s in summary if s["arm"] == "sql" and s["horizon"] == 2] == [mean]
    grid = format_grid(summary).splitlines()
    assert grid[0] == "horizon\tsql:MSE\tsql:MAE\tmse:MSE\tmse:MAE"
    assert len(grid) == 3


def test_loss_ablation_arm_definitions():
    arms = {a.name: a for a in loss_ablation_arms()}
    assert arms["-rqf"].hp == {"alpha": 0.0}
    assert arms["-mae"].hp == {"alpha": 1.0}
    assert arms["-or"].hp == {"beta": 0.0, "gamma": 0.0}
    assert arms["mse"].loss_choice == "MSE"


def test_loss_curve_shapes():
    rows = loss_curve_rows(c=0.08)
    rqf = np.array([y for n, _, y in rows if n == "rqf_loss"])
    grad = np.array([abs(y) for n, _, y in rows if n == "rqf_grad"])
    assert rqf.max() < 1 and rqf.min() == 0
    xs = np.array([x for n, x, _ in rows if n == "rqf_grad"])
    assert abs(abs(xs[np.argmax(grad)]) - np.sqrt(0.08 / 3)) < 0.01


def test_history_rows_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        history_rows(tmp_path / "nope")


def test_writers_round_trip(tmp_path):
    write_rows(tmp_path / "r.csv", [{"a": 0.1, "b": "x"}])
    with open(tmp_path / "r.csv") as fh:
        assert list(csv.DictReader(fh)) == [{"a": "0.1", "b": "x"}]
    write_plot_rows(tmp_path / "p.csv", [])
    assert (tmp_path / "p.csv").read_text().strip() == "series_name,x,y"
