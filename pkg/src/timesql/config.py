"""JSON experiment configuration with dotted-path overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from timesql.data import CsvOptions, TrigSpec, simulation_preset
from timesql.losses import SqlHyperParams
from timesql.model import Architecture
from timesql.patching import MultiScaleConfig, PatchError
from timesql.training import TrainConfig
from timesql.types import SplitSpec


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "dataset": {"trig": {"preset": "simulation", "noise_std": 0.4}},
    "split": {"train_fraction": 0.8, "val_fraction": 0.0, "test_fraction": 0.2},
    "standardize": True,
    "lookback": 64,
    "horizon": 16,
    "window_stride": 1,
    "eval_stride": 1,
    "scales": [[8, 4], [16, 8], [32, 16]],
    "model": {"hidden": 32, "encoder": "mlp", "affine": False},
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 64,
        "max_epochs": 4,
        "patience": 3,
        "loss_choice": "SQL",
        "hp": {"c": 0.08, "alpha": 0.2, "beta": 0.0005, "gamma": 0.0001},
        "adam_betas": [0.9, 0.999],
        "adam_eps": 1e-8,
    },
    "arms": [
        {"name": "rqf", "loss_choice": "RQF_only", "hp": {"c": 1.0}},
        {"name": "mse", "loss_choice": "MSE"},
    ],
    "seeds": [0, 1, 2],
    "noise_stds": [0.1, 0.4, 0.7, 1.0],
    "horizons": [16],
    "output_dir": "runs/default",
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "dataset":
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(d: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if k.isdigit() and isinstance(cur, list):
            cur = cur[int(k)]
            continue
        if k not in cur or not isinstance(cur[k], (dict, list)):
            cur[k] = {}
        cur = cur[k]
    last = keys[-1]
    if last.isdigit() and isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value


def parse_overrides(tokens: list[str]) -> dict[str, Any]:
    """``['--train.learning_rate', '0.01', '--model.hidden=8']`` -> ``{path: value}``."""
    out: dict[str, Any] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --section.key value")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} is missing a value")
            raw = tokens[i + 1]
            i += 2
        out[key] = parse_value(raw)
    return out


@dataclass(frozen=True)
class Arm:
    name: str
    loss_choice: Optional[str] = None
    hp: dict = field(default_factory=dict)
    scales: Optional[list] = None


@dataclass
class ExperimentConfig:
    """Validated view of the raw JSON document (kept in ``raw`` for manifests)."""

    raw: dict

    def __post_init__(self):
        try:
            self._validate()
        except (TypeError, ValueError, KeyError, PatchError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def _validate(self) -> None:
        r = self.raw
        unknown = sorted(set(r) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        self.split = SplitSpec(**r["split"])
        self.lookback = int(r["lookback"])
        self.horizon = int(r["horizon"])
        self.window_stride = int(r["window_stride"])
        self.eval_stride = int(r["eval_stride"])
        self.standardize = bool(r["standardize"])
        self.scales = MultiScaleConfig.of(r["scales"])
        self.model = dict(r["model"])
        self.train = self._train_config(r["train"])
        self.seeds = [int(s) for s in r["seeds"]]
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.noise_stds = [float(s) for s in r["noise_stds"]]
        self.horizons = [int(h) for h in r["horizons"]]
        self.output_dir = Path(r["output_dir"])
        self.arms = [Arm(**a) for a in r["arms"]]
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError(f"arm names must be unique, got {names}")
        for arm in self.arms:
            try:
                self.arm_train_config(arm, self.seeds[0])
                self.architecture(n_vars=1, arm=arm)
            except (TypeError, ValueError, PatchError) as exc:
                raise ConfigError(f"arm {arm.name!r}: {exc}") from None
        self.dataset_kind()
        self.architecture(n_vars=1)

    @staticmethod
    def _train_config(d: dict, **over) -> TrainConfig:
        d = deep_merge(d, over)
        d["hp"] = SqlHyperParams(**d["hp"])
        d["adam_betas"] = tuple(d["adam_betas"])
        return TrainConfig(**d)

    def dataset_kind(self) -> str:
        ds = self.raw["dataset"]
        if len(ds) != 1 or next(iter(ds)) not in ("trig", "csv"):
            raise ConfigError(f"dataset must have exactly one of 'trig' or 'csv', got {list(ds)}")
        return next(iter(ds))

    def trig_spec(self, seed: int, noise_std: Optional[float] = None) -> TrigSpec:
        d = dict(self.raw["dataset"]["trig"])
        std = float(d.get("noise_std", 0.0)) if noise_std is None else noise_std
        if d.get("preset") == "simulation":
            return simulation_preset(std, rng_seed=seed, num_points=int(d.get("num_points", 20_000)))
        d.pop("preset", None)
        d["noise_std"] = std
        d["rng_seed"] = seed
        return TrigSpec.from_dict(d)

    def csv_source(self) -> tuple[Path, CsvOptions]:
        d = dict(self.raw["dataset"]["csv"])
        path = Path(d.pop("path"))
        return path, CsvOptions(**d)

    def arm_train_config(self, arm: Optional[Arm], seed: int) -> TrainConfig:
        over: dict[str, Any] = {"rng_seed": seed}
        if arm is not None:
            if arm.loss_choice is not None:
                over["loss_choice"] = arm.loss_choice
            if arm.hp:
                over["hp"] = dict(arm.hp)
        return self._train_config(self.raw["train"], **over)

    def architecture(self, n_vars: int, arm: Optional[Arm] = None, horizon: Optional[int] = None) -> Architecture:
        scales = arm.scales if arm is not None and arm.scales is not None else self.raw["scales"]
        return Architecture(
            n_vars=n_vars,
            lookback=self.lookback,
            horizon=self.horizon if horizon is None else horizon,
            scales=MultiScaleConfig.of(scales),
            hidden=int(self.model.get("hidden", 32)),
            encoder=self.model.get("encoder", "mlp"),
            affine=bool(self.model.get("affine", False)),
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        raw = deep_merge(raw, doc)
    for key, value in (overrides or {}).items():
        set_dotted(raw, key, value)
    return ExperimentConfig(raw)
