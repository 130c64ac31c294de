"""Adam training loop, early stopping and MSE/MAE evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from timesql.losses import DEFAULT_HP, LOSS_CHOICES, SqlHyperParams, loss_for_choice, mse_loss
from timesql.model import ModelParams, backward, forward

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite training loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 10
    patience: int = 3  # 0 disables early stopping
    loss_choice: str = "SQL"
    hp: SqlHyperParams = DEFAULT_HP
    rng_seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.hp, dict):
            object.__setattr__(self, "hp", SqlHyperParams(**self.hp))
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError(f"Adam betas must lie in (0, 1), got {self.adam_betas}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size and max_epochs must be positive, patience nonnegative")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.loss_choice.upper() not in {c.upper() for c in LOSS_CHOICES}:
            raise ValueError(f"unknown loss_choice {self.loss_choice!r}; expected one of {LOSS_CHOICES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


# --- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new arrays, inputs untouched."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    b1, b2 = betas
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


# --- evaluation --------------------------------------------------------------------


@dataclass(frozen=True)
class EvalMetrics:
    mse: float
    mae: float
    per_horizon_mse: Optional[list[float]] = None
    per_horizon_mae: Optional[list[float]] = None

    def to_dict(self) -> dict:
        return asdict(self)


def predict_batched(params: ModelParams, inputs: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    out = [forward(params, inputs[i : i + batch_size]).prediction for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out, axis=0)


def metrics(pred: np.ndarray, target: np.ndarray) -> EvalMetrics:
    err = pred - target
    axes = tuple(range(err.ndim - 1))
    return EvalMetrics(
        mse=float(np.mean(err * err)),
        mae=float(np.mean(np.abs(err))),
        per_horizon_mse=np.mean(err * err, axis=axes).tolist(),
        per_horizon_mae=np.mean(np.abs(err), axis=axes).tolist(),
    )


def evaluate(params: ModelParams, inputs: np.ndarray, targets: np.ndarray, batch_size: int = 1024) -> EvalMetrics:
    """MSE and MAE pooled over every element of every window."""
    if len(inputs) == 0:
        raise ValueError("evaluate needs at least one window")
    return metrics(predict_batched(params, inputs, batch_size), targets)


# --- training loop -------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    initial_mse: float = float("nan")


def train(
    params: ModelParams,
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    config: TrainConfig,
    val_inputs: Optional[np.ndarray] = None,
    val_targets: Optional[np.ndarray] = None,
    history_path: Optional[str | Path] = None,
) -> TrainResult:
    """Minibatch Adam from ``params`` (not modified).

    Batches are drawn by a permutation seeded from ``config.rng_seed``. With
    validation windows, training stops after ``patience`` epochs without a
    lower validation MSE and the best-epoch parameters are returned;
    otherwise the last epoch's parameters are returned.
    """
    n = len(train_inputs)
    if n == 0:
        raise ValueError("empty training set")
    arch = params.arch
    loss_fn = loss_for_choice(config.loss_choice, config.hp)
    rng = np.random.default_rng(config.rng_seed)
    flat = params.flatten()
    state = AdamState.zeros(flat.size)
    has_val = val_inputs is not None and len(val_inputs) > 0

    result = TrainResult(params.copy())
    best_val = np.inf
    since_best = 0
    fh = open(history_path, "w") if history_path is not None else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start : start + config.batch_size]
                current = ModelParams.unflatten(arch, flat)
                trace = forward(current, train_inputs[idx])
                if epoch == 1 and b == 0:
                    result.initial_mse = mse_loss(trace.prediction, train_targets[idx]).total
                report = loss_fn(trace.prediction, train_targets[idx])
                if not np.isfinite(report.total):
                    raise TrainingDivergence(epoch, b, report.total)
                grad = backward(trace, report.grad_wrt_prediction, current)
                flat, state = adam_step(flat, grad, state, config.learning_rate, config.adam_betas, config.adam_eps)
                total += report.total * len(idx)
            current = ModelParams.unflatten(arch, flat)
            if not np.all(np.isfinite(flat)):
                raise TrainingDivergence(epoch, b, float("nan"))
            row = {"epoch": epoch, "train_loss": total / n, "val_mse": None, "val_mae": None}
            if has_val:
                m = evaluate(current, val_inputs, val_targets)
                row["val_mse"], row["val_mae"] = m.mse, m.mae
            result.history.append(row)
            if fh is not None:
                fh.write(json.dumps(row) + "\n")
            log.debug("epoch %d: %s", epoch, row)

            if not has_val:
                result.params, result.best_epoch = current, epoch
                continue
            if row["val_mse"] < best_val:
                best_val, since_best = row["val_mse"], 0
                result.params, result.best_epoch = current, epoch
            else:
                since_best += 1
                if config.patience and since_best >= config.patience:
                    break
    finally:
        if fh is not None:
            fh.close()
    return result
