"""Rational-quadratic (RQF), smooth quadratic (SQL) and MSE losses.

All array losses reduce by the mean over every element, so values are
comparable across horizons, variable counts and batch sizes. Gradients are
returned with respect to the prediction and already include the ``1/count``
factor. The subgradient of ``|x|`` at 0 is taken as 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class LossParameterError(ValueError):
    pass


def _check_c(c) -> None:
    if not np.all(np.asarray(c) > 0):
        raise LossParameterError(f"kernel width c must be > 0, got {c}")


@dataclass(frozen=True)
class SqlHyperParams:
    c: float = 0.08
    alpha: float = 0.2
    beta: float = 0.05
    gamma: float = 0.05

    def __post_init__(self):
        _check_c(self.c)
        if not 0.0 <= self.alpha <= 1.0:
            raise LossParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0 or self.gamma < 0:
            raise LossParameterError(f"beta and gamma must be nonnegative, got {self.beta}, {self.gamma}")

    def to_dict(self) -> dict:
        return asdict(self)


# values used for every benchmark except ILI
DEFAULT_HP = SqlHyperParams(c=0.08, alpha=0.2, beta=0.05, gamma=0.05)
ILI_HP = SqlHyperParams(c=100.0, alpha=0.1, beta=0.0005, gamma=0.0001)


@dataclass(frozen=True)
class LossReport:
    total: float
    rqf_term: float
    mae_term: float
    or_l1_term: float
    or_l2_term: float
    grad_wrt_prediction: np.ndarray


def rqf_loss(pred, target, c: float):
    """``e**2 / (e**2 + c)`` with ``e = pred - target``; elementwise on arrays."""
    _check_c(c)
    e = np.subtract(pred, target)
    e2 = e * e
    return e2 / (e2 + c)


def rqf_grad(pred, target, c: float):
    """Derivative of :func:`rqf_loss` w.r.t. ``pred``: ``2 c e / (e**2 + c)**2``.

    Its magnitude peaks at ``|e| = sqrt(c / 3)`` and decays to 0 beyond.
    """
    _check_c(c)
    e = np.subtract(pred, target)
    d = e * e + c
    return 2.0 * c * e / (d * d)


def rqf_peak_error(c: float) -> float:
    _check_c(c)
    return float(np.sqrt(c / 3.0))


def rqf_maclaurin(e, c: float, order_n: int):
    """Truncated series ``sum_{i=1..n} (-1)**(i-1) e**(2i) / c**i``.

    Converges to :func:`rqf_loss` only for ``e**2 < c``.
    """
    _check_c(c)
    if int(order_n) != order_n or order_n < 1:
        raise LossParameterError(f"order_n must be a positive integer, got {order_n}")
    r = np.square(e) / c
    total = np.zeros_like(r, dtype=np.float64)
    term = np.ones_like(r, dtype=np.float64)
    for i in range(1, int(order_n) + 1):
        term = term * r
        total = total + (term if i % 2 == 1 else -term)
    return total


def _check_shapes(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction")


def sql_loss(pred, target, hp: SqlHyperParams = DEFAULT_HP) -> LossReport:
    """Blend ``alpha*RQF + (1-alpha)*MAE + beta*|pred| + gamma*pred**2``, averaged.

    The outlier penalties act on the prediction itself, not on the error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    n = pred.size
    e = pred - target
    e2 = e * e
    d = e2 + hp.c
    rqf = float(np.sum(e2 / d)) / n
    mae = float(np.sum(np.abs(e))) / n
    l1 = hp.beta * float(np.sum(np.abs(pred))) / n
    l2 = hp.gamma * float(np.sum(pred * pred)) / n
    total = hp.alpha * rqf + (1.0 - hp.alpha) * mae + l1 + l2
    grad = (
        hp.alpha * (2.0 * hp.c * e / (d * d))
        + (1.0 - hp.alpha) * np.sign(e)
        + hp.beta * np.sign(pred)
        + 2.0 * hp.gamma * pred
    ) / n
    return LossReport(total, rqf, mae, l1, l2, grad)


def mse_loss(pred, target) -> LossReport:
    """Mean squared error; only ``total`` and the gradient are populated."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    e = pred - target
    n = e.size
    return LossReport(float(np.sum(e * e)) / n, 0.0, 0.0, 0.0, 0.0, 2.0 * e / n)


def loss_for_choice(choice: str, hp: SqlHyperParams):
    """Return ``f(pred, target) -> LossReport`` for a named training objective.

    ``RQF_only`` and ``MAE_only`` are the degenerate blends with the outlier
    penalties removed.
    """
    key = choice.upper()
    if key == "SQL":
        return lambda p, t: sql_loss(p, t, hp)
    if key == "MSE":
        return mse_loss
    if key == "RQF_ONLY":
        only = SqlHyperParams(c=hp.c, alpha=1.0, beta=0.0, gamma=0.0)
        return lambda p, t: sql_loss(p, t, only)
    if key == "MAE_ONLY":
        only = SqlHyperParams(c=hp.c, alpha=0.0, beta=0.0, gamma=0.0)
        return lambda p, t: sql_loss(p, t, only)
    raise ValueError(f"unknown loss choice {choice!r}; expected SQL, MSE, RQF_only or MAE_only")


LOSS_CHOICES = ("SQL", "MSE", "RQF_only", "MAE_only")
