"""Series containers, supervised windows and contiguous train/val/test splits.

Layout is variables-first everywhere: a series with N variables and L steps
is stored as an ``(N, L)`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class InsufficientLengthError(ValueError):
    pass


class DegenerateSplitError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesMatrix:
    """Multivariate series, one row per variable.

    The values array is copied and made read-only on construction.
    """

    values: np.ndarray
    variable_names: Sequence[str] = field(default=())
    interval_note: Optional[str] = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError(f"series must be 2-D (variables x steps), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"series must have at least one variable and one step, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(f"non-finite value at variable {bad[0]}, step {bad[1]}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        names = tuple(self.variable_names) or tuple(f"var{i}" for i in range(arr.shape[0]))
        if len(names) != arr.shape[0]:
            raise ValueError(f"{len(names)} variable names for {arr.shape[0]} variables")
        object.__setattr__(self, "variable_names", names)

    @property
    def num_variables(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesMatrix":
        return SeriesMatrix(self.values[:, start:stop], self.variable_names, self.interval_note)


@dataclass(frozen=True)
class SeriesWindow:
    input: SeriesMatrix
    target: SeriesMatrix
    origin_index: int

    def __post_init__(self):
        if self.input.num_variables != self.target.num_variables:
            raise ValueError(
                f"input has {self.input.num_variables} variables, target has {self.target.num_variables}"
            )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")


def _check_window_args(length: int, lookback: int, horizon: int, stride: int) -> int:
    for name, v in (("lookback", lookback), ("horizon", horizon), ("stride", stride)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
    need = lookback + horizon
    if length < need:
        raise InsufficientLengthError(
            f"insufficient length: need at least {need} steps (lookback {lookback} + horizon {horizon}), got {length}"
        )
    return (length - need) // stride + 1


def make_windows(series: SeriesMatrix, lookback: int, horizon: int, stride: int = 1) -> list[SeriesWindow]:
    """Cut ``series`` into supervised (input, target) windows.

    Window ``i`` starts at column ``i * stride``; its target immediately
    follows its input.
    """
    count = _check_window_args(len(series), lookback, horizon, stride)
    out = []
    for i in range(count):
        o = i * stride
        out.append(
            SeriesWindow(
                input=series.slice(o, o + lookback),
                target=series.slice(o + lookback, o + lookback + horizon),
                origin_index=o,
            )
        )
    return out


def window_arrays(
    series: SeriesMatrix | np.ndarray, lookback: int, horizon: int, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Batched form of :func:`make_windows`.

    Returns ``(inputs, targets)`` of shapes ``(W, N, lookback)`` and
    ``(W, N, horizon)``, ordered by origin.
    """
    values = series.values if isinstance(series, SeriesMatrix) else np.asarray(series, dtype=np.float64)
    count = _check_window_args(values.shape[1], lookback, horizon, stride)
    view = np.lib.stride_tricks.sliding_window_view(values, lookback + horizon, axis=1)
    view = view[:, : (count - 1) * stride + 1 : stride, :]  # (N, W, L+T)
    view = np.ascontiguousarray(view.transpose(1, 0, 2))
    return view[:, :, :lookback], view[:, :, lookback:]


def split_series(
    series: SeriesMatrix, spec: SplitSpec
) -> tuple[SeriesMatrix, Optional[SeriesMatrix], SeriesMatrix]:
    """Contiguous train/val/test split at ``floor(n * cumulative fraction)``.

    The validation part is ``None`` when ``val_fraction`` is 0.
    """
    n = len(series)
    if n < 3:
        raise DegenerateSplitError(f"degenerate split: series of length {n} cannot be split three ways")
    # rounding before the floor absorbs float error in the cumulative sum (0.7 + 0.1 < 0.8)
    a = math.floor(round(n * spec.train_fraction, 9))
    b = math.floor(round(n * (spec.train_fraction + spec.val_fraction), 9))
    # the final boundary is pinned to n so the three parts always cover the input
    parts = ((0, a, spec.train_fraction, "train"), (a, b, spec.val_fraction, "val"), (b, n, spec.test_fraction, "test"))
    for lo, hi, frac, name in parts:
        if frac > 0 and hi <= lo:
            raise DegenerateSplitError(
                f"degenerate split: {name} fraction {frac} of length {n} yields zero columns"
            )
    train = series.slice(0, a)
    val = series.slice(a, b) if b > a else None
    return train, val, series.slice(b, n)
