"""Single- and multi-scale patching of a lookback window.

With 1-based patch index ``i``, patch ``(n, i)`` covers input columns
``[(i-1)*stride, (i-1)*stride + patch_len)`` of variable ``n``. Internally
indices are 0-based. No end padding is applied, so trailing steps that do
not fill a whole patch are dropped and the patch count is
``floor((L - patch_len) / stride) + 1``.

Each scale has its own patch count; there is no shared count across scales.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from timesql.types import SeriesMatrix


class PatchError(ValueError):
    pass


@dataclass(frozen=True)
class PatchScaleSpec:
    patch_len: int
    stride: int

    def __post_init__(self):
        if int(self.patch_len) != self.patch_len or self.patch_len < 1:
            raise PatchError(f"patch_len must be a positive integer, got {self.patch_len}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise PatchError(f"stride must be a positive integer, got {self.stride}")

    def num_patches(self, lookback: int) -> int:
        if self.patch_len > lookback:
            raise PatchError(f"patch longer than window: patch_len {self.patch_len} > lookback {lookback}")
        return (lookback - self.patch_len) // self.stride + 1

    def starts(self, lookback: int) -> np.ndarray:
        return np.arange(self.num_patches(lookback)) * self.stride


@dataclass(frozen=True)
class MultiScaleConfig:
    scales: tuple[PatchScaleSpec, ...]

    def __post_init__(self):
        scales = tuple(s if isinstance(s, PatchScaleSpec) else PatchScaleSpec(*s) for s in self.scales)
        if not scales:
            raise PatchError("at least one patch scale is required")
        object.__setattr__(self, "scales", scales)

    @classmethod
    def of(cls, pairs: Sequence[Sequence[int]]) -> "MultiScaleConfig":
        return cls(tuple(PatchScaleSpec(int(p), int(s)) for p, s in pairs))

    def __len__(self) -> int:
        return len(self.scales)

    def patch_counts(self, lookback: int) -> list[int]:
        return [s.num_patches(lookback) for s in self.scales]

    def validate(self, lookback: int) -> None:
        for k, s in enumerate(self.scales):
            try:
                s.num_patches(lookback)
            except PatchError as exc:
                raise PatchError(f"scale {k}: {exc}") from None

    def to_list(self) -> list[list[int]]:
        return [[s.patch_len, s.stride] for s in self.scales]


@dataclass(frozen=True)
class PatchTensor:
    patches: np.ndarray  # (N, num_patches, patch_len)
    scale: PatchScaleSpec

    @property
    def num_patches(self) -> int:
        return self.patches.shape[-2]


def patch_array(x: np.ndarray, scale: PatchScaleSpec) -> np.ndarray:
    """Patch the last axis of ``x``: ``(..., L) -> (..., num_patches, patch_len)``.

    The result is a fresh copy, never a view of ``x``.
    """
    lookback = x.shape[-1]
    count = scale.num_patches(lookback)
    view = np.lib.stride_tricks.sliding_window_view(x, scale.patch_len, axis=-1)
    return np.array(view[..., : (count - 1) * scale.stride + 1 : scale.stride, :])


def patch(series: SeriesMatrix | np.ndarray, scale: PatchScaleSpec) -> PatchTensor:
    values = series.values if isinstance(series, SeriesMatrix) else np.asarray(series, dtype=np.float64)
    return PatchTensor(patch_array(values, scale), scale)


def multi_patch(series: SeriesMatrix | np.ndarray, config: MultiScaleConfig) -> list[PatchTensor]:
    out = []
    for k, scale in enumerate(config.scales):
        try:
            out.append(patch(series, scale))
        except PatchError as exc:
            raise PatchError(f"scale {k}: {exc}") from None
    return out


def unpatch_add(grad: np.ndarray, scale: PatchScaleSpec, lookback: int) -> np.ndarray:
    """Adjoint of :func:`patch_array`: scatter-add patch gradients back onto the window."""
    out = np.zeros(grad.shape[:-2] + (lookback,), dtype=grad.dtype)
    for i, start in enumerate(scale.starts(lookback)):
        out[..., start : start + scale.patch_len] += grad[..., i, :]
    return out
