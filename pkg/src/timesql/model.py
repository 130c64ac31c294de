"""The multi-scale patch forecaster with a hand-written backward pass.

Pipeline for every (window, variable) row, channel-independently:

    instance-normalize -> patch at K scales -> per-scale dense+ReLU encoder
    (weights shared over patches and variables) -> flatten and concatenate
    -> dense head to T outputs -> de-normalize

Instance-normalization statistics depend only on the input, so they are
constants for differentiation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from timesql.patching import MultiScaleConfig, patch_array, unpatch_add
from timesql.types import SeriesMatrix

REVIN_EPS = 1e-5
ENCODER_KINDS = ("mlp",)


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    n_vars: int
    lookback: int
    horizon: int
    scales: MultiScaleConfig
    hidden: int = 32
    encoder: str = "mlp"
    affine: bool = False

    def __post_init__(self):
        if not isinstance(self.scales, MultiScaleConfig):
            object.__setattr__(self, "scales", MultiScaleConfig.of(self.scales))
        for name in ("n_vars", "lookback", "horizon", "hidden"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.encoder not in ENCODER_KINDS:
            raise ValueError(f"unsupported encoder kind {self.encoder!r}; available: {ENCODER_KINDS}")
        self.scales.validate(self.lookback)

    @property
    def patch_counts(self) -> list[int]:
        return self.scales.patch_counts(self.lookback)

    @property
    def feature_width(self) -> int:
        return sum(self.patch_counts) * self.hidden

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "scales": self.scales.to_list(),
            "hidden": self.hidden,
            "encoder": self.encoder,
            "affine": self.affine,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["scales"] = MultiScaleConfig.of(d["scales"])
        return cls(**d)


@dataclass
class ModelParams:
    """Every learnable array, with a flat-vector view in a fixed order.

    Order: for each scale ``enc{k}.W`` (patch_len x hidden), ``enc{k}.b``;
    then ``head.W`` (features x horizon), ``head.b``; then ``revin.w`` and
    ``revin.b`` when the normalization is affine.
    """

    arch: Architecture
    encoders: list[tuple[np.ndarray, np.ndarray]]
    head: tuple[np.ndarray, np.ndarray]
    norm_affine: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        expected = expected_shapes(self.arch)
        got = [(n, a.shape) for n, a in self.named_arrays()]
        if [n for n, _ in got] != [n for n, _ in expected]:
            raise ShapeMismatchError(f"parameter layout {[n for n, _ in got]} does not match architecture")
        for (name, shape), (_, want) in zip(got, expected):
            if shape != want:
                raise ShapeMismatchError(f"layer {name}: shape {shape}, architecture expects {want}")

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, (w, b) in enumerate(self.encoders):
            out += [(f"enc{k}.W", w), (f"enc{k}.b", b)]
        out += [("head.W", self.head[0]), ("head.b", self.head[1])]
        if self.norm_affine is not None:
            out += [("revin.w", self.norm_affine[0]), ("revin.b", self.norm_affine[1])]
        return out

    @property
    def size(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    @classmethod
    def unflatten(cls, arch: Architecture, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        shapes = expected_shapes(arch)
        total = sum(int(np.prod(s)) for _, s in shapes)
        if flat.shape != (total,):
            raise ShapeMismatchError(f"flat vector has shape {flat.shape}, architecture needs ({total},)")
        arrays = []
        pos = 0
        for _, shape in shapes:
            n = int(np.prod(shape))
            arrays.append(flat[pos : pos + n].reshape(shape).copy())
            pos += n
        k = len(arch.scales)
        encoders = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(k)]
        head = (arrays[2 * k], arrays[2 * k + 1])
        affine = (arrays[2 * k + 2], arrays[2 * k + 3]) if arch.affine else None
        return cls(arch, encoders, head, affine)

    def copy(self) -> "ModelParams":
        return ModelParams.unflatten(self.arch, self.flatten())


def expected_shapes(arch: Architecture) -> list[tuple[str, tuple[int, ...]]]:
    out: list[tuple[str, tuple[int, ...]]] = []
    for k, s in enumerate(arch.scales.scales):
        out += [(f"enc{k}.W", (s.patch_len, arch.hidden)), (f"enc{k}.b", (arch.hidden,))]
    out += [("head.W", (arch.feature_width, arch.horizon)), ("head.b", (arch.horizon,))]
    if arch.affine:
        out += [("revin.w", (arch.n_vars,)), ("revin.b", (arch.n_vars,))]
    return out


def init_params(arch: Architecture, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.default_rng(seed)

    def dense(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, (fan_out,))

    encoders = [dense(s.patch_len, arch.hidden) for s in arch.scales.scales]
    head = dense(arch.feature_width, arch.horizon)
    affine = (np.ones(arch.n_vars), np.zeros(arch.n_vars)) if arch.affine else None
    return ModelParams(arch, encoders, head, affine)


def zero_params(arch: Architecture) -> ModelParams:
    return ModelParams.unflatten(arch, np.zeros(sum(int(np.prod(s)) for _, s in expected_shapes(arch))))


# --- instance normalization -------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (..., 1)
    std: np.ndarray  # (..., 1)


def rev_in_normalize(x, eps: float = REVIN_EPS) -> tuple[np.ndarray, NormStats]:
    """Normalize each row over its last axis to mean 0, std 1.

    The std uses the population denominator with ``eps`` added to the
    variance, so constant rows map to zeros.
    """
    values = x.values if isinstance(x, SeriesMatrix) else np.asarray(x, dtype=np.float64)
    if values.shape[-1] < 2:
        raise ValueError(f"instance normalization needs at least 2 steps, got {values.shape[-1]}")
    mean = values.mean(axis=-1, keepdims=True)
    std = np.sqrt(values.var(axis=-1, keepdims=True) + eps)
    return (values - mean) / std, NormStats(mean, std)


def rev_in_denormalize(pred: np.ndarray, stats: NormStats) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[:-1] != stats.mean.shape[:-1]:
        raise ShapeMismatchError(
            f"prediction leading shape {pred.shape[:-1]} does not match stats shape {stats.mean.shape[:-1]}"
        )
    return pred * stats.std + stats.mean


# --- forward / backward ------------------------------------------------------


@dataclass
class ForwardTrace:
    prediction: np.ndarray
    stats: NormStats
    batch_shape: tuple[int, ...]
    var_index: np.ndarray
    z: np.ndarray
    z_in: np.ndarray
    patches: list[np.ndarray]
    pre: list[np.ndarray]
    features: np.ndarray
    head_out: np.ndarray
    param_sizes: list[tuple[int, ...]] = field(default_factory=list)


def _as_batch(x, arch: Architecture) -> tuple[np.ndarray, tuple[int, ...]]:
    values = x.values if isinstance(x, SeriesMatrix) else np.asarray(x, dtype=np.float64)
    if values.ndim not in (2, 3) or values.shape[-2:] != (arch.n_vars, arch.lookback):
        raise ShapeMismatchError(
            f"input shape {values.shape} does not match (n_vars={arch.n_vars}, lookback={arch.lookback})"
        )
    lead = values.shape[:-2]
    return values.reshape(-1, arch.lookback), lead


def forward(params: ModelParams, x) -> ForwardTrace:
    """Predict ``(..., N, T)`` from ``(..., N, L)``; a bare ``(N, L)`` window is allowed."""
    arch = params.arch
    rows, lead = _as_batch(x, arch)
    m = rows.shape[0]
    var_index = np.tile(np.arange(arch.n_vars), m // arch.n_vars)
    z, stats = rev_in_normalize(rows)
    if params.norm_affine is not None:
        w, b = params.norm_affine
        z_in = z * w[var_index, None] + b[var_index, None]
    else:
        z_in = z

    patches, pres, feats = [], [], []
    for (w_enc, b_enc), scale in zip(params.encoders, arch.scales.scales):
        p = patch_array(z_in, scale)
        pre = p @ w_enc + b_enc
        patches.append(p)
        pres.append(pre)
        feats.append(np.maximum(pre, 0.0).reshape(m, -1))
    features = np.concatenate(feats, axis=1)
    head_out = features @ params.head[0] + params.head[1]
    y = head_out
    if params.norm_affine is not None:
        w, b = params.norm_affine
        y = (y - b[var_index, None]) / (w[var_index, None] + REVIN_EPS**2)
    pred = rev_in_denormalize(y, stats).reshape(lead + (arch.n_vars, arch.horizon))
    return ForwardTrace(
        prediction=pred,
        stats=stats,
        batch_shape=lead,
        var_index=var_index,
        z=z,
        z_in=z_in,
        patches=patches,
        pre=pres,
        features=features,
        head_out=head_out,
        param_sizes=[a.shape for _, a in params.named_arrays()],
    )


def predict(params: ModelParams, x) -> np.ndarray:
    return forward(params, x).prediction


def backward(trace: ForwardTrace, grad_output: np.ndarray, params: ModelParams) -> np.ndarray:
    """Gradient of ``sum(grad_output * prediction)`` w.r.t. every parameter, flat."""
    arch = params.arch
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != trace.prediction.shape:
        raise ShapeMismatchError(
            f"grad_output shape {grad_output.shape} does not match prediction shape {trace.prediction.shape}"
        )
    if trace.param_sizes != [a.shape for _, a in params.named_arrays()]:
        raise ShapeMismatchError("trace was produced with parameters of a different shape")
    m = trace.z.shape[0]
    g = grad_output.reshape(m, arch.horizon) * trace.stats.std
    vi = trace.var_index

    d_aff_w = d_aff_b = None
    if params.norm_affine is not None:
        w, b = params.norm_affine
        denom = w[vi, None] + REVIN_EPS**2
        d_aff_b = np.bincount(vi, weights=(-g / denom).sum(axis=1), minlength=arch.n_vars)
        d_aff_w = np.bincount(
            vi, weights=(-g * (trace.head_out - b[vi, None]) / denom**2).sum(axis=1), minlength=arch.n_vars
        )
        g = g / denom

    w_head = params.head[0]
    d_head_w = trace.features.T @ g
    d_head_b = g.sum(axis=0)
    d_feat = g @ w_head.T

    enc_grads = []
    d_zin = np.zeros_like(trace.z) if params.norm_affine is not None else None
    offset = 0
    for (w_enc, _), scale, p, pre in zip(params.encoders, arch.scales.scales, trace.patches, trace.pre):
        width = pre.shape[1] * arch.hidden
        d_pre = d_feat[:, offset : offset + width].reshape(pre.shape) * (pre > 0)
        offset += width
        enc_grads.append(
            (p.reshape(-1, scale.patch_len).T @ d_pre.reshape(-1, arch.hidden), d_pre.sum(axis=(0, 1)))
        )
        if d_zin is not None:
            d_zin += unpatch_add(d_pre @ w_enc.T, scale, arch.lookback)

    parts = []
    for dw, db in enc_grads:
        parts += [dw.ravel(), db]
    parts += [d_head_w.ravel(), d_head_b]
    if params.norm_affine is not None:
        d_aff_w = d_aff_w + np.bincount(vi, weights=(d_zin * trace.z).sum(axis=1), minlength=arch.n_vars)
        d_aff_b = d_aff_b + np.bincount(vi, weights=d_zin.sum(axis=1), minlength=arch.n_vars)
        parts += [d_aff_w, d_aff_b]
    return np.concatenate(parts)


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ModelParams, extra: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` (shape manifest) and ``<path>.npy`` (flat float64 vector)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "timesql-checkpoint/1",
        "architecture": params.arch.to_dict(),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in params.named_arrays()],
        "size": params.size,
    }
    if extra:
        manifest["extra"] = extra
    json_path, npy_path = path.with_suffix(".json"), path.with_suffix(".npy")
    json_path.write_text(json.dumps(manifest, indent=2))
    np.save(npy_path, params.flatten())
    return json_path, npy_path


def load_checkpoint(path: str | Path, expected: Optional[Architecture] = None) -> ModelParams:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    arch = Architecture.from_dict(manifest["architecture"])
    if expected is not None and expected != arch:
        raise ShapeMismatchError(f"checkpoint architecture {arch.to_dict()} does not match {expected.to_dict()}")
    listed = [(a["name"], tuple(a["shape"])) for a in manifest["arrays"]]
    if listed != expected_shapes(arch):
        raise ShapeMismatchError("checkpoint manifest arrays do not match its architecture")
    return ModelParams.unflatten(arch, np.load(path.with_suffix(".npy")))
