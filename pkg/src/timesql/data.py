"""Synthetic sinusoid generator, CSV ingestion and dataset statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from timesql.types import SeriesMatrix


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrigVariable:
    amplitude: float
    phase: float
    period: float


@dataclass(frozen=True)
class TrigSpec:
    """Independent sinusoids with Gaussian noise on a leading fraction of steps.

    ``t`` is the integer sample index. Note that an integer period of 1
    samples the sinusoid at a fixed phase, giving a constant variable.
    """

    num_points: int
    variables: tuple[TrigVariable, ...]
    noise_std: float = 0.0
    noisy_fraction: float = 0.8
    rng_seed: int = 0

    def __post_init__(self):
        vs = tuple(v if isinstance(v, TrigVariable) else TrigVariable(**v) for v in self.variables)
        object.__setattr__(self, "variables", vs)
        if int(self.num_points) != self.num_points or self.num_points < 1:
            raise ValueError(f"num_points must be a positive integer, got {self.num_points}")
        if not vs:
            raise ValueError("at least one variable is required")
        for i, v in enumerate(vs):
            if not v.period > 0:
                raise ValueError(f"variable {i}: period must be > 0, got {v.period}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")
        if not 0.0 <= self.noisy_fraction <= 1.0:
            raise ValueError(f"noisy_fraction must lie in [0, 1], got {self.noisy_fraction}")

    @property
    def noisy_steps(self) -> int:
        # rounding guards ceil() against float error, e.g. 0.8 * 20000
        return math.ceil(round(self.noisy_fraction * self.num_points, 9))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrigSpec":
        d = dict(d)
        d["variables"] = tuple(TrigVariable(**v) for v in d["variables"])
        return cls(**d)


AMPLITUDES = (1, 2, 4, 6, 8, 10, 12, 14, 16, 18)
PHASES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8)
PERIODS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
NOISE_STDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def simulation_preset(noise_std: float = 0.1, rng_seed: int = 0, num_points: int = 20_000) -> TrigSpec:
    """Ten variables, 80% noisy prefix, clean 20% suffix."""
    variables = tuple(TrigVariable(float(a), p, float(T)) for a, p, T in zip(AMPLITUDES, PHASES, PERIODS))
    return TrigSpec(num_points, variables, noise_std=noise_std, noisy_fraction=0.8, rng_seed=rng_seed)


def clean_trig(spec: TrigSpec) -> np.ndarray:
    t = np.arange(spec.num_points, dtype=np.float64)
    return np.stack([v.amplitude * np.sin(2.0 * np.pi * t / v.period + v.phase) for v in spec.variables])


def generate_trig(spec: TrigSpec) -> SeriesMatrix:
    values = clean_trig(spec)
    k = spec.noisy_steps
    if spec.noise_std > 0 and k > 0:
        for n in range(values.shape[0]):
            # one PCG64 stream per variable so adding variables leaves the others untouched
            rng = np.random.default_rng([spec.rng_seed, n])
            values[n, :k] += rng.normal(0.0, spec.noise_std, k)
    names = [f"var{n + 1}" for n in range(values.shape[0])]
    return SeriesMatrix(values, names)


@dataclass(frozen=True)
class CsvOptions:
    delimiter: str = ","
    has_header: bool = True
    time_column: Optional[str] = None


def load_csv(path: str | Path, options: CsvOptions = CsvOptions()) -> SeriesMatrix:
    """Read one-row-per-timestep CSV into a variables-first series.

    Every cell must parse as a finite float; the optional ``time_column``
    (matched by header name) is dropped.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh, delimiter=options.delimiter)) if r]
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = None
    if options.has_header:
        header = [h.strip() for h in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise CsvFormatError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0][1])
    drop = None
    if options.time_column is not None:
        if header is None:
            raise CsvFormatError(f"{path}: time_column given but the file has no header")
        if options.time_column not in header:
            raise CsvFormatError(f"{path}: time column {options.time_column!r} not in header {header}")
        drop = header.index(options.time_column)

    data = np.empty((len(rows), width - (drop is not None)), dtype=np.float64)
    for r, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise CsvFormatError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
        cells = [c for j, c in enumerate(row) if j != drop]
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"{path}: line {lineno}, column {j + 1}: non-numeric cell {cell!r}") from None
            if not math.isfinite(v):
                raise CsvFormatError(f"{path}: line {lineno}, column {j + 1}: non-finite cell {cell!r}")
            data[r, j] = v
    if data.shape[1] == 0:
        raise CsvFormatError(f"{path}: no value columns")
    names = [h for j, h in enumerate(header) if j != drop] if header is not None else ()
    return SeriesMatrix(data.T, names)


def write_csv(path: str | Path, series: SeriesMatrix, delimiter: str = ",") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(series.variable_names)
        for row in series.values.T:
            w.writerow([f"{v:.17g}" for v in row])
    return path


def dataset_stats(series: SeriesMatrix) -> dict:
    v = series.values
    return {
        "num_features": int(v.shape[0]),
        "num_samples": int(v.shape[1]),
        "variables": [
            {
                "name": name,
                "mean": float(row.mean()),
                "std": float(row.std()),
                "min": float(row.min()),
                "max": float(row.max()),
            }
            for name, row in zip(series.variable_names, v)
        ],
    }


@dataclass
class StandardScaler:
    """Per-variable z-scoring fitted on one split and applied to all of them."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    std: np.ndarray = field(default_factory=lambda: np.ones((0, 1)))

    @classmethod
    def fit(cls, series: SeriesMatrix) -> "StandardScaler":
        v = series.values
        std = v.std(axis=1, keepdims=True)
        # a constant training column would otherwise blow up
        std = np.where(std < 1e-8, 1.0, std)
        return cls(v.mean(axis=1, keepdims=True), std)

    def transform(self, series: SeriesMatrix) -> SeriesMatrix:
        return SeriesMatrix((series.values - self.mean) / self.std, series.variable_names, series.interval_note)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean
