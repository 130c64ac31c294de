"""Monte-Carlo checks of the noise-robustness inequalities for the RQF loss.

For a single prediction ``x`` and clean label ``y`` write ``e = y - x``; a
noisy label ``y + eps`` then has error ``e + eps``. The noise effect of a
loss ``f`` is ``|f(y + eps, x) - f(y, x)| / |f(y, x)|``. Four closed forms
are checked:

* ``v_mse = |2 eps e + eps**2| / e**2``                         (MSE value)
* ``v_rqf = c |2 eps e + eps**2| / (e**2 ((e + eps)**2 + c))``  (RQF value)
* ``v_m = |eps / e|``                                           (MSE gradient)
* ``v_r = |(e+eps)(e**2+c)**2 - e((e+eps)**2+c)**2| / (|e| ((e+eps)**2+c)**2)``
  (RQF gradient; the d(prediction)/d(theta) factor cancels in the ratio)

The value inequality ``v_rqf <= v_mse`` holds for every noise. The gradient
inequality ``v_r <= v_m`` is only guaranteed for ``|eps| >= 2|e|``.

The sets flip sign jointly under ``(e, eps) -> (-e, -eps)``, so the
``x - y`` sign convention yields the same quantities.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from timesql import losses

# relative slack for comparing two independently rounded closed forms
ROUNDING_SLACK = 1e-12


class UndefinedNormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseEffectSample:
    e: float
    eps: float
    c: float
    v_mse: float
    v_rqf: float
    v_r: float
    v_m: float


def gradient_bracket(e, eps, c):
    """``(e+eps)(e**2+c)**2 - e((e+eps)**2+c)**2``; its sign splits the proof cases."""
    a = e + eps
    return a * (e * e + c) ** 2 - e * (a * a + c) ** 2


def noise_effects(e, eps, c) -> dict[str, np.ndarray]:
    e = np.asarray(e, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    a = e + eps
    shift = np.abs(2.0 * eps * e + eps * eps)
    e2 = e * e
    d_noisy = a * a + c
    return {
        "v_mse": shift / e2,
        "v_rqf": c * shift / (e2 * d_noisy),
        "v_m": np.abs(eps / e),
        "v_r": np.abs(gradient_bracket(e, eps, c)) / (np.abs(e) * d_noisy * d_noisy),
    }


def noise_effect(e: float, eps: float, c: float) -> NoiseEffectSample:
    if e == 0:
        raise UndefinedNormalizationError("undefined normalization: the clean error e must be nonzero")
    if not c > 0:
        raise losses.LossParameterError(f"kernel width c must be > 0, got {c}")
    v = noise_effects(e, eps, c)
    return NoiseEffectSample(e, eps, c, **{k: float(x) for k, x in v.items()})


def noise_effect_from_losses(e: float, eps: float, c: float) -> dict[str, float]:
    """Same four quantities, built from the loss functions instead of closed forms.

    Uses prediction 0 and clean label ``e``.
    """
    if e == 0:
        raise UndefinedNormalizationError("undefined normalization: the clean error e must be nonzero")
    x, y, y_noisy = np.array([0.0]), np.array([e]), np.array([e + eps])
    mse_clean = losses.mse_loss(x, y)
    mse_noisy = losses.mse_loss(x, y_noisy)
    rqf_clean = float(losses.rqf_loss(0.0, e, c))
    rqf_noisy = float(losses.rqf_loss(0.0, e + eps, c))
    g_mse_clean = float(mse_clean.grad_wrt_prediction[0])
    g_mse_noisy = float(mse_noisy.grad_wrt_prediction[0])
    g_rqf_clean = float(losses.rqf_grad(0.0, e, c))
    g_rqf_noisy = float(losses.rqf_grad(0.0, e + eps, c))
    return {
        "v_mse": abs(mse_noisy.total - mse_clean.total) / mse_clean.total,
        "v_rqf": abs(rqf_noisy - rqf_clean) / rqf_clean,
        "v_m": abs((g_mse_noisy - g_mse_clean) / g_mse_clean),
        "v_r": abs((g_rqf_noisy - g_rqf_clean) / g_rqf_clean),
    }


# --- samplers -------------------------------------------------------------------


def _nonzero_uniform(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    x = rng.uniform(lo, hi, n)
    bad = x == 0
    while np.any(bad):
        x[bad] = rng.uniform(lo, hi, int(bad.sum()))
        bad = x == 0
    return x


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


@dataclass
class ValueBoundReport:
    samples: int
    violations: int
    worst_ratio: float
    ratio_identity_max_error: float
    seed: int
    examples: list

    def to_dict(self) -> dict:
        return asdict(self)


def verify_value_bound(
    num_samples: int = 1_000_000,
    rng_seed: int = 0,
    e_range: tuple[float, float] = (-10.0, 10.0),
    eps_range: tuple[float, float] = (-10.0, 10.0),
    c_range: tuple[float, float] = (1e-4, 100.0),
    chunk: int = 250_000,
) -> ValueBoundReport:
    """Check ``v_rqf <= v_mse`` and ``v_rqf / v_mse == c / (c + (e+eps)**2)``.

    ``e`` and ``eps`` are uniform, ``c`` log-uniform. Samples with
    ``eps == 0`` have both effects 0 and count as non-violations.
    """
    if c_range[0] <= 0:
        raise ValueError(f"c range must be positive, got {c_range}")
    rng = np.random.default_rng(rng_seed)
    violations = 0
    worst = 0.0
    ident_err = 0.0
    examples: list = []
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        e = _nonzero_uniform(rng, *e_range, n)
        eps = rng.uniform(*eps_range, n)
        c = _log_uniform(rng, *c_range, n)
        v = noise_effects(e, eps, c)
        bad = v["v_rqf"] > v["v_mse"] * (1.0 + ROUNDING_SLACK)
        violations += int(bad.sum())
        for i in np.flatnonzero(bad)[: max(0, 10 - len(examples))]:
            examples.append({"e": float(e[i]), "eps": float(eps[i]), "c": float(c[i])})
        live = v["v_mse"] > 0
        ratio = v["v_rqf"][live] / v["v_mse"][live]
        if ratio.size:
            worst = max(worst, float(ratio.max()))
            expected = c[live] / (c[live] + (e[live] + eps[live]) ** 2)
            ident_err = max(ident_err, float(np.max(np.abs(ratio - expected))))
        done += n
    return ValueBoundReport(num_samples, violations, worst, ident_err, rng_seed, examples)


@dataclass
class GradientBoundReport:
    samples: int
    violations: int
    worst_margin: float
    strata: dict
    seed: int
    examples: list
    outside_samples: int = 0
    outside_exceedances: int = 0
    outside_example: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def classify_conditions(e, eps, c) -> np.ndarray:
    """Proof case per sample: 'A'/'B' for eps >= 2|e|, 'C'/'D' for eps <= -2|e|.

    A and C have a nonnegative gradient bracket, B and D a negative one;
    '-' marks samples outside the constraint.
    """
    e = np.asarray(e, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    nonneg = gradient_bracket(e, eps, c) >= 0
    out = np.full(e.shape, "-", dtype="<U1")
    pos = eps >= 2 * np.abs(e)
    neg = eps <= -2 * np.abs(e)
    out[pos & nonneg] = "A"
    out[pos & ~nonneg] = "B"
    out[neg & nonneg] = "C"
    out[neg & ~nonneg] = "D"
    return out


def sample_constrained(rng: np.random.Generator, n: int, e_max: float = 10.0, c_range=(1e-4, 100.0)):
    """Draw ``(e, eps, c)`` with ``|eps| >= 2|e|``.

    ``|eps| / |e|`` is log-uniform in [2, 200] and the signs of ``e`` and
    ``eps`` are independent fair coins, so all four sign combinations are
    hit evenly.
    """
    e = _nonzero_uniform(rng, 0.0, e_max, n) * rng.choice([-1.0, 1.0], n)
    # clamp so exp(log(2)) rounding below 2 cannot leave the constraint
    ratio = np.maximum(_log_uniform(rng, 2.0, 200.0, n), 2.0)
    eps = np.abs(e) * ratio * rng.choice([-1.0, 1.0], n)
    c = _log_uniform(rng, *c_range, n)
    return e, eps, c


def verify_gradient_bound(
    num_samples: int = 1_000_000,
    rng_seed: int = 0,
    outside_samples: int = 100_000,
    chunk: int = 250_000,
) -> GradientBoundReport:
    """Check ``v_r <= v_m`` on samples with ``|eps| >= 2|e|``.

    Also tallies the four proof cases and searches unconstrained samples
    (``|eps| < 2|e|``) for exceedances ``v_r > v_m``, which show the
    constraint is doing work.
    """
    rng = np.random.default_rng(rng_seed)
    violations = 0
    worst = -np.inf
    strata = {k: 0 for k in "ABCD"}
    examples: list = []
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        e, eps, c = sample_constrained(rng, n)
        v = noise_effects(e, eps, c)
        bad = v["v_r"] > v["v_m"] * (1.0 + ROUNDING_SLACK)
        violations += int(bad.sum())
        for i in np.flatnonzero(bad)[: max(0, 10 - len(examples))]:
            examples.append({"e": float(e[i]), "eps": float(eps[i]), "c": float(c[i])})
        worst = max(worst, float(np.max((v["v_r"] - v["v_m"]) / v["v_m"])))
        labels, counts = np.unique(classify_conditions(e, eps, c), return_counts=True)
        for lab, cnt in zip(labels, counts):
            if lab in strata:
                strata[lab] += int(cnt)
        done += n

    report = GradientBoundReport(num_samples, violations, worst, strata, rng_seed, examples)
    if outside_samples:
        e = _nonzero_uniform(rng, -10.0, 10.0, outside_samples)
        eps = e * rng.uniform(-2.0, 2.0, outside_samples)
        keep = np.abs(eps) < 2 * np.abs(e)
        e, eps = e[keep], eps[keep]
        c = _log_uniform(rng, 1e-4, 100.0, eps.size)
        v = noise_effects(e, eps, c)
        over = np.flatnonzero(v["v_r"] > v["v_m"] * (1.0 + ROUNDING_SLACK))
        report.outside_samples = int(eps.size)
        report.outside_exceedances = int(over.size)
        if over.size:
            i = over[0]
            report.outside_example = {
                "e": float(e[i]),
                "eps": float(eps[i]),
                "c": float(c[i]),
                "v_r": float(v["v_r"][i]),
                "v_m": float(v["v_m"][i]),
            }
    return report
