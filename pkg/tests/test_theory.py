import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timesql.losses import LossParameterError
from timesql.theory import (
    UndefinedNormalizationError,
    classify_conditions,
    gradient_bracket,
    noise_effect,
    noise_effect_from_losses,
    noise_effects,
    sample_constrained,
    verify_value_bound,
    verify_gradient_bound,
)

nonzero = st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3)
noise = st.floats(-10, 10)
width = st.floats(1e-3, 100)


def test_zero_noise_has_zero_effect():
    s = noise_effect(1.5, 0.0, 0.3)
    assert s.v_mse == s.v_rqf == s.v_m == s.v_r == 0.0


def test_hand_computed_point():
    # e=1, eps=1, c=1: shift 3, noisy denominator 5
    s = noise_effect(1.0, 1.0, 1.0)
    assert s.v_mse == 3.0
    assert abs(s.v_rqf - 3.0 / 5.0) < 1e-15
    assert s.v_m == 1.0
    # bracket 2*4 - 1*25 = -17, divided by 1 * 25
    assert abs(s.v_r - 17.0 / 25.0) < 1e-15


def test_undefined_normalization():
    with pytest.raises(UndefinedNormalizationError, match="undefined normalization"):
        noise_effect(0.0, 1.0, 1.0)


def test_nonpositive_width():
    with pytest.raises(LossParameterError):
        noise_effect(1.0, 1.0, 0.0)


@given(nonzero, noise, width)
@settings(max_examples=300, deadline=None)
def test_closed_forms_match_loss_functions(e, eps, c):
    closed = noise_effect(e, eps, c)
    built = noise_effect_from_losses(e, eps, c)
    for key in ("v_mse", "v_rqf", "v_m", "v_r"):
        a, b = getattr(closed, key), built[key]
        assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


@given(nonzero, noise, width)
@settings(max_examples=300, deadline=None)
def test_value_effect_never_exceeds_mse(e, eps, c):
    s = noise_effect(e, eps, c)
    assert s.v_rqf <= s.v_mse * (1 + 1e-12)


@given(nonzero, st.floats(2, 200), st.booleans(), width)
@settings(max_examples=300, deadline=None)
def test_gradient_effect_bounded_under_constraint(e, ratio, neg, c):
    eps = abs(e) * ratio * (-1 if neg else 1)
    s = noise_effect(e, eps, c)
    assert s.v_r <= s.v_m * (1 + 1e-12)


@given(nonzero, noise, width)
@settings(max_examples=200, deadline=None)
def test_joint_sign_flip_invariance(e, eps, c):
    a, b = noise_effect(e, eps, c), noise_effect(-e, -eps, c)
    for key in ("v_mse", "v_rqf", "v_m", "v_r"):
        assert abs(getattr(a, key) - getattr(b, key)) <= 1e-12 * max(1.0, getattr(a, key))


def test_gradient_bound_fails_without_constraint():
    # bracket 0.5 * 1.3**2 - 0.55**2 = 0.5425 over 0.55**2
    s = noise_effect(1.0, -0.5, 0.3)
    assert abs(s.v_r - 0.5425 / 0.3025) < 1e-12
    assert s.v_r > s.v_m == 0.5


def test_classify_conditions_cases():
    e = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    eps = np.array([2.0, 50.0, -2.0, -50.0, 0.5])
    c = np.array([100.0, 0.01, 100.0, 0.01, 1.0])
    labels = classify_conditions(e, eps, c)
    signs = gradient_bracket(e, eps, c) >= 0
    assert list(labels[:4]) == [("A" if signs[0] else "B"), ("A" if signs[1] else "B"),
                                ("C" if signs[2] else "D"), ("C" if signs[3] else "D")]
    assert labels[4] == "-"


def test_sampler_respects_constraint():
    e, eps, c = sample_constrained(np.random.default_rng(0), 50_000)
    assert np.all(np.abs(eps) >= 2 * np.abs(e))
    assert np.all(e != 0) and np.all(c > 0)


def test_verify_small_runs_deterministic():
    a = verify_value_bound(20_000, rng_seed=5)
    b = verify_value_bound(20_000, rng_seed=5)
    assert a.to_dict() == b.to_dict()
    assert a.violations == 0
    r = verify_gradient_bound(20_000, rng_seed=5, outside_samples=5_000)
    assert r.violations == 0 and all(v > 0 for v in r.strata.values())
    assert sum(r.strata.values()) == 20_000
    assert r.outside_exceedances > 0


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    e, eps, c = rng.uniform(0.1, 5, 10), rng.normal(size=10), rng.uniform(0.1, 5, 10)
    v = noise_effects(e, eps, c)
    for i in range(10):
        s = noise_effect(e[i], eps[i], c[i])
        assert v["v_r"][i] == s.v_r and v["v_rqf"][i] == s.v_rqf
