import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, straight_line_forward
from timesql.losses import SqlHyperParams, sql_loss
from timesql.model import (
    REVIN_EPS,
    Architecture,
    ModelParams,
    ShapeMismatchError,
    backward,
    forward,
    init_params,
    load_checkpoint,
    rev_in_denormalize,
    rev_in_normalize,
    save_checkpoint,
    zero_params,
)

SCALES = [(4, 2), (8, 4)]


def small_arch(**kw):
    base = dict(n_vars=3, lookback=16, horizon=5, scales=SCALES, hidden=4)
    base.update(kw)
    return Architecture(**base)


def test_revin_round_trip_hand_values():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    z, stats = rev_in_normalize(x)
    assert stats.mean[0, 0] == 2.5
    assert abs(stats.std[0, 0] - np.sqrt(1.25 + REVIN_EPS)) < 1e-15
    np.testing.assert_allclose(rev_in_denormalize(z, stats), x, rtol=1e-12)


def test_revin_constant_row_maps_to_zero():
    z, stats = rev_in_normalize(np.full((2, 8), 3.0))
    assert np.all(z == 0.0)
    assert np.allclose(stats.std, np.sqrt(REVIN_EPS))


def test_revin_single_step_rejected():
    with pytest.raises(ValueError, match="at least 2"):
        rev_in_normalize(np.ones((3, 1)))


@given(st.integers(2, 40), st.floats(-1e3, 1e3), st.floats(1e-2, 1e3), st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_revin_round_trip_property(length, shift, scale, seed):
    x = shift + scale * np.random.default_rng(seed).normal(size=(3, length))
    z, stats = rev_in_normalize(x)
    back = rev_in_denormalize(z, stats)
    assert np.all(np.abs(back - x) <= 1e-6 * np.maximum(np.abs(x), 1.0))


def test_zero_network_predicts_input_mean():
    arch = small_arch()
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(3, 16))
    pred = forward(zero_params(arch), x).prediction
    assert pred.shape == (3, 5)
    np.testing.assert_array_equal(pred, np.repeat(x.mean(axis=1, keepdims=True), 5, axis=1))


def test_forward_matches_straight_line_oracle():
    arch = small_arch()
    params = init_params(arch, seed=3)
    x = np.random.default_rng(1).normal(size=(3, 16)) * 4 + 1
    named = dict(params.named_arrays())
    expected = straight_line_forward(named, SCALES, x, arch.horizon)
    assert np.max(np.abs(forward(params, x).prediction - expected)) < 1e-10


def test_batched_forward_equals_per_window():
    arch = small_arch()
    params = init_params(arch, seed=0)
    xb = np.random.default_rng(2).normal(size=(4, 3, 16))
    batched = forward(params, xb).prediction
    for i in range(4):
        np.testing.assert_allclose(batched[i], forward(params, xb[i]).prediction, rtol=0, atol=1e-12)


def test_channel_independence():
    arch = small_arch()
    params = init_params(arch, seed=1)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 16))
    y = x.copy()
    y[2] = rng.normal(size=16) * 10
    a, b = forward(params, x).prediction, forward(params, y).prediction
    np.testing.assert_array_equal(a[:2], b[:2])


def test_shape_mismatch_messages():
    params = init_params(small_arch(), 0)
    with pytest.raises(ShapeMismatchError, match="lookback=16"):
        forward(params, np.zeros((3, 15)))
    with pytest.raises(ShapeMismatchError):
        ModelParams.unflatten(small_arch(), np.zeros(3))


def test_init_is_seeded_and_bounded():
    arch = small_arch()
    a, b, c = init_params(arch, 7), init_params(arch, 7), init_params(arch, 8)
    assert np.array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), c.flatten())
    for name, arr in a.named_arrays():
        fan_in = 4 if name.startswith("enc0") else 8 if name.startswith("enc1") else arch.feature_width
        assert np.all(np.abs(arr) <= 1 / np.sqrt(fan_in))


def test_flatten_round_trip():
    arch = small_arch(affine=True)
    p = init_params(arch, 4)
    q = ModelParams.unflatten(arch, p.flatten())
    for (n1, a1), (n2, a2) in zip(p.named_arrays(), q.named_arrays()):
        assert n1 == n2 and np.array_equal(a1, a2)


def _check_backward(arch, seed):
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed)
    if arch.affine:
        flat = params.flatten()
        # move the affine weights away from their identity start
        flat[-2 * arch.n_vars :] += rng.uniform(0.5, 1.0, 2 * arch.n_vars) * rng.choice([-1, 1], 2 * arch.n_vars) * 0.3
        params = ModelParams.unflatten(arch, flat)
    x = rng.normal(size=(2, arch.n_vars, arch.lookback)) * 3 + 1
    target = rng.normal(size=(2, arch.n_vars, arch.horizon))

    def loss(flat):
        return float(np.sum((forward(ModelParams.unflatten(arch, flat), x).prediction - target) ** 2))

    trace = forward(params, x)
    analytic = backward(trace, 2 * (trace.prediction - target), params)
    fd = central_diff(loss, params.flatten(), h=1e-6)
    return np.linalg.norm(analytic - fd) / np.linalg.norm(fd)


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_difference(seed):
    rng = np.random.default_rng(100 + seed)
    lookback = int(rng.integers(8, 20))
    scales = [(int(rng.integers(2, lookback // 2 + 1)), int(rng.integers(1, 4)))]
    if seed % 2:
        scales.append((int(rng.integers(2, lookback + 1)), int(rng.integers(1, 5))))
    arch = Architecture(
        n_vars=int(rng.integers(1, 4)),
        lookback=lookback,
        horizon=int(rng.integers(1, 5)),
        scales=scales,
        hidden=int(rng.integers(2, 5)),
        affine=bool(seed % 3 == 0),
    )
    assert _check_backward(arch, seed) < 1e-6


def test_backward_composes_with_sql_gradient():
    arch = small_arch()
    params = init_params(arch, 2)
    rng = np.random.default_rng(9)
    x, target = rng.normal(size=(3, 3, 16)), rng.normal(size=(3, 3, 5))
    hp = SqlHyperParams(c=0.5, alpha=0.4, beta=0.01, gamma=0.02)

    def loss(flat):
        return sql_loss(forward(ModelParams.unflatten(arch, flat), x).prediction, target, hp).total

    trace = forward(params, x)
    g = backward(trace, sql_loss(trace.prediction, target, hp).grad_wrt_prediction, params)
    fd = central_diff(loss, params.flatten(), h=1e-6)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_backward_rejects_wrong_grad_shape():
    params = init_params(small_arch(), 0)
    trace = forward(params, np.zeros((3, 16)) + np.arange(16))
    with pytest.raises(ShapeMismatchError):
        backward(trace, np.zeros((3, 4)), params)


def test_checkpoint_round_trip(tmp_path):
    arch = small_arch(affine=True)
    p = init_params(arch, 11)
    save_checkpoint(tmp_path / "m", p, {"note": "x"})
    q = load_checkpoint(tmp_path / "m", expected=arch)
    assert np.array_equal(p.flatten(), q.flatten())
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(tmp_path / "m", expected=small_arch(hidden=5))


def test_unsupported_encoder():
    with pytest.raises(ValueError, match="unsupported encoder"):
        small_arch(encoder="lstm")
