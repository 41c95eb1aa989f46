import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cattle_tfd.errors import EmptyDatasetError, ValidationError
from cattle_tfd.mlp import (
    AdamState,
    MlpModel,
    TrainConfig,
    adam_step,
    backward,
    batch_loss,
    closed_form_param_count,
    forward,
    init_model,
    iter_batches,
    load_model,
    logits,
    loss_sparse_ce,
    param_count,
    predict,
    save_model,
    softmax,
    train,
)


def numeric_grads(model, X, y, h=1e-5):
    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = batch_loss(forward(model, X), y)
            flat[i] = old - h
            down = batch_loss(forward(model, X), y)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(a, b):
    num = np.abs(a - b)
    den = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float(np.max(num / den))


# ---------------------------------------------------------------- structure


def test_topology_and_counts():
    m = init_model(20, seed=0)
    assert m.dims == (20, 64, 64, 64, 32, 9)
    assert param_count(m) == closed_form_param_count(20) == 64 * 20 + 10_761
    assert closed_form_param_count(142_803) == 9_150_153
    assert closed_form_param_count(1_404) == 100_617
    assert closed_form_param_count(1) == 10_825
    assert init_model(5, n_classes=3).n_classes == 3


def test_init_deterministic_and_glorot():
    a, b = init_model(30, seed=7), init_model(30, seed=7)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert not np.array_equal(a.weights[0], init_model(30, seed=8).weights[0])
    for w, (fi, fo) in zip(a.weights, zip(a.dims[:-1], a.dims[1:])):
        assert np.max(np.abs(w)) <= math.sqrt(6 / (fi + fo))
    assert all(not b.any() for b in a.biases)


def test_init_invalid():
    with pytest.raises(ValidationError):
        init_model(0)


# ---------------------------------------------------------------- forward


def test_zero_model_uniform():
    m = init_model(4)
    for p in m.params():
        p[...] = 0
    np.testing.assert_allclose(forward(m, np.ones(4)), np.full(9, 1 / 9))
    assert predict(m, np.ones(4)) == 1


def test_softmax_zero_logits():
    np.testing.assert_allclose(softmax(np.zeros(9)), np.full(9, 1 / 9))


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-500, 500)))
def test_softmax_property(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-12
    # Order preserving, so argmax survives.
    assert np.argmax(p) == np.argmax(z) or p[np.argmax(z)] == p.max()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 100))
def test_forward_sums_to_one_and_predict_matches_logits(seed, scale):
    rng = np.random.default_rng(seed)
    m = init_model(6, seed=seed)
    x = rng.normal(size=(5, 6)) * scale
    p = forward(m, x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(predict(m, x), np.argmax(logits(m, x), axis=1) + 1)


def test_predict_peak():
    m = init_model(3)
    for p in m.params():
        p[...] = 0
    m.biases[-1][3] = 5.0
    assert predict(m, np.zeros(3)) == 4


def test_forward_errors():
    m = init_model(4)
    with pytest.raises(ValidationError):
        forward(m, np.ones(5))
    with pytest.raises(ValidationError):
        forward(m, np.array([1.0, np.nan, 0, 0]))


# ---------------------------------------------------------------- loss


def test_loss_examples():
    assert loss_sparse_ce(np.eye(9)[2], 3) == 0.0
    assert loss_sparse_ce(np.full(9, 1 / 9), 5) == pytest.approx(math.log(9))
    assert loss_sparse_ce(np.eye(9)[0], 2) == pytest.approx(12 * math.log(10))
    with pytest.raises(ValidationError):
        loss_sparse_ce(np.full(9, 1 / 9), 10)
    with pytest.raises(ValidationError):
        loss_sparse_ce(np.full(9, 1 / 9), 0)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("input_dim, seed", [(10, 0), (20, 1), (3, 2)])
def test_gradients_match_finite_differences(input_dim, seed):
    rng = np.random.default_rng(seed)
    m = init_model(input_dim, seed=seed)
    for b in m.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(6, input_dim))
    y = rng.integers(1, 10, size=6)
    grads, loss = backward(m, X, y)
    assert loss == pytest.approx(batch_loss(forward(m, X), y))
    for g, n in zip(grads, numeric_grads(m, X, y)):
        assert max_rel_error(g, n) < 1e-4


def test_duplicated_sample_gradient():
    rng = np.random.default_rng(3)
    m = init_model(8, seed=3)
    x = rng.normal(size=(1, 8))
    g1, _ = backward(m, x, [4])
    g2, _ = backward(m, np.vstack([x, x]), [4, 4])
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_zero_input_gradient():
    m = init_model(8, seed=4)
    for b in m.biases:
        b[...] = 0.1
    grads, _ = backward(m, np.zeros((3, 8)), [1, 2, 3])
    assert not grads[0].any()
    assert np.any(grads[1] != 0)


def test_backward_errors():
    m = init_model(4)
    with pytest.raises(ValidationError):
        backward(m, np.zeros((0, 4)), [])
    with pytest.raises(ValidationError):
        backward(m, np.zeros((2, 4)), [1])
    with pytest.raises(ValidationError):
        backward(m, np.zeros((2, 4)), [1, 10])


# ---------------------------------------------------------------- adam


def _scalar_model(value=0.0):
    return MlpModel([np.array([[value]])], [np.array([0.0])])


def test_adam_first_step_unit_gradient():
    m = _scalar_model(0.5)
    state = AdamState.for_model(m)
    adam_step(m, [np.array([[1.0]]), np.array([0.0])], state)
    # t=1: m_hat = g = 1, v_hat = g^2 = 1, step = lr * 1 / (1 + eps).
    lr, eps = 0.001, 1e-7
    assert 0.5 - m.weights[0][0, 0] == pytest.approx(lr / (1 + eps), abs=1e-12)
    assert m.biases[0][0] == 0.0
    assert state.t == 1


def test_adam_two_steps_hand_computed():
    m = _scalar_model(0.0)
    state = AdamState.for_model(m)
    b1, b2, eps, lr = 0.9, 0.999, 1e-7, 0.001
    g = [2.0, -0.5]
    mm = vv = 0.0
    w = 0.0
    for t, gt in enumerate(g, start=1):
        mm = b1 * mm + (1 - b1) * gt
        vv = b2 * vv + (1 - b2) * gt * gt
        w -= lr * (mm / (1 - b1**t)) / (math.sqrt(vv / (1 - b2**t)) + eps)
        adam_step(m, [np.array([[gt]]), np.array([0.0])], state)
        assert m.weights[0][0, 0] == pytest.approx(w, abs=1e-15)


def test_adam_zero_gradient_noop():
    m = init_model(5, seed=1)
    before = [p.copy() for p in m.params()]
    state = AdamState.for_model(m)
    adam_step(m, [np.zeros_like(p) for p in m.params()], state)
    for a, b in zip(before, m.params()):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_adam_update_opposes_momentum(seed):
    rng = np.random.default_rng(seed)
    m = init_model(4, seed=seed)
    state = AdamState.for_model(m)
    for _ in range(3):
        before = [p.copy() for p in m.params()]
        adam_step(m, [rng.normal(size=p.shape) for p in m.params()], state)
        for b, p, mom in zip(before, m.params(), state.m):
            delta = p - b
            nz = mom != 0
            assert np.all(np.sign(delta[nz]) == -np.sign(mom[nz]))


def test_adam_shape_mismatch():
    m = init_model(4)
    with pytest.raises(ValidationError):
        adam_step(m, [np.zeros(3)] * len(m.params()), AdamState.for_model(m))
    with pytest.raises(ValidationError):
        adam_step(m, [], AdamState.for_model(m))


# ---------------------------------------------------------------- train


def _separable(n=64, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = np.where(X[:, 0] + X[:, 1] > 0, 1, 2)
    return X, y


def test_train_reduces_loss():
    X, y = _separable()
    res = train(init_model(2, seed=0, n_classes=2), X, y, TrainConfig(epochs=2))
    assert len(res.loss_history) == 2
    assert res.loss_history[-1] < res.loss_history[0]


def test_train_deterministic():
    X, y = _separable()
    a = train(init_model(2, seed=1, n_classes=2), X, y, TrainConfig(epochs=3, shuffle_seed=9)).model
    b = train(init_model(2, seed=1, n_classes=2), X, y, TrainConfig(epochs=3, shuffle_seed=9)).model
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_batches_of_33():
    sizes = [len(b) for b in iter_batches(33, 32, np.arange(33))]
    assert sizes == [32, 1]
    X, y = _separable(33)
    res = train(init_model(2, n_classes=2), X, y, TrainConfig(epochs=1))
    assert res.state.t == 2


def test_train_errors():
    with pytest.raises(EmptyDatasetError):
        train(init_model(2), np.zeros((0, 2)), [])
    with pytest.raises(ValidationError):
        train(init_model(2), np.zeros((3, 2)), [1, 2])
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)


# ---------------------------------------------------------------- persistence


def test_save_load_round_trip(tmp_path):
    m = init_model(7, seed=5)
    save_model(m, tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    assert back.dims == m.dims
    for p, q in zip(m.params(), back.params()):
        np.testing.assert_array_equal(p, q)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:8] == b"CTFDMLP\x00"
    assert len(raw) == 8 + 8 + 8 * 6 + 8 * param_count(m)


def test_load_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nonsense")
    with pytest.raises(ValidationError):
        load_model(p)
    save_model(init_model(3), p)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ValidationError):
        load_model(p)


def test_astype_float32():
    m = init_model(5).astype(np.float32)
    assert m.weights[0].dtype == np.float32
    assert forward(m, np.ones(5, dtype=np.float32)).dtype == np.float32


@pytest.mark.parametrize("g", [0.3, -2.0])
def test_adam_constant_gradient_monotone(g):
    m = _scalar_model(0.0)
    state = AdamState.for_model(m)
    prev = 0.0
    for _ in range(20):
        adam_step(m, [np.array([[g]]), np.array([0.0])], state)
        w = m.weights[0][0, 0]
        assert np.sign(w - prev) == -np.sign(g)
        prev = w
