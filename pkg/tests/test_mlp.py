import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctapnoise.mlp import (
    MlpModel,
    TrainConfig,
    TrainingDiverged,
    backward,
    evaluate,
    forward,
    init_model,
    load_model,
    loss,
    save_model,
    softmax,
    train,
)
from ctapnoise.rng import derive_rng


def toy_model(seed, dims=(3, 5, 4)):
    rng = np.random.default_rng(seed)
    weights = [rng.normal(size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(size=o) for o in dims[1:]]
    return MlpModel(list(dims), weights, biases)


def finite_difference(model, x, y, h=1e-5):
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss(forward(model, x), y)
            p[idx] = old - h
            down = loss(forward(model, x), y)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_gradient_error(seed):
    model = toy_model(seed)
    rng = np.random.default_rng(1000 + seed)
    x = rng.random((8, 3))
    y = np.eye(4)[rng.integers(0, 4, 8)]
    _, gw, gb = backward(model, x, y)
    worst = 0.0
    for a, fd in zip(gw + gb, finite_difference(model, x, y)):
        worst = max(worst, float(np.max(np.abs(a - fd) / (np.abs(a) + 1e-8))))
    return worst


class TestInit:
    def test_deterministic(self):
        a, b = init_model(4, 3), init_model(4, 3)
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    @pytest.mark.parametrize("k", [4, 5])
    def test_shapes(self, k):
        m = init_model(k, 0)
        assert m.layer_dims == [3, 128, 100, k]
        assert m.weights[-1].shape == (k, 100)
        assert all(np.all(b == 0) for b in m.biases)

    def test_second_layer_scale(self):
        w = init_model(4, 1).weights[1]
        assert w.size == 12800
        assert w.std() == pytest.approx(math.sqrt(2 / 128), rel=0.1)
        assert abs(w.mean()) < 0.01

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            init_model(3, 0)


class TestForward:
    def test_zero_model_uniform(self):
        m = init_model(5, 0)
        m.weights = [np.zeros_like(w) for w in m.weights]
        np.testing.assert_allclose(forward(m, [0.3, 0.2, 0.9]), np.full(5, 0.2), atol=1e-15)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(0, 100))
    def test_normalized(self, x, seed):
        p = forward(init_model(4, seed), np.array(x))
        assert np.all(p > 0)
        assert abs(p.sum() - 1) < 1e-12

    def test_leaky_branch(self):
        m = MlpModel([1, 1, 2], [np.array([[-2.0]]), np.array([[1.0], [0.0]])], [np.zeros(1), np.zeros(2)])
        z = -2.0 * 1.5
        expected = softmax(np.array([0.01 * z, 0.0]))
        np.testing.assert_allclose(forward(m, [1.5]), expected, rtol=1e-15)

    @given(st.floats(-50, 50))
    def test_softmax_shift_invariance(self, c):
        m = init_model(4, 2)
        x = np.array([0.5, 0.1, 0.7])
        shifted = m.copy()
        shifted.biases[-1] = shifted.biases[-1] + c
        np.testing.assert_allclose(forward(shifted, x), forward(m, x), atol=1e-12)

    def test_softmax_overflow_safe(self):
        p = softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            forward(init_model(4, 0), [np.nan, 0, 0])


class TestLoss:
    def test_perfect(self):
        y = np.eye(4)[[1]]
        assert abs(loss(y, y)) <= 1e-10

    def test_uniform(self):
        assert loss(np.full((1, 4), 0.25), np.eye(4)[[2]]) == pytest.approx(math.log(4), rel=1e-15)

    def test_mean_of_batch(self):
        pred = np.vstack([np.eye(4)[1], np.full(4, 0.25)])
        y = np.eye(4)[[1, 2]]
        assert loss(pred, y) == pytest.approx(0.5 * math.log(4))

    def test_clamped(self):
        assert loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == pytest.approx(-math.log(1e-12))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss(np.ones((2, 4)) / 4, np.eye(4)[:1])


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        assert max_relative_gradient_error(seed) < 1e-5

    def test_zero_input(self):
        m = toy_model(0)
        m.biases = [np.zeros_like(b) for b in m.biases]
        _, gw, _ = backward(m, np.zeros((4, 3)), np.eye(4))
        np.testing.assert_array_equal(gw[0], 0.0)

    def test_duplicated_sample(self):
        m = toy_model(1)
        x = np.array([[0.2, 0.5, 0.9]])
        y = np.eye(4)[[3]]
        _, gw1, gb1 = backward(m, x, y)
        _, gw2, gb2 = backward(m, np.vstack([x, x]), np.vstack([y, y]))
        for a, b in zip(gw1 + gb1, gw2 + gb2):
            np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-16)


def separable_data(n=200, seed=0):
    rng = derive_rng(seed, "toy")
    x = rng.random((n, 3))
    k = (x[:, 0] > 0.5).astype(int) + 2 * (x[:, 1] > 0.5).astype(int)
    return x, np.eye(4)[k]


class TestTrain:
    def test_loss_decreases(self):
        x, y = separable_data()
        _, rep = train(init_model(4, 0), (x, y), (x[:0], y[:0]), TrainConfig(epochs=100, early_stop_patience=100))
        assert rep.train_loss[-1] < 0.1 * rep.train_loss[0]

    def test_single_class(self):
        x = derive_rng(1).random((40, 3))
        y = np.tile(np.eye(4)[2], (40, 1))
        m, rep = train(init_model(4, 1), (x, y), (x[:8], y[:8]), TrainConfig(epochs=5), test_xy=(x, y))
        assert rep.test_accuracy == 1.0

    def test_deterministic(self):
        x, y = separable_data(seed=2)
        cfg = TrainConfig(epochs=15, seed=4)
        _, a = train(init_model(4, 4), (x[:150], y[:150]), (x[150:], y[150:]), cfg, test_xy=(x, y))
        _, b = train(init_model(4, 4), (x[:150], y[:150]), (x[150:], y[150:]), cfg, test_xy=(x, y))
        assert a == b

    def test_early_stopping_restores_best(self):
        x, y = separable_data(seed=3)
        m, rep = train(init_model(4, 0), (x[:100], y[:100]), (x[100:], y[100:]),
                       TrainConfig(epochs=300, early_stop_patience=3, learning_rate=0.05))
        assert rep.stopped_epoch - rep.best_epoch <= 3
        p = forward(m, x[100:])
        assert loss(p, y[100:]) == pytest.approx(min(rep.val_loss), rel=1e-12)

    def test_divergence_reported(self):
        x, y = separable_data()
        with pytest.raises(TrainingDiverged):
            with np.errstate(all="ignore"):
                train(init_model(4, 0), (x, y), (x, y), TrainConfig(epochs=3, learning_rate=1e308))

    @pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(batch_size=0), dict(learning_rate=0.0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_batch_larger_than_train_set(self):
        x, y = separable_data(n=10)
        with pytest.raises(ValueError):
            train(init_model(4, 0), (x, y), (x, y), TrainConfig(batch_size=32))


class TestEvaluate:
    def test_perfect(self):
        x, y = separable_data(seed=5)
        m, _ = train(init_model(4, 0), (x, y), (x, y), TrainConfig(epochs=300, learning_rate=0.01))
        acc, conf = evaluate(m, x, y)
        if acc == 1.0:
            assert np.count_nonzero(conf - np.diag(np.diag(conf))) == 0
        np.testing.assert_array_equal(conf.sum(axis=1), y.sum(axis=0))

    def test_uniform_model_picks_first_class(self):
        m = init_model(4, 0)
        m.weights = [np.zeros_like(w) for w in m.weights]
        x, y = separable_data(seed=6)
        acc, conf = evaluate(m, x, y)
        assert acc == pytest.approx(y[:, 0].mean())
        assert np.all(conf[:, 1:] == 0)

    def test_mismatched_classes(self):
        with pytest.raises(ValueError):
            evaluate(init_model(5, 0), np.zeros((2, 3)), np.eye(4)[:2])

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(init_model(4, 0), np.zeros((0, 3)), np.zeros((0, 4)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = init_model(5, 7)
        save_model(m, tmp_path / "m.json", TrainConfig(), {"test_accuracy": 0.5})
        back = load_model(tmp_path / "m.json")
        assert back.layer_dims == m.layer_dims and back.seed == 7
        for p, q in zip(m.parameters(), back.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_rejects_bad_shapes(self, tmp_path):
        import json

        m = init_model(4, 0)
        save_model(m, tmp_path / "m.json")
        d = json.loads((tmp_path / "m.json").read_text())
        d["weights"][1] = d["weights"][1][:-1]
        (tmp_path / "bad.json").write_text(json.dumps(d))
        with pytest.raises(ValueError):
            load_model(tmp_path / "bad.json")
