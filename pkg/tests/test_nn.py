import numpy as np
import pytest

from helpers import gradcheck_relative_error, random_gradcheck_net

from flowcascade.nn import (
    SELU_ALPHA,
    SELU_LAMBDA,
    AdamaxState,
    DenseLayer,
    Network,
    TrainConfig,
    adamax_step,
    backward,
    evaluate_loss,
    grid_search,
    loss_value,
    net_from_json,
    net_to_json,
    train,
)


def identity_net(weight=1.0, bias=0.0, loss="mean-squared-error"):
    return Network(
        layers=[DenseLayer(np.array([[weight]]), np.array([bias]), "identity")],
        loss=loss,
    )


class TestForward:
    def test_identity_network_passthrough(self):
        net = Network(
            layers=[DenseLayer(np.eye(3), np.zeros(3), "identity")],
            loss="mean-squared-error",
        )
        x = np.array([0.3, -1.2, 7.0])
        assert np.array_equal(net.forward(x), x)

    def test_relu_definition(self):
        net = Network(
            layers=[DenseLayer(np.eye(2), np.zeros(2), "relu")],
            loss="mean-squared-error",
        )
        assert np.array_equal(net.forward(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_selu_at_zero_and_constants(self):
        net = Network(
            layers=[DenseLayer(np.eye(1), np.zeros(1), "selu")],
            loss="mean-squared-error",
        )
        assert net.forward(np.array([0.0]))[0] == 0.0
        assert abs(net.forward(np.array([1.0]))[0] - SELU_LAMBDA) < 1e-15
        expected_neg = SELU_LAMBDA * SELU_ALPHA * (np.exp(-1.0) - 1.0)
        assert abs(net.forward(np.array([-1.0]))[0] - expected_neg) < 1e-15

    def test_softmax_sums_to_one_and_positive(self):
        rng = np.random.default_rng(0)
        net = Network.create([4, 5], ["softmax"], "categorical-cross-entropy", seed=1)
        for _ in range(20):
            out = net.forward(rng.normal(0, 10, 4))
            assert abs(out.sum() - 1.0) < 1e-9
            assert (out > 0).all()

    def test_dimension_mismatch_raises(self):
        net = Network.create([4, 2], ["relu"], "mean-squared-error")
        with pytest.raises(ValueError, match="dim"):
            net.forward(np.zeros(5))

    def test_batch_matches_single(self):
        net = Network.create([3, 4, 2], ["selu", "sigmoid"], "binary-cross-entropy", seed=3)
        rng = np.random.default_rng(4)
        X = rng.normal(size=(6, 3))
        batch = net.forward(X)
        for i in range(6):
            assert np.allclose(batch[i], net.forward(X[i]), atol=1e-15)


class TestBackward:
    def test_hand_computed_single_weight(self):
        # L = (y_hat - y)^2, w=2, b=0, x=1, y=0 -> dL/dw = 2*(2-0)*1 = 4
        net = identity_net(weight=2.0)
        loss, grads = backward(net, np.array([1.0]), np.array([0.0]))
        assert abs(loss - 4.0) < 1e-12
        assert abs(grads[0][0, 0] - 4.0) < 1e-12

    def test_zero_input_zeroes_first_layer_weight_grads(self):
        net = Network.create([3, 2, 2], ["sigmoid", "softmax"], "categorical-cross-entropy", seed=5)
        _, grads = backward(net, np.zeros(3), np.array([1.0, 0.0]))
        assert np.all(grads[0] == 0.0)  # first-layer weights
        assert np.any(grads[1] != 0.0)  # bias gradients survive

    def test_target_shape_mismatch(self):
        net = identity_net()
        with pytest.raises(ValueError):
            backward(net, np.array([1.0]), np.array([0.0, 1.0]))


class TestGradientCheck:
    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(2024)
        seen = set()
        for _ in range(50):
            net, x, y = random_gradcheck_net(rng)
            seen.add((net.loss, tuple(l.activation for l in net.layers)))
            err = gradcheck_relative_error(net, x, y)
            assert err < 1e-4, f"loss={net.loss} acts={[l.activation for l in net.layers]}"
        activations_seen = {a for _, acts in seen for a in acts}
        assert {"relu", "selu", "sigmoid", "softmax"} <= activations_seen
        assert {loss for loss, _ in seen} == {
            "mean-squared-error", "categorical-cross-entropy", "binary-cross-entropy",
        }


class TestAdamax:
    def test_hand_computed_single_step(self):
        p = [np.array([1.0])]
        g = [np.array([1.0])]
        cfg = TrainConfig()
        state = AdamaxState.zeros(p)
        adamax_step(p, g, state, cfg)
        m = 0.1 * 1.0
        u = 1.0
        expected = 1.0 - (0.002 / (1 - 0.9)) * m / (u + 1e-8)
        assert state.t == 1
        assert abs(state.m[0][0] - 0.1) < 1e-15
        assert abs(state.u[0][0] - 1.0) < 1e-15
        assert abs(p[0][0] - expected) < 1e-12
        assert abs(p[0][0] - 0.998) < 1e-9

    def test_zero_gradient_no_move(self):
        p = [np.array([5.0, -3.0])]
        state = AdamaxState.zeros(p)
        adamax_step(p, [np.zeros(2)], state, TrainConfig())
        assert np.array_equal(p[0], [5.0, -3.0])

    def test_two_identical_steps_nonincreasing_delta(self):
        cfg = TrainConfig()
        p = [np.array([1.0])]
        state = AdamaxState.zeros(p)
        before = p[0][0]
        adamax_step(p, [np.array([1.0])], state, cfg)
        d1 = abs(p[0][0] - before)
        mid = p[0][0]
        adamax_step(p, [np.array([1.0])], state, cfg)
        d2 = abs(p[0][0] - mid)
        # hand computation: m2=0.19, u2=1, scale2=0.002/0.19 -> step 0.002 again
        assert d2 <= d1 + 1e-15

    def test_all_zero_gradients_never_divide_by_zero(self):
        p = [np.zeros((3, 3)), np.zeros(3)]
        state = AdamaxState.zeros(p)
        for _ in range(3):
            adamax_step(p, [np.zeros((3, 3)), np.zeros(3)], state, TrainConfig())
        assert all(np.isfinite(x).all() for x in p)


def gaussian_blobs(n=200, seed=0):
    """Two separable blobs; the threshold rule x0 > 0 classifies the
    generator output perfectly, which we assert before using it."""
    rng = np.random.default_rng(seed)
    half = n // 2
    x0 = rng.normal(-2.0, 0.45, (half, 2))
    x1 = rng.normal(2.0, 0.45, (n - half, 2))
    X = np.vstack([x0, x1])
    y = np.array([[0.0]] * half + [[1.0]] * (n - half))
    assert ((X[:, 0] > 0) == (y[:, 0] == 1)).all(), "generator not separable"
    return X, y


class TestTrain:
    def test_blobs_reach_high_accuracy(self):
        X, y = gaussian_blobs()
        net = Network.create([2, 8, 1], ["relu", "sigmoid"], "binary-cross-entropy", seed=1)
        train(net, X, y, TrainConfig(epochs=50, batch_size=16, learning_rate=0.01, shuffle_seed=2))
        pred = (net.forward(X)[:, 0] >= 0.5).astype(float)
        assert (pred == y[:, 0]).mean() >= 0.99

    def test_zero_epochs_is_noop(self):
        X, y = gaussian_blobs(40)
        net = Network.create([2, 4, 1], ["relu", "sigmoid"], "binary-cross-entropy", seed=1)
        before = [p.copy() for p in net.parameters()]
        history = train(net, X, y, TrainConfig(epochs=0))
        assert history == []
        for a, b in zip(before, net.parameters()):
            assert np.array_equal(a, b)

    def test_same_seed_identical_parameters(self):
        X, y = gaussian_blobs(60)
        results = []
        for _ in range(2):
            net = Network.create([2, 6, 1], ["relu", "sigmoid"], "binary-cross-entropy", seed=9)
            train(net, X, y, TrainConfig(epochs=5, shuffle_seed=7))
            results.append([p.copy() for p in net.parameters()])
        for a, b in zip(*results):
            assert np.array_equal(a, b)

    def test_empty_dataset_rejected(self):
        net = Network.create([2, 1], ["sigmoid"], "binary-cross-entropy")
        with pytest.raises(ValueError):
            train(net, np.empty((0, 2)), np.empty((0, 1)), TrainConfig(epochs=1))

    def test_loss_trend_nonincreasing_in_sliding_mean(self):
        X, y = gaussian_blobs(120, seed=5)
        net = Network.create([2, 8, 1], ["relu", "sigmoid"], "binary-cross-entropy", seed=2)
        history = train(net, X, y, TrainConfig(epochs=30, shuffle_seed=3))
        smoothed = [np.mean(history[i : i + 5]) for i in range(len(history) - 4)]
        for a, b in zip(smoothed, smoothed[1:]):
            assert b <= a + 1e-6

    def test_per_epoch_history_length(self):
        X, y = gaussian_blobs(40)
        net = Network.create([2, 4, 1], ["relu", "sigmoid"], "binary-cross-entropy", seed=1)
        assert len(train(net, X, y, TrainConfig(epochs=7))) == 7


class TestGridSearch:
    def _data(self):
        X, y = gaussian_blobs(120, seed=3)
        return X[:80], y[:80], X[80:], y[80:]

    def build(self, cand):
        Xt, yt, _, _ = self._data()
        net = Network.create([2, 4, 1], ["relu", "sigmoid"], "binary-cross-entropy", seed=0)
        return net, TrainConfig(epochs=cand["epochs"], shuffle_seed=1)

    def test_single_candidate(self):
        Xt, yt, Xv, yv = self._data()
        res = grid_search([{"epochs": 3}], self.build, Xt, yt, Xv, yv)
        assert res.best_index == 0

    def test_trained_beats_untrained(self):
        Xt, yt, Xv, yv = self._data()
        res = grid_search([{"epochs": 0}, {"epochs": 25}], self.build, Xt, yt, Xv, yv)
        # sanity: measure untrained loss directly and confirm it lost
        untrained, _ = self.build({"epochs": 0})
        assert res.val_losses[0] == pytest.approx(evaluate_loss(untrained, Xv, yv))
        assert res.best_index == 1
        assert res.val_losses[1] < res.val_losses[0]

    def test_duplicates_tie_break_to_first(self):
        Xt, yt, Xv, yv = self._data()
        res = grid_search([{"epochs": 5}, {"epochs": 5}], self.build, Xt, yt, Xv, yv)
        assert res.best_index == 0
        assert res.val_losses[0] == res.val_losses[1]


class TestSerialization:
    def test_bit_exact_round_trip(self):
        net = Network.create([3, 7, 2], ["selu", "softmax"], "categorical-cross-entropy", seed=13)
        train(
            net,
            np.random.default_rng(0).normal(size=(20, 3)),
            np.eye(2)[np.random.default_rng(1).integers(0, 2, 20)],
            TrainConfig(epochs=2),
        )
        back = net_from_json(net_to_json(net))
        assert back.loss == net.loss
        for a, b in zip(net.layers, back.layers):
            assert a.activation == b.activation
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.biases, b.biases)

    def test_layer_dim_validation(self):
        with pytest.raises(ValueError, match="disagree"):
            Network(
                layers=[
                    DenseLayer(np.zeros((3, 2)), np.zeros(3), "relu"),
                    DenseLayer(np.zeros((2, 4)), np.zeros(2), "relu"),
                ],
                loss="mean-squared-error",
            )
