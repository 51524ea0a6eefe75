import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softquant import nn
from softquant.errors import ConfigurationError, InputError, NumericError


def small_mlp(seed=7, fan_in=5, hidden=8, classes=3):
    specs = [
        nn.LayerSpec("dense1", "dense", fan_in, hidden),
        nn.LayerSpec("out", "dense", hidden, classes, activation="none"),
    ]
    return nn.init_model(specs, seed=seed)


def small_cnn(seed=3):
    specs = [
        nn.LayerSpec("conv1", "conv2d", 1, 3, kernel=3),
        nn.LayerSpec("conv2", "conv2d", 3, 4, kernel=3),
        nn.LayerSpec("dense1", "dense", 4 * 4 * 4, 10),
        nn.LayerSpec("out", "dense", 10, 3, activation="none"),
    ]
    return nn.init_model(specs, seed=seed)


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        model = small_mlp()
        for layer in model.layers:
            layer.weights[:] = 0.0
        x = np.random.default_rng(0).normal(size=(4, 5))
        assert np.all(nn.forward(model, x) == 0.0)

    def test_identity_dense_layer(self):
        spec = nn.LayerSpec("id", "dense", 1, 1, has_bias=False, activation="none")
        model = nn.init_model([spec], seed=0)
        model.layers[0].weights[:] = 1.0
        x = np.array([[0.3], [-2.0], [7.5]])
        np.testing.assert_array_equal(nn.forward(model, x), x)

    def test_matches_naive_matmul_oracle(self):
        model = small_mlp(seed=12)
        x = np.random.default_rng(1).normal(size=(6, 5))
        got = nn.forward(model, x)
        # brute-force oracle: explicit loops
        d1, out = model.layers
        expected = np.zeros((6, 3))
        for b in range(6):
            h = np.zeros(8)
            for j in range(8):
                s = d1.bias[j]
                for i in range(5):
                    s += x[b, i] * d1.weights[i, j]
                h[j] = max(s, 0.0)
            for c in range(3):
                s = out.bias[c]
                for j in range(8):
                    s += h[j] * out.weights[j, c]
                expected[b, c] = s
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_raises(self):
        model = small_mlp()
        with pytest.raises(ConfigurationError):
            nn.forward(model, np.zeros((2, 9)))

    def test_deterministic(self):
        model = small_mlp()
        x = np.random.default_rng(2).normal(size=(5, 5))
        np.testing.assert_array_equal(nn.forward(model, x), nn.forward(model, x))


class TestCrossEntropy:
    def test_uniform_logits_equal_log_c(self):
        for c in (2, 5, 8):
            logits = np.full((4, c), 0.37)
            assert nn.cross_entropy(logits, np.zeros(4, dtype=int)) == np.log(c)

    def test_correct_margin_decreases_loss(self):
        losses = []
        for margin in (0.5, 1.0, 2.0):
            logits = np.zeros((1, 4))
            logits[0, 2] = margin
            losses.append(nn.cross_entropy(logits, [2]))
        assert losses[0] < np.log(4)
        assert losses[0] > losses[1] > losses[2]

    def test_matches_log_sum_exp_oracle(self):
        r = np.random.default_rng(5)
        logits = r.normal(scale=3.0, size=(16, 6))
        labels = r.integers(0, 6, size=16)
        expected = np.mean(
            [np.log(np.exp(z).sum()) - z[y] for z, y in zip(logits, labels)]
        )
        assert abs(nn.cross_entropy(logits, labels) - expected) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            nn.cross_entropy(np.zeros((2, 3)), [0, 3])

    @given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=30, deadline=None)
    def test_nonnegative(self, c, seed):
        r = np.random.default_rng(seed)
        logits = r.normal(scale=5.0, size=(8, c))
        labels = r.integers(0, c, size=8)
        assert nn.cross_entropy(logits, labels) >= 0.0


def finite_difference_check(model, x, y, rtol=1e-5, atol=1e-8, eps=1e-5):
    _, grads = nn.loss_and_gradient(model, x, y)
    for layer in model.layers:
        tensors = [("w", layer.weights, grads.weights[layer.spec.name])]
        if layer.bias is not None:
            tensors.append(("b", layer.bias, grads.biases[layer.spec.name]))
        for _, tensor, grad in tensors:
            it = np.nditer(tensor, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = tensor[i]
                tensor[i] = orig + eps
                lp = nn.cross_entropy(nn.forward(model, x), y)
                tensor[i] = orig - eps
                lm = nn.cross_entropy(nn.forward(model, x), y)
                tensor[i] = orig
                fd = (lp - lm) / (2 * eps)
                assert np.isclose(grad[i], fd, rtol=rtol, atol=atol), (
                    layer.spec.name,
                    i,
                    grad[i],
                    fd,
                )


class TestTaskGradient:
    def test_dead_input_has_zero_gradient(self):
        model = small_mlp()
        x = np.random.default_rng(0).normal(size=(6, 5))
        x[:, 3] = 0.0  # input coordinate that never fires
        grads = nn.task_gradient(model, x, np.zeros(6, dtype=int))
        assert np.all(grads.weights["dense1"][3, :] == 0.0)

    def test_mlp_matches_finite_differences(self):
        model = small_mlp(seed=21)
        r = np.random.default_rng(3)
        x = r.normal(size=(7, 5))
        y = r.integers(0, 3, size=7)
        finite_difference_check(model, x, y)

    def test_cnn_matches_finite_differences(self):
        model = small_cnn()
        r = np.random.default_rng(4)
        x = r.normal(size=(3, 1, 8, 8))
        y = r.integers(0, 3, size=3)
        finite_difference_check(model, x, y)

    def test_duplicated_batch_equals_single_example(self):
        model = small_mlp(seed=9)
        r = np.random.default_rng(6)
        x = r.normal(size=(1, 5))
        g1 = nn.task_gradient(model, x, [1])
        g2 = nn.task_gradient(model, np.repeat(x, 4, axis=0), [1, 1, 1, 1])
        for name in g1.weights:
            np.testing.assert_allclose(g1.weights[name], g2.weights[name], rtol=1e-12)


class TestSgdNesterov:
    def test_zero_gradient_leaves_weights(self):
        model = small_mlp()
        before = [l.weights.copy() for l in model.layers]
        grads = nn.Gradients(
            weights={l.spec.name: np.zeros_like(l.weights) for l in model.layers},
            biases={l.spec.name: np.zeros_like(l.bias) for l in model.layers},
        )
        nn.sgd_nesterov_step(model, grads, lr=0.1, momentum=0.9)
        for b, l in zip(before, model.layers):
            np.testing.assert_array_equal(b, l.weights)

    def test_zero_momentum_is_plain_sgd(self):
        model = small_mlp(seed=2)
        g = {l.spec.name: np.full_like(l.weights, 0.25) for l in model.layers}
        gb = {l.spec.name: np.zeros_like(l.bias) for l in model.layers}
        before = [l.weights.copy() for l in model.layers]
        nn.sgd_nesterov_step(model, nn.Gradients(weights=g, biases=gb), lr=0.1, momentum=0.0)
        for b, l in zip(before, model.layers):
            np.testing.assert_allclose(l.weights, b - 0.1 * 0.25, rtol=1e-15)

    def test_two_steps_match_scalar_recurrence(self):
        spec = nn.LayerSpec("w", "dense", 1, 1, has_bias=False, activation="none")
        model = nn.init_model([spec], seed=0)
        model.layers[0].weights[:] = 1.0
        lr, mu, g = 0.01, 0.9, 0.5
        grads = nn.Gradients(weights={"w": np.array([[g]])}, biases={})
        nn.sgd_nesterov_step(model, grads, lr, mu)
        nn.sgd_nesterov_step(model, grads, lr, mu)
        # reference recurrence: v <- mu v - lr g; theta <- theta + mu v - lr g
        theta, v = 1.0, 0.0
        for _ in range(2):
            v = mu * v - lr * g
            theta = theta + mu * v - lr * g
        assert abs(model.layers[0].weights[0, 0] - theta) < 1e-12

    def test_nonfinite_gradient_aborts_without_touching(self):
        model = small_mlp()
        before = [l.weights.copy() for l in model.layers]
        g = {l.spec.name: np.zeros_like(l.weights) for l in model.layers}
        g["dense1"][0, 0] = np.nan
        gb = {l.spec.name: np.zeros_like(l.bias) for l in model.layers}
        with pytest.raises(NumericError):
            nn.sgd_nesterov_step(model, nn.Gradients(weights=g, biases=gb), 0.1, 0.9)
        for b, l in zip(before, model.layers):
            np.testing.assert_array_equal(b, l.weights)


def test_duplicate_layer_names_rejected():
    specs = [nn.LayerSpec("a", "dense", 2, 2), nn.LayerSpec("a", "dense", 2, 2)]
    with pytest.raises(ConfigurationError):
        nn.init_model(specs, seed=0)


def test_training_determinism():
    r = np.random.default_rng(8)
    x = r.normal(size=(32, 5))
    y = r.integers(0, 3, size=32)

    def run():
        model = small_mlp(seed=5)
        for _ in range(10):
            _, grads = nn.loss_and_gradient(model, x, y)
            nn.sgd_nesterov_step(model, grads, lr=0.05, momentum=0.9)
        return model

    m1, m2 = run(), run()
    for l1, l2 in zip(m1.layers, m2.layers):
        np.testing.assert_array_equal(l1.weights, l2.weights)
        np.testing.assert_array_equal(l1.velocity, l2.velocity)
