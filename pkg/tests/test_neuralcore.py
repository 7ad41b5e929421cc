import numpy as np
import pytest

from connlatent import neuralcore as nc
from connlatent.errors import ParseError, ShapeError, TrainingError


def random_net(rng, dims, activations):
    return [nc.DenseLayer(rng.standard_normal((b, a)) * 0.5, rng.standard_normal(b) * 0.1, act)
            for a, b, act in zip(dims[:-1], dims[1:], activations)]


def central_difference(f, p, idx, h=1e-5):
    old = p[idx]
    p[idx] = old + h
    up = f()
    p[idx] = old - h
    down = f()
    p[idx] = old
    return (up - down) / (2 * h)


class TestForward:
    def test_zero_network(self):
        layer = nc.DenseLayer(np.zeros((3, 4)), np.zeros(3), "identity")
        out, _ = nc.forward([layer], np.ones((2, 4)))
        np.testing.assert_array_equal(out, np.zeros((2, 3)))

    def test_relu_identity_weights(self):
        layer = nc.DenseLayer(np.eye(2), np.zeros(2), "relu")
        out, _ = nc.forward([layer], np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(out, [[0.0, 2.0]])

    def test_output_shape(self, rng):
        out, tape = nc.forward(random_net(rng, [6, 4, 3], ["relu", "identity"]),
                               rng.standard_normal((3, 6)))
        assert out.shape == (3, 3) and tape.output_shape == (3, 3)

    def test_input_mismatch(self, rng):
        with pytest.raises(ShapeError):
            nc.forward(random_net(rng, [6, 4], ["relu"]), np.zeros((2, 5)))

    def test_inconsistent_layer(self):
        with pytest.raises(ShapeError):
            nc.DenseLayer(np.zeros((3, 4)), np.zeros(2))

    def test_bit_identical(self, rng):
        net = random_net(rng, [5, 8, 2], ["relu", "identity"])
        x = rng.standard_normal((7, 5))
        assert np.array_equal(nc.forward(net, x)[0], nc.forward(net, x)[0])


class TestBackward:
    def test_linear_sum_loss(self, rng):
        x = rng.standard_normal((4, 3))
        layer = nc.DenseLayer(np.eye(3), np.zeros(3), "identity")
        out, tape = nc.forward([layer], x)
        [(dw, db)], dx = nc.backward(tape, np.ones_like(out))
        # d(sum W x)/dW[o, i] = sum over batch of x[:, i]
        np.testing.assert_allclose(dw, np.tile(x.sum(axis=0), (3, 1)))
        np.testing.assert_array_equal(db, [4, 4, 4])
        np.testing.assert_array_equal(dx, np.ones((4, 3)))

    def test_relu_subgradient_at_zero(self):
        layer = nc.DenseLayer(np.eye(2), np.zeros(2), "relu")
        _, tape = nc.forward([layer], np.array([[0.0, 1.0]]))
        [(dw, db)], dx = nc.backward(tape, np.ones((1, 2)))
        np.testing.assert_array_equal(db, [0.0, 1.0])
        np.testing.assert_array_equal(dx, [[0.0, 1.0]])

    def test_finite_differences(self, rng):
        net = random_net(rng, [7, 6, 5, 4], ["relu", "relu", "identity"])
        x = rng.standard_normal((5, 7))
        target = rng.standard_normal((5, 4))

        def loss():
            out, _ = nc.forward(net, x)
            return 0.5 * np.sum((out - target) ** 2)

        out, tape = nc.forward(net, x)
        grads = nc.flatten_grads(nc.backward(tape, out - target)[0])
        params = nc.parameters(net)
        worst = 0.0
        for _ in range(100):
            k = rng.integers(len(params))
            idx = tuple(rng.integers(s) for s in params[k].shape)
            numeric = central_difference(loss, params[k], idx)
            rel = abs(numeric - grads[k][idx]) / max(abs(numeric), abs(grads[k][idx]), 1e-8)
            worst = max(worst, rel)
        assert worst < 1e-6

    def test_grad_shape_mismatch(self, rng):
        _, tape = nc.forward(random_net(rng, [3, 2], ["relu"]), np.zeros((4, 3)))
        with pytest.raises(ShapeError):
            nc.backward(tape, np.zeros((4, 3)))


class TestAdam:
    def test_zero_gradients_leave_params(self):
        p = [np.array([1.0, -2.0])]
        state = nc.AdamState.for_params(p)
        nc.adam_step(state, p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_first_step_magnitude(self):
        p = [np.zeros(3)]
        state = nc.AdamState.for_params(p, learning_rate=0.01)
        nc.adam_step(state, p, [np.array([5.0, -0.2, 1e-3])])
        np.testing.assert_allclose(p[0], [-0.01, 0.01, -0.01], rtol=1e-4)
        assert state.step == 1

    def test_quadratic_convergence(self):
        w = [np.array([1.0])]
        state = nc.AdamState.for_params(w, learning_rate=0.05)
        for _ in range(200):
            nc.adam_step(state, w, [2.0 * w[0]])
        assert abs(w[0][0]) < 0.1

    def test_non_finite_gradient_leaves_state(self):
        p = [np.ones(2)]
        state = nc.AdamState.for_params(p)
        with pytest.raises(TrainingError):
            nc.adam_step(state, p, [np.array([1.0, np.nan])])
        assert state.step == 0
        np.testing.assert_array_equal(p[0], [1.0, 1.0])

    def test_shape_mismatch(self):
        p = [np.ones(2)]
        with pytest.raises(ShapeError):
            nc.adam_step(nc.AdamState.for_params(p), p, [np.ones(3)])


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        net = random_net(rng, [4, 3, 2], ["relu", "identity"])
        nc.save_layers(net, tmp_path / "n.bin")
        raw = (tmp_path / "n.bin").read_bytes()
        assert raw[:8] == b"NNET0001"
        back = nc.load_layers(tmp_path / "n.bin")
        for a, b in zip(net, back):
            assert a.activation == b.activation
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)

    def test_layout(self, tmp_path):
        layer = nc.DenseLayer(np.array([[1.0, 2.0]]), np.array([3.0]), "relu")
        nc.save_layers([layer], tmp_path / "n.bin")
        raw = (tmp_path / "n.bin").read_bytes()
        assert len(raw) == 8 + 8 + 17 + 8 * 3
        assert raw[16:33] == (2).to_bytes(8, "little") + (1).to_bytes(8, "little") + b"\x01"

    def test_truncated(self, tmp_path, rng):
        nc.save_layers(random_net(rng, [4, 3], ["relu"]), tmp_path / "n.bin")
        raw = (tmp_path / "n.bin").read_bytes()
        (tmp_path / "n.bin").write_bytes(raw[:-8])
        with pytest.raises(ParseError):
            nc.load_layers(tmp_path / "n.bin")
