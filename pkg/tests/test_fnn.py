import numpy as np
import pytest

from flexgrid._rng import make_rng
from flexgrid.errors import InfeasibleError
from flexgrid.features import Normalizer
from flexgrid.fnn import (
    ArchitectureMismatch,
    ModelFormatError,
    NetworkArch,
    TrainConfig,
    _forward_all,
    adam_step,
    backward,
    forward,
    init_network,
    load_model,
    loss,
    predict_grid_params,
    save_model,
    train,
)
from flexgrid.grid_model import GridKind, build_ladder, first_spacing_violation
from flexgrid.sso import PROFILE_1

from oracles import central_differences

RAW = Normalizer(np.zeros(8), np.ones(8), np.zeros(4), np.ones(4))


def linear_task(n, seed, n_val=0):
    rng = make_rng(100 + seed)
    A = rng.normal(size=(8, 4))
    X = rng.normal(size=(n + n_val, 8))
    Y = X @ A
    st = Normalizer.fit(X[:n], Y[:n])
    Xn, Yn = st.transform_x(X), st.transform_y(Y)
    return Xn[:n], Yn[:n], Xn[n:], Yn[n:]


def relu_pattern(model, X):
    def pattern():
        pre, _ = _forward_all(model, X)
        return tuple((z > 0).tobytes() for z in pre[:-1])

    return pattern


def gradient_check(model, X, Y):
    """Max relative error of analytic vs central-difference gradients, kinks excluded."""
    analytic = backward(model, X, Y)
    pattern = relu_pattern(model, X) if model.arch.activation == "relu" else None
    numeric, kinked = central_differences(lambda: loss(model, X, Y), model.params, 1e-5, pattern)
    worst = 0.0
    for a, n, k in zip(analytic, numeric, kinked):
        keep = ~k
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
        worst = max(worst, float(np.max(np.abs(a - n)[keep] / scale[keep], initial=0.0)))
    return worst


class TestArch:
    def test_param_count(self):
        assert NetworkArch((8, 500, 500, 500, 4)).n_params == 507504

    def test_needs_hidden(self):
        with pytest.raises(ValueError):
            NetworkArch((8, 4))

    def test_bad_activation(self):
        with pytest.raises(ValueError):
            NetworkArch((8, 3, 4), "tanh")


class TestInitForward:
    def test_seeded(self):
        a, b = init_network(NetworkArch((8, 16, 4)), 5), init_network(NetworkArch((8, 16, 4)), 5)
        assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
        assert all(np.all(b_ == 0) for b_ in a.biases)
        limit = np.sqrt(3.0 / 8)
        assert np.all(np.abs(a.weights[0]) <= limit)

    def test_zero_network(self):
        m = init_network(NetworkArch((8, 5, 5, 4)), 0)
        for p in m.params:
            p[...] = 0
        assert forward(m, np.ones(8)).tolist() == [0.0] * 4

    def test_sigmoid_zero_hidden(self):
        m = init_network(NetworkArch((8, 3, 2)), 1)
        m.weights[0][...] = 0
        m.biases[1][...] = [0.25, -1.0]
        expected = 0.5 * m.weights[1].sum(axis=0) + m.biases[1]
        np.testing.assert_allclose(forward(m, np.arange(8.0)), expected, rtol=1e-15)

    def test_relu_transparent(self):
        m = init_network(NetworkArch((3, 1, 2), "relu"), 0)
        m.weights[0][...] = [[1.0], [2.0], [3.0]]
        m.biases[0][...] = [0.5]
        m.weights[1][...] = [[2.0, -1.0]]
        m.biases[1][...] = [1.0, 0.0]
        x = np.array([1.0, 0.5, 2.0])
        h = x @ m.weights[0] + m.biases[0]
        np.testing.assert_allclose(forward(m, x), h @ m.weights[1] + m.biases[1])

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            forward(init_network(NetworkArch((8, 3, 4))), [np.nan] * 8)

    def test_width_mismatch(self):
        with pytest.raises(ArchitectureMismatch):
            forward(init_network(NetworkArch((8, 3, 4))), np.ones(5))


class TestBackward:
    def test_zero_at_targets(self):
        m = init_network(NetworkArch((4, 6, 3)), 2)
        X = make_rng(0).normal(size=(5, 4))
        for g in backward(m, X, forward(m, X)):
            assert np.all(g == 0)

    def test_output_layer_closed_form(self):
        m = init_network(NetworkArch((3, 2, 1)), 3)
        x, y = np.array([[0.3, -1.0, 2.0]]), np.array([[0.7]])
        a = 0.5 * (1 + np.tanh(0.5 * (x @ m.weights[0])))
        pred = a @ m.weights[1] + m.biases[1]
        grads = backward(m, x, y)
        np.testing.assert_allclose(grads[2], 2 * (pred - y) * a.T, rtol=1e-12)
        np.testing.assert_allclose(grads[3], 2 * (pred - y).ravel(), rtol=1e-12)

    @pytest.mark.parametrize("activation", ["sigmoid", "relu"])
    def test_finite_differences(self, activation):
        rng = make_rng(7)
        for trial in range(10):
            sizes = (int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 4)))
            m = init_network(NetworkArch(sizes, activation), trial)
            for p in m.biases:
                p[...] = rng.normal(scale=0.3, size=p.shape)
            n = int(rng.integers(1, 6))
            X, Y = rng.normal(size=(n, sizes[0])), rng.normal(size=(n, sizes[-1]))
            assert gradient_check(m, X, Y) < 1e-4

    def test_shape_mismatch(self):
        m = init_network(NetworkArch((4, 6, 3)), 2)
        with pytest.raises(ArchitectureMismatch):
            backward(m, np.ones((2, 4)), np.ones((2, 2)))


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        m = init_network(NetworkArch((4, 5, 2)), 0)
        before = [p.copy() for p in m.params]
        adam_step(m, [np.zeros_like(p) for p in m.params], TrainConfig())
        assert all(np.array_equal(a, b) for a, b in zip(before, m.params))

    def test_first_step_is_lr_sign(self):
        m = init_network(NetworkArch((4, 5, 2)), 0)
        before = [p.copy() for p in m.params]
        grads = [make_rng(1).normal(size=p.shape) for p in m.params]
        adam_step(m, grads, TrainConfig(lr=1e-3))
        for b, a, g in zip(before, m.params, grads):
            np.testing.assert_allclose(a - b, -1e-3 * np.sign(g), rtol=1e-6, atol=1e-12)

    def test_deterministic(self):
        a, b = init_network(NetworkArch((4, 5, 2)), 0), init_network(NetworkArch((4, 5, 2)), 0)
        grads = [make_rng(1).normal(size=p.shape) for p in a.params]
        for _ in range(3):
            adam_step(a, grads, TrainConfig())
            adam_step(b, grads, TrainConfig())
        assert all(np.array_equal(p, q) for p, q in zip(a.params + a.m + a.v, b.params + b.m + b.v))
        assert a.step == 3


class TestTrain:
    def test_history_and_determinism(self):
        X, Y, vX, vY = linear_task(60, 0, 20)
        cfg = TrainConfig(epochs=7, batch_size=16, seed=3)
        a, ha = train(init_network(NetworkArch((8, 10, 4)), 1), X, Y, vX, vY, cfg)
        b, hb = train(init_network(NetworkArch((8, 10, 4)), 1), X, Y, vX, vY, cfg)
        assert len(ha.train_loss) == len(ha.val_loss) == 7
        assert ha.train_loss == hb.train_loss and ha.val_loss == hb.val_loss
        assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
        assert ha.to_csv().splitlines()[0] == "epoch,train_mse,val_mse"

    def test_linear_task_reaches_target(self):
        X, Y, _, _ = linear_task(200, 0)
        m, hist = train(init_network(NetworkArch((8, 64, 64, 4), "relu"), 0), X, Y, config=TrainConfig())
        assert len(hist.train_loss) == 300
        assert hist.train_loss[-1] < 1e-3

    def test_descent_at_default_lr(self):
        X, Y, _, _ = linear_task(200, 1)
        _, hist = train(init_network(NetworkArch((8, 32, 32, 4)), 2), X, Y, config=TrainConfig(epochs=40))
        assert np.mean(hist.train_loss[-10:]) <= np.mean(hist.train_loss[:10])

    def test_empty(self):
        with pytest.raises(ValueError):
            train(init_network(NetworkArch((8, 3, 4))), np.zeros((0, 8)), np.zeros((0, 4)))


class TestPersistence:
    def model(self):
        m = init_network(NetworkArch((8, 7, 5, 4), "relu"), 4)
        X, Y, _, _ = linear_task(30, 2)
        train(m, X, Y, config=TrainConfig(epochs=2, batch_size=8))
        return m

    def test_round_trip(self):
        m = self.model()
        back = load_model(save_model(m))
        assert back.arch == m.arch and back.step == m.step
        for p, q in zip(m.params + m.m + m.v, back.params + back.m + back.v):
            assert np.array_equal(p, q)
        x = make_rng(0).normal(size=(6, 8))
        assert np.array_equal(forward(m, x), forward(back, x))
        assert save_model(back) == save_model(m)

    def test_truncated(self):
        data = save_model(self.model())
        with pytest.raises(ModelFormatError, match="checksum"):
            load_model(data[:-10])

    def test_corrupt_byte(self):
        data = bytearray(save_model(self.model()))
        data[40] ^= 0xFF
        with pytest.raises(ModelFormatError):
            load_model(bytes(data))

    def test_arch_mismatch(self):
        data = save_model(self.model())
        with pytest.raises(ArchitectureMismatch):
            load_model(data, expected_arch=NetworkArch((8, 500, 500, 500, 4)))

    def test_header(self):
        data = save_model(self.model())
        assert data[:4] == b"GFNN"


def constant_model(label):
    """Network whose output is ``label`` for every input."""
    m = init_network(NetworkArch((8, 3, 4)), 0)
    for p in m.params:
        p[...] = 0
    m.biases[-1][...] = label
    return m


class TestPredict:
    feats = np.arange(8.0)

    def test_feasible_label_unchanged(self):
        pred = predict_grid_params(constant_model([120.0, 85.0, 20.0, 25.0]), self.feats, RAW, PROFILE_1, 100.0, 0.001)
        s = pred.spec
        assert (s.upper, s.lower, s.n_upper, s.n_lower, s.anchor) == (120.0, 85.0, 20, 25, 100.0)
        assert s.kind is GridKind.FLEXIBLE and pred.adjustments == ()

    def test_upper_below_anchor_clamped(self):
        pred = predict_grid_params(constant_model([95.0, 85.0, 20.0, 25.0]), self.feats, RAW, PROFILE_1, 100.0)
        assert pred.spec.upper == pytest.approx(105.0)
        assert any("upper" in a for a in pred.adjustments)

    def test_fractional_count(self):
        pred = predict_grid_params(constant_model([120.0, 85.0, 12.4, 25.0]), self.feats, RAW, PROFILE_1, 100.0)
        assert pred.spec.n_upper == 12

    def test_spacing_enforced(self):
        pred = predict_grid_params(constant_model([106.0, 94.0, 50.0, 50.0]), self.feats, RAW, PROFILE_1, 100.0, 0.002)
        assert first_spacing_violation(build_ladder(pred.spec).lines, 0.002) is None
        assert PROFILE_1.contains(pred.spec)
        assert pred.spec.n_upper < 50 and pred.adjustments

    def test_spacing_unreachable(self):
        with pytest.raises(InfeasibleError):
            predict_grid_params(constant_model([106.0, 94.0, 50.0, 50.0]), self.feats, RAW, PROFILE_1, 100.0, 0.05)

    def test_normalized_targets(self):
        st = Normalizer(np.zeros(8), np.ones(8), np.array([110.0, 80.0, 20.0, 20.0]), np.array([10.0, 5.0, 4.0, 4.0]))
        pred = predict_grid_params(constant_model([1.0, 1.0, 1.0, -1.0]), self.feats, st, PROFILE_1, 100.0)
        s = pred.spec
        assert (s.upper, s.lower, s.n_upper, s.n_lower) == (120.0, 85.0, 24, 16)

    def test_wrong_arch(self):
        m = init_network(NetworkArch((8, 3, 3)), 0)
        with pytest.raises(ArchitectureMismatch):
            predict_grid_params(m, self.feats, RAW, PROFILE_1, 100.0)
