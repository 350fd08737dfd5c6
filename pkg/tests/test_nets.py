"""Network forward/backward passes, parameter layout, Adam, scheduler."""

import numpy as np
import pytest

import gridop.nets as nets
from gridop.nets import (
    AdamState,
    NetworkSpec,
    PlateauScheduler,
    adam_step,
    backward,
    forward,
    forward_cached,
    init_params,
    n_parameters,
    parameter_layout,
)


def _loss(spec, theta, X, T):
    y = forward(spec, theta, X)
    return np.mean(np.sum((y - T) ** 2, axis=1))


def _loss_grad(spec, theta, X, T):
    y, cache = forward_cached(spec, theta, X)
    go = 2.0 * (y - T) / X.shape[0]
    return backward(spec, theta, cache, go)


class TestSpecValidation:
    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            NetworkSpec(0, 3)
        with pytest.raises(ValueError):
            NetworkSpec(3, 3, (0,))

    def test_rejects_bad_activation(self):
        with pytest.raises(ValueError):
            NetworkSpec(3, 3, activation="relu6")
        with pytest.raises(ValueError):
            NetworkSpec(3, 3, leaky_slope=1.5)

    def test_modified_fc_needs_equal_hidden(self):
        with pytest.raises(ValueError):
            NetworkSpec(3, 3, (8, 16), architecture="modified_fc")
        with pytest.raises(ValueError):
            NetworkSpec(3, 3, (), architecture="modified_fc")

    def test_layout_covers_flat_vector(self):
        spec = NetworkSpec(5, 3, (8, 8), architecture="modified_fc")
        layout = parameter_layout(spec)
        total = sum(size for *_, size in layout)
        assert total == n_parameters(spec)
        offsets = [off for _, _, off, _ in layout]
        assert offsets == sorted(offsets)


class TestForward:
    def test_identity_affine(self):
        spec = NetworkSpec(3, 3, ())
        theta = np.zeros(n_parameters(spec))
        nets._views(spec, theta)["W_out"][:] = np.eye(3)
        x = np.array([0.3, -1.2, 2.0])
        assert np.allclose(forward(spec, theta, x), x, atol=0)

    def test_hand_computed_2_2_1(self):
        # tanh(W1 x + b1) through a 2-2-1 net with pencil-and-paper weights
        spec = NetworkSpec(2, 1, (2,), activation="tanh")
        theta = np.zeros(n_parameters(spec))
        v = nets._views(spec, theta)
        v["W_0"][:] = [[1.0, -1.0], [0.5, 0.25]]
        v["b_0"][:] = [0.1, -0.2]
        v["W_out"][:] = [[2.0, -3.0]]
        v["b_out"][:] = [0.05]
        x = np.array([0.4, 0.8])
        h1 = np.tanh(1.0 * 0.4 - 1.0 * 0.8 + 0.1)
        h2 = np.tanh(0.5 * 0.4 + 0.25 * 0.8 - 0.2)
        expect = 2.0 * h1 - 3.0 * h2 + 0.05
        assert forward(spec, theta, x)[0] == pytest.approx(expect, abs=1e-12)

    def test_modified_fc_gating_collapses_when_encoders_match(self, rng):
        spec_m = NetworkSpec(4, 2, (6, 6, 6), architecture="modified_fc")
        theta = init_params(spec_m, rng)
        vm = nets._views(spec_m, theta)
        vm["W_v"][:] = vm["W_u"]
        vm["b_v"][:] = vm["b_u"]
        # with u == v every hidden layer equals u: the net reduces to the
        # one-hidden-layer plain stack made of the encoder and the head
        spec_p = NetworkSpec(4, 2, (6,))
        theta_p = np.zeros(n_parameters(spec_p))
        vp = nets._views(spec_p, theta_p)
        vp["W_0"][:] = vm["W_u"]
        vp["b_0"][:] = vm["b_u"]
        vp["W_out"][:] = vm["W_out"]
        vp["b_out"][:] = vm["b_out"]
        X = rng.normal(size=(5, 4))
        assert np.allclose(forward(spec_m, theta, X), forward(spec_p, theta_p, X),
                           atol=1e-14)

    def test_dim_mismatch(self, rng):
        spec = NetworkSpec(4, 2, (6,))
        theta = init_params(spec, rng)
        with pytest.raises(ValueError):
            forward(spec, theta, np.zeros(5))

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_blowup_detected(self):
        spec = NetworkSpec(2, 1, ())
        theta = np.full(n_parameters(spec), 1e300)
        with pytest.raises(FloatingPointError, match="numerical blow-up"):
            forward(spec, theta, np.array([1e300, 1e300]))


class TestBackward:
    @pytest.mark.parametrize("arch", ["plain", "modified_fc"])
    @pytest.mark.parametrize("act", ["tanh", "leaky_relu"])
    def test_gradients_match_central_differences(self, arch, act, rng):
        spec = NetworkSpec(5, 3, (8, 8), activation=act, architecture=arch,
                           leaky_slope=0.1)
        theta = init_params(spec, rng) * 2.0
        X = rng.normal(size=(7, 5))
        T = rng.normal(size=(7, 3))
        if act == "leaky_relu":
            # keep pre-activations away from the kink so the FD oracle is valid
            _, cache = forward_cached(spec, theta, X)
            key = "a_zs" if arch == "modified_fc" else "a_s"
            pre = np.concatenate([a.ravel() for a in cache[key]])
            assert np.min(np.abs(pre)) > 1e-4
        grad, _ = _loss_grad(spec, theta, X, T)
        idx = rng.choice(theta.size, size=min(50, theta.size), replace=False)
        step = 1e-5
        for i in idx:
            tp, tm = theta.copy(), theta.copy()
            tp[i] += step
            tm[i] -= step
            fd = (_loss(spec, tp, X, T) - _loss(spec, tm, X, T)) / (2 * step)
            assert abs(fd - grad[i]) / (abs(grad[i]) + 1e-8) <= 1e-4

    def test_input_gradient(self, rng):
        spec = NetworkSpec(4, 2, (6, 6), architecture="modified_fc",
                           activation="tanh")
        theta = init_params(spec, rng)
        X = rng.normal(size=(3, 4))
        T = rng.normal(size=(3, 2))
        _, gx = _loss_grad(spec, theta, X, T)
        step = 1e-6
        for b, j in [(0, 0), (1, 3), (2, 2)]:
            Xp, Xm = X.copy(), X.copy()
            Xp[b, j] += step
            Xm[b, j] -= step
            fd = (_loss(spec, theta, Xp, T) - _loss(spec, theta, Xm, T)) / (2 * step)
            assert abs(fd - gx[b, j]) / (abs(gx[b, j]) + 1e-8) <= 1e-5

    def test_dead_path_has_zero_gradient(self, rng):
        # zeroing the output head makes every hidden parameter irrelevant
        spec = NetworkSpec(3, 2, (5,), activation="tanh")
        theta = init_params(spec, rng)
        nets._views(spec, theta)["W_out"][:] = 0.0
        X = rng.normal(size=(4, 3))
        T = rng.normal(size=(4, 2))
        grad, _ = _loss_grad(spec, theta, X, T)
        g = nets._views(spec, grad)
        assert np.abs(g["W_0"]).max() <= 1e-12
        assert np.abs(g["b_0"]).max() <= 1e-12

    def test_quadratic_loss_scaling(self, rng):
        # doubling every residual doubles the gradient of the output bias
        spec = NetworkSpec(3, 2, (5,), activation="tanh")
        theta = init_params(spec, rng)
        X = rng.normal(size=(6, 3))
        y0 = forward(spec, theta, X)
        r = rng.normal(size=y0.shape)
        g1, _ = _loss_grad(spec, theta, X, y0 - r)
        g2, _ = _loss_grad(spec, theta, X, y0 - 2.0 * r)
        b1 = nets._views(spec, g1)["b_out"]
        b2 = nets._views(spec, g2)["b_out"]
        assert np.allclose(b2, 2.0 * b1, rtol=1e-10, atol=1e-14)


class TestInitAndOptim:
    def test_init_is_seeded_and_bounded(self):
        spec = NetworkSpec(6, 4, (10, 10))
        a = init_params(spec, np.random.default_rng(7))
        b = init_params(spec, np.random.default_rng(7))
        assert np.array_equal(a, b)
        for name, shape, off, size in parameter_layout(spec):
            fan_in = shape[-1] if len(shape) == 2 else None
            if fan_in:
                assert np.abs(a[off:off + size]).max() <= 1.0 / np.sqrt(fan_in)

    def test_adam_matches_reference_formula(self):
        theta = np.array([1.0, -2.0])
        grad = np.array([0.5, 0.1])
        state = AdamState.zeros(2)
        out = adam_step(theta, grad, state, lr=0.1, beta1=0.9, beta2=0.999,
                        eps=1e-8)
        m_hat = (0.1 * grad) / (1 - 0.9)
        v_hat = (0.001 * grad**2) / (1 - 0.999)
        expect = theta - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(out, expect, atol=1e-15)

    def test_adam_minimizes_quadratic(self):
        theta = np.array([3.0, -4.0])
        state = AdamState.zeros(2)
        for _ in range(500):
            theta = adam_step(theta, 2 * theta, state, lr=0.05)
        assert np.abs(theta).max() < 1e-3

    def test_plateau_scheduler(self):
        sched = PlateauScheduler(lr=1.0, factor=0.5, patience=2, min_lr=0.2)
        for loss in (1.0, 0.9, 0.9, 0.9):
            sched.step(loss)
        assert sched.lr == 1.0  # two stale epochs: still within patience
        sched.step(0.9)
        assert sched.lr == 0.5  # third stale epoch trips the reduction
        for _ in range(10):
            sched.step(2.0)
        assert sched.lr == pytest.approx(0.2)  # floored at min_lr
