"""Operator model: readout algebra, loss, training loop, estimator surface."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import gridop.nets as nets
from gridop.nets import NetworkSpec, init_params, n_parameters
from gridop.operator import (
    DeepONetModel,
    DeepONetOperator,
    NextStateRegressor,
    NormalizationStats,
    TrainingDivergedError,
    branch_dim,
    load_model,
    pack_features,
    save_model,
)


def _small_model(rng, q=3, n_state=4, hidden=(8, 8), mode="incremental",
                 arch="modified_fc", act="tanh") -> DeepONetModel:
    b_spec = NetworkSpec(branch_dim(n_state, 2, 1), q * n_state, hidden,
                         activation=act, architecture=arch)
    t_spec = NetworkSpec(1, q * n_state, hidden, activation=act,
                         architecture=arch)
    theta = np.concatenate([init_params(b_spec, rng), init_params(t_spec, rng)])
    norm = NormalizationStats.identity(b_spec.input_dim, 1, n_state)
    return DeepONetModel(b_spec, t_spec, q, n_state, 2, 1, mode, theta, norm)


def _toy_dataset(rng, n=64):
    X = np.column_stack([
        rng.uniform(-1, 1, (n, 4)),  # state
        rng.uniform(-1, 1, (n, 2)),  # input sensors
        rng.uniform(0.01, 0.25, n),  # step size
    ])
    y = np.column_stack([
        (X[:, 1] - 1.0) * X[:, 6],
        0.1 * np.tanh(X[:, 2] * X[:, 4]) * X[:, 6],
        -0.3 * X[:, 2] * X[:, 6],
        0.2 * X[:, 3] * X[:, 6],
    ])
    return X, y


class TestReadout:
    def test_all_ones_networks_give_unit_outputs(self):
        # zero-depth affine nets with zero weights and unit biases force
        # beta = phi = 1, so each blockwise dot product equals q
        q, n_state = 1, 4
        b_spec = NetworkSpec(6, q * n_state, ())
        t_spec = NetworkSpec(1, q * n_state, ())
        theta = np.zeros(n_parameters(b_spec) + n_parameters(t_spec))
        model = DeepONetModel(b_spec, t_spec, q, n_state, 2, 1, "full", theta,
                              NormalizationStats.identity(6, 1, n_state))
        nets._views(b_spec, model.theta_branch)["b_out"][:] = 1.0
        nets._views(t_spec, model.theta_trunk)["b_out"][:] = 1.0
        raw = model.raw_outputs(np.zeros((3, 6)), np.ones((3, 1)))
        assert np.allclose(raw, 1.0, atol=0)

    def test_blockwise_dot_against_naive_loops(self, rng):
        model = _small_model(rng)
        Xb = rng.normal(size=(5, model.branch.input_dim))
        Xt = rng.normal(size=(5, 1))
        raw = model.raw_outputs(Xb, Xt)
        beta = nets.forward(model.branch, model.theta_branch, Xb)
        phi = nets.forward(model.trunk, model.theta_trunk, Xt)
        q = model.q
        for b in range(5):
            for i in range(model.n_state):
                s = sum(beta[b, i * q + j] * phi[b, i * q + j] for j in range(q))
                assert abs(raw[b, i] - s) <= 1e-12

    def test_output_shape(self, rng):
        model = _small_model(rng)
        X = rng.normal(size=(7, model.branch.input_dim + 1))
        assert model.predict_batch(X).shape == (7, model.n_state)
        one = model.predict_one(np.zeros(4), np.zeros((1, 2)), np.zeros(1), 0.1)
        assert one.shape == (model.n_state,)


class TestLoss:
    def test_zero_when_predictions_match_labels(self, rng):
        model = _small_model(rng)
        Xn = rng.normal(size=(6, model.branch.input_dim + 1))
        raw = model.raw_outputs(Xn[:, :-1], Xn[:, -1:])
        assert model._loss(model.theta, Xn, raw) == 0.0

    def test_single_sample_squared_norm(self, rng):
        model = _small_model(rng)
        Xn = rng.normal(size=(1, model.branch.input_dim + 1))
        raw = model.raw_outputs(Xn[:, :-1], Xn[:, -1:])
        target = raw + np.array([[0.1, 0.0, 0.0, 0.0]])
        assert model._loss(model.theta, Xn, target) == pytest.approx(0.01, abs=1e-15)

    def test_mean_over_batch(self, rng):
        model = _small_model(rng)
        Xn = rng.normal(size=(2, model.branch.input_dim + 1))
        raw = model.raw_outputs(Xn[:, :-1], Xn[:, -1:])
        target = raw.copy()
        target[0, 0] += np.sqrt(0.02)
        target[1, 1] += np.sqrt(0.04)
        assert model._loss(model.theta, Xn, target) == pytest.approx(0.03, abs=1e-12)


class TestGradient:
    def test_full_model_gradient_matches_central_differences(self, rng):
        model = _small_model(rng, act="tanh")
        Xn = rng.normal(size=(5, model.branch.input_dim + 1))
        Yn = rng.normal(size=(5, model.n_state))
        _, grad = model._loss_grad(model.theta, Xn, Yn)
        idx = rng.choice(model.theta.size, size=60, replace=False)
        step = 1e-5
        for i in idx:
            tp, tm = model.theta.copy(), model.theta.copy()
            tp[i] += step
            tm[i] -= step
            fd = (model._loss(tp, Xn, Yn) - model._loss(tm, Xn, Yn)) / (2 * step)
            assert abs(fd - grad[i]) / (abs(grad[i]) + 1e-8) <= 1e-4

    def test_zero_branch_block_kills_trunk_head_gradient(self, rng):
        model = _small_model(rng, q=2, n_state=4)
        # zero the branch head rows of state block 0 -> beta block 0 is 0,
        # so the trunk head rows of that block cannot affect the loss
        bviews = nets._views(model.branch, model.theta_branch)
        bviews["W_out"][: model.q, :] = 0.0
        bviews["b_out"][: model.q] = 0.0
        Xn = rng.normal(size=(6, model.branch.input_dim + 1))
        Yn = rng.normal(size=(6, model.n_state))
        _, grad = model._loss_grad(model.theta, Xn, Yn)
        g_trunk = nets._views(model.trunk, grad[model.n_branch_params:])
        assert np.abs(g_trunk["W_out"][: model.q, :]).max() <= 1e-12
        assert np.abs(g_trunk["b_out"][: model.q]).max() <= 1e-12


class TestNormalization:
    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4,
                              allow_nan=False, allow_infinity=False),
                    min_size=4, max_size=4))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, values):
        rng = np.random.default_rng(0)
        Xb = rng.normal(size=(10, 4))
        stats = NormalizationStats.from_data(Xb, rng.normal(size=(10, 1)),
                                             rng.normal(size=(10, 4)))
        v = np.asarray(values)
        back = ((v - stats.b_mean) / stats.b_std) * stats.b_std + stats.b_mean
        assert np.abs(back - v).max() <= 1e-10

    def test_std_floor(self):
        const = np.ones((20, 3))
        stats = NormalizationStats.from_data(const, const[:, :1], const)
        assert np.all(stats.b_std >= 1e-8)

    def test_stats_use_training_split_only(self, rng):
        X, y = _toy_dataset(rng, 50)
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               epochs=3, batch_size=16, random_state=0)
        est.fit(X, y)
        tr = est.train_idx_
        nb = est.model_.branch.input_dim
        assert np.allclose(est.model_.norm.b_mean, X[tr, :nb].mean(axis=0),
                           atol=0)
        assert np.allclose(est.model_.norm.y_mean, y[tr].mean(axis=0), atol=0)


class TestTraining:
    def test_zero_labels_are_learnable(self, rng):
        X, _ = _toy_dataset(rng, 80)
        y = np.zeros((80, 4))
        est = DeepONetOperator(q=2, branch_hidden=(10,), trunk_hidden=(10,),
                               output_mode="residual", epochs=1500,
                               batch_size=32, random_state=1)
        est.fit(X, y)
        assert est.history_["train"][-1] <= 1e-6

    def test_descent_sanity(self, rng):
        X, y = _toy_dataset(rng, 120)
        est = DeepONetOperator(q=3, branch_hidden=(12, 12), trunk_hidden=(12, 12),
                               epochs=60, batch_size=32, random_state=0)
        est.fit(X, y)
        assert est.history_["train"][-1] < est.history_["train"][0]

    def test_deterministic_history(self, rng):
        X, y = _toy_dataset(rng, 60)
        kw = dict(q=2, branch_hidden=(8,), trunk_hidden=(8,), epochs=15,
                  batch_size=16, random_state=9)
        a = DeepONetOperator(**kw).fit(X, y)
        b = DeepONetOperator(**kw).fit(X, y)
        assert np.array_equal(a.history_["train"], b.history_["train"])
        assert np.array_equal(a.history_["val"], b.history_["val"])
        assert np.array_equal(a.model_.theta, b.model_.theta)

    def test_best_validation_parameters_returned(self, rng):
        X, y = _toy_dataset(rng, 60)
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               epochs=40, batch_size=16, random_state=3)
        est.fit(X, y)
        nb = est.model_.branch.input_dim
        Xn = np.empty_like(X)
        Xn[:, :nb] = (X[:, :nb] - est.model_.norm.b_mean) / est.model_.norm.b_std
        Xn[:, nb:] = (X[:, nb:] - est.model_.norm.t_mean) / est.model_.norm.t_std
        Yn = (y - est.model_.norm.y_mean) / est.model_.norm.y_std
        val_loss = est.model_._loss(est.model_.theta, Xn[est.val_idx_],
                                    Yn[est.val_idx_])
        best_epoch = est.history_["best_epoch"]
        assert val_loss == pytest.approx(est.history_["val"][best_epoch], rel=1e-12)

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_aborts_with_checkpoint(self, rng):
        X, y = _toy_dataset(rng, 60)
        # unbounded activation + absurd learning rate overflows within a few steps
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               activation="leaky_relu", epochs=200,
                               batch_size=16, learning_rate=1e150,
                               random_state=0)
        with pytest.raises(TrainingDivergedError, match="training diverged") as err:
            est.fit(X, y)
        assert err.value.checkpoint.shape[0] > 0
        assert np.all(np.isfinite(err.value.checkpoint))

    def test_warm_start_continues_from_previous(self, rng):
        X, y = _toy_dataset(rng, 60)
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               epochs=30, batch_size=16, random_state=2)
        est.fit(X, y)
        theta_first = est.model_.theta.copy()
        norm_first = est.model_.norm
        est.set_params(warm_start=True, epochs=10)
        est.fit(X, y)
        assert est.model_.norm is norm_first  # stats kept on fine-tune
        assert not np.array_equal(est.model_.theta, theta_first)

    def test_needs_enough_samples(self, rng):
        X, y = _toy_dataset(rng, 5)
        with pytest.raises(ValueError, match="at least 10 samples"):
            DeepONetOperator().fit(X, y)


class TestModeConvergence:
    def test_residual_converges_faster_than_data_driven(self, operating_point):
        # same seed and budget on physics-generated datasets: the residual
        # operator's validation loss descends roughly twice as fast early on
        from dataclasses import replace

        from gridop.sampling import (
            SamplingRanges,
            SensorSpec,
            build_training_set,
            samples_to_arrays,
        )

        x_star, gp, grid = operating_point
        gp_apx = replace(gp, beta=0.5)
        ranges = SamplingRanges()
        inc = build_training_set(800, "state_input", "incremental",
                                 SensorSpec(1), ranges, gp, grid,
                                 np.random.default_rng(42))
        res = build_training_set(800, "state_input", "residual", SensorSpec(1),
                                 ranges, gp_apx, grid, np.random.default_rng(43))
        kw = dict(q=10, branch_hidden=(40, 40, 40), trunk_hidden=(40, 40, 40),
                  epochs=100, random_state=0)
        a = DeepONetOperator(output_mode="incremental", **kw).fit(
            *samples_to_arrays(inc, 1))
        b = DeepONetOperator(output_mode="residual", **kw).fit(
            *samples_to_arrays(res, 1))
        assert b.history_["val"].mean() < a.history_["val"].mean()


class TestEstimatorSurface:
    def test_sklearn_params_round_trip(self):
        est = DeepONetOperator(q=7, epochs=12, activation="leaky_relu")
        took = clone(est)
        assert took.get_params() == est.get_params()
        est.set_params(q=9)
        assert est.q == 9

    def test_predict_requires_fit(self):
        with pytest.raises(NotFittedError):
            DeepONetOperator().predict(np.zeros((2, 7)))

    def test_input_validation(self, rng):
        X, y = _toy_dataset(rng, 40)
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               epochs=2, batch_size=16)
        with pytest.raises(ValueError, match="n_samples"):
            est.fit(X[:, :5], y)
        with pytest.raises(ValueError, match="finite"):
            bad = X.copy()
            bad[0, 0] = np.nan
            est.fit(bad, y)
        est.fit(X, y)
        with pytest.raises(ValueError):
            est.predict(np.zeros((3, 5)))

    def test_pack_features_layout(self):
        row = pack_features(np.arange(4), np.array([[9.0, 8.0]]), np.zeros(1),
                            0.125, n_sensors=1)
        assert row.tolist() == [0, 1, 2, 3, 9.0, 8.0, 0.125]
        row2 = pack_features(np.arange(4), np.array([[9.0, 8.0], [7.0, 6.0]]),
                             np.array([0.0, 0.05]), 0.125, n_sensors=2)
        assert row2.tolist() == [0, 1, 2, 3, 9.0, 8.0, 7.0, 6.0, 0.0, 0.05, 0.125]

    def test_predict_step_matches_predict(self, rng):
        X, y = _toy_dataset(rng, 40)
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               epochs=3, batch_size=16).fit(X, y)
        row = X[5]
        via_batch = est.predict(row[None, :])[0]
        via_step = est.predict_step(row[:4], row[4:6][None, :], np.zeros(1), row[6])
        assert np.allclose(via_batch, via_step, atol=0)


class TestSerialization:
    def test_deeponet_bitwise_round_trip(self, rng, tmp_path):
        X, y = _toy_dataset(rng, 40)
        est = DeepONetOperator(q=2, branch_hidden=(8,), trunk_hidden=(8,),
                               epochs=4, batch_size=16, random_state=5).fit(X, y)
        path = tmp_path / "model.json"
        save_model(path, est)
        loaded = load_model(path)
        assert np.array_equal(loaded.model_.theta, est.model_.theta)
        assert loaded.get_params() == est.get_params()
        assert np.array_equal(loaded.predict(X), est.predict(X))
        for f in ("b_mean", "b_std", "t_mean", "t_std", "y_mean", "y_std"):
            assert np.array_equal(getattr(loaded.model_.norm, f),
                                  getattr(est.model_.norm, f))

    def test_fnn_round_trip(self, rng, tmp_path):
        X, y = _toy_dataset(rng, 40)
        est = NextStateRegressor(hidden=(8,), epochs=4, batch_size=16,
                                 random_state=5).fit(X, y)
        path = tmp_path / "fnn.json"
        save_model(path, est)
        loaded = load_model(path)
        assert np.array_equal(loaded.theta_, est.theta_)
        assert np.array_equal(loaded.predict(X), est.predict(X))

    def test_rejects_foreign_files(self, tmp_path):
        p = tmp_path / "foo.json"
        p.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError, match="not a gridop-model"):
            load_model(p)


class TestFnnBaseline:
    def test_output_dimension(self, rng):
        X, y = _toy_dataset(rng, 40)
        est = NextStateRegressor(hidden=(8,), epochs=3, batch_size=16).fit(X, y)
        assert est.predict(X).shape == (40, 4)
        assert est.predict_step(X[0, :4], X[0, 4:6], X[0, 6]).shape == (4,)

    def test_gradient_matches_finite_differences(self, rng):
        est = NextStateRegressor(hidden=(6,), activation="tanh")
        est.spec_ = est._spec()
        theta = init_params(est.spec_, rng)
        Xn = rng.normal(size=(5, 7))
        Yn = rng.normal(size=(5, 4))
        _, grad = est._loss_grad(theta, Xn, Yn)
        step = 1e-5
        for i in rng.choice(theta.size, size=30, replace=False):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += step
            tm[i] -= step
            fd = (est._loss(tp, Xn, Yn) - est._loss(tm, Xn, Yn)) / (2 * step)
            assert abs(fd - grad[i]) / (abs(grad[i]) + 1e-8) <= 1e-4

    def test_deterministic(self, rng):
        X, y = _toy_dataset(rng, 40)
        kw = dict(hidden=(8,), epochs=6, batch_size=16, random_state=4)
        a = NextStateRegressor(**kw).fit(X, y)
        b = NextStateRegressor(**kw).fit(X, y)
        assert np.array_equal(a.theta_, b.theta_)
