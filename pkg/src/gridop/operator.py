"""Branch/trunk deep operator network and the next-state FNN baseline.

Both learnable models are exposed as scikit-learn style estimators
(``fit`` / ``predict`` / ``get_params``) over packed feature matrices, so
they compose with ``sklearn.base.clone`` and the usual model-selection
tooling. Feature packing:

* ``DeepONetOperator`` rows are ``[state (4) | sensor values (m*2) |
  sensor offsets (m, only when m >= 2) | step size h]``; the last column
  feeds the trunk net, everything before it feeds the branch net.
* ``NextStateRegressor`` rows are ``[state | interface input | h]``.

Targets are, per output mode, the next state (``full``), the state
increment (``incremental``), or the correction to an approximate-model
step (``residual``). Loss and training run in normalized space; statistics
are estimated on the training split only.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

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
)

__all__ = [
    "OUTPUT_MODES",
    "TrainingConfig",
    "TrainingDivergedError",
    "NormalizationStats",
    "DeepONetModel",
    "DeepONetOperator",
    "NextStateRegressor",
    "branch_input",
    "pack_features",
    "save_model",
    "load_model",
]

OUTPUT_MODES = ("full", "incremental", "residual")

MODEL_FORMAT = "gridop-model"
MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite; carries the last finite state."""

    def __init__(self, message: str, checkpoint: np.ndarray, history: dict):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


@dataclass(frozen=True)
class TrainingConfig:
    """Adam + plateau-scheduler hyperparameters shared by both estimators."""

    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000
    batch_size: int = 256
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    min_lr: float = 1e-5
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class NormalizationStats:
    """Per-dimension mean/std for branch inputs, trunk input, and outputs.

    Standard deviations are floored at 1e-8 so constant dimensions stay
    well-conditioned.
    """

    b_mean: np.ndarray
    b_std: np.ndarray
    t_mean: np.ndarray
    t_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    STD_FLOOR = 1e-8

    @classmethod
    def identity(cls, n_branch: int, n_trunk: int, n_out: int) -> "NormalizationStats":
        return cls(
            np.zeros(n_branch), np.ones(n_branch),
            np.zeros(n_trunk), np.ones(n_trunk),
            np.zeros(n_out), np.ones(n_out),
        )

    @classmethod
    def from_data(cls, Xb: np.ndarray, Xt: np.ndarray, Y: np.ndarray) -> "NormalizationStats":
        def stats(a):
            mean = a.mean(axis=0)
            std = np.maximum(a.std(axis=0), cls.STD_FLOOR)
            return mean, std

        bm, bs = stats(Xb)
        tm, ts = stats(Xt)
        ym, ys = stats(Y)
        return cls(bm, bs, tm, ts, ym, ys)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("b_mean", "b_std", "t_mean", "t_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in
                      ("b_mean", "b_std", "t_mean", "t_std", "y_mean", "y_std")})


def branch_dim(n_state: int, n_input: int, n_sensors: int) -> int:
    """Branch input width; sensor offsets are included only for m >= 2."""
    d = n_state + n_sensors * n_input
    if n_sensors >= 2:
        d += n_sensors
    return d


def branch_input(
    x: np.ndarray, sensors: np.ndarray, locs: np.ndarray, n_sensors: int
) -> np.ndarray:
    """Pack one branch-net input row from state, sensor values, and offsets."""
    sensors = np.asarray(sensors, dtype=float).reshape(n_sensors, -1)
    parts = [np.asarray(x, dtype=float).ravel(), sensors.ravel()]
    if n_sensors >= 2:
        parts.append(np.asarray(locs, dtype=float).ravel())
    return np.concatenate(parts)


def pack_features(
    x: np.ndarray, sensors: np.ndarray, locs: np.ndarray, h: float, n_sensors: int
) -> np.ndarray:
    """One estimator feature row: branch block followed by the step size."""
    return np.concatenate([branch_input(x, sensors, locs, n_sensors), [float(h)]])


@dataclass
class DeepONetModel:
    """Trained branch/trunk operator: specs, flat parameters, normalization."""

    branch: NetworkSpec
    trunk: NetworkSpec
    q: int
    n_state: int
    n_input: int
    n_sensors: int
    output_mode: str
    theta: np.ndarray
    norm: NormalizationStats

    def __post_init__(self) -> None:
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"unknown output mode {self.output_mode!r}")
        want = self.q * self.n_state
        if self.branch.output_dim != want or self.trunk.output_dim != want:
            raise ValueError("branch/trunk output dims must equal q * n_state")
        if self.trunk.input_dim != 1:
            raise ValueError("trunk input is the scalar step size")
        if self.branch.input_dim != branch_dim(self.n_state, self.n_input, self.n_sensors):
            raise ValueError("branch input dim inconsistent with sensor count")
        expect = n_parameters(self.branch) + n_parameters(self.trunk)
        if self.theta.shape != (expect,):
            raise ValueError(f"flat parameter vector must have length {expect}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("parameter vector must be finite")

    @property
    def n_branch_params(self) -> int:
        return n_parameters(self.branch)

    @property
    def theta_branch(self) -> np.ndarray:
        return self.theta[: self.n_branch_params]

    @property
    def theta_trunk(self) -> np.ndarray:
        return self.theta[self.n_branch_params:]

    # -- forward passes ----------------------------------------------------
    def raw_outputs(self, Xb: np.ndarray, Xt: np.ndarray, theta: np.ndarray | None = None
                    ) -> np.ndarray:
        """Blockwise dot-product readout on *normalized* inputs.

        Component i of the output is sum_j beta[i*q + j] * phi[i*q + j],
        i.e. each state owns a contiguous block of q basis coefficients.
        """
        th = self.theta if theta is None else theta
        nb = self.n_branch_params
        beta = forward(self.branch, th[:nb], Xb)
        phi = forward(self.trunk, th[nb:], Xt)
        B = beta.shape[0] if beta.ndim == 2 else 1
        bb = beta.reshape(B, self.n_state, self.q)
        pp = phi.reshape(B, self.n_state, self.q)
        out = np.einsum("bij,bij->bi", bb, pp)
        return out if np.asarray(Xb).ndim == 2 else out[0]

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """De-normalized operator outputs for packed feature rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        nb = self.branch.input_dim
        if X.shape[1] != nb + 1:
            raise ValueError(f"expected {nb + 1} feature columns, got {X.shape[1]}")
        Xb = (X[:, :nb] - self.norm.b_mean) / self.norm.b_std
        Xt = (X[:, nb:] - self.norm.t_mean) / self.norm.t_std
        raw = self.raw_outputs(Xb, Xt)
        return raw * self.norm.y_std + self.norm.y_mean

    def predict_one(
        self, x: np.ndarray, sensors: np.ndarray, locs: np.ndarray, h: float
    ) -> np.ndarray:
        row = pack_features(x, sensors, locs, h, self.n_sensors)
        return self.predict_batch(row[None, :])[0]

    # -- training internals --------------------------------------------------
    def _loss_grad(self, theta: np.ndarray, Xn: np.ndarray, Yn: np.ndarray
                   ) -> tuple[float, np.ndarray]:
        """Mean squared-L2 loss and its gradient, in normalized space."""
        nb_in = self.branch.input_dim
        nbp = self.n_branch_params
        Xb, Xt = Xn[:, :nb_in], Xn[:, nb_in:]
        beta, cache_b = forward_cached(self.branch, theta[:nbp], Xb)
        phi, cache_t = forward_cached(self.trunk, theta[nbp:], Xt)
        B = Xn.shape[0]
        bb = beta.reshape(B, self.n_state, self.q)
        pp = phi.reshape(B, self.n_state, self.q)
        pred = np.einsum("bij,bij->bi", bb, pp)
        r = pred - Yn
        loss = float(np.mean(np.sum(r * r, axis=1)))
        gpred = (2.0 / B) * r
        gbeta = (gpred[:, :, None] * pp).reshape(B, -1)
        gphi = (gpred[:, :, None] * bb).reshape(B, -1)
        gb, _ = backward(self.branch, theta[:nbp], cache_b, gbeta)
        gt, _ = backward(self.trunk, theta[nbp:], cache_t, gphi)
        return loss, np.concatenate([gb, gt])

    def _loss(self, theta: np.ndarray, Xn: np.ndarray, Yn: np.ndarray) -> float:
        nb_in = self.branch.input_dim
        raw = self.raw_outputs(Xn[:, :nb_in], Xn[:, nb_in:], theta)
        r = raw - Yn
        return float(np.mean(np.sum(r * r, axis=1)))


def _run_adam(
    theta: np.ndarray,
    loss_grad,
    loss_fn,
    Xn: np.ndarray,
    Yn: np.ndarray,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, dict]:
    """Adam training loop with shuffled mini-batches and best-on-validation
    parameter selection. Returns (best theta, history)."""
    state = AdamState.zeros(theta.size)
    sched = PlateauScheduler(cfg.learning_rate, cfg.plateau_factor,
                             cfg.plateau_patience, cfg.min_lr)
    Xtr, Ytr = Xn[train_idx], Yn[train_idx]
    Xva, Yva = Xn[val_idx], Yn[val_idx]
    hist_train = np.empty(cfg.epochs)
    hist_val = np.empty(cfg.epochs)
    hist_lr = np.empty(cfg.epochs)
    best = np.inf
    best_theta = theta.copy()
    best_epoch = -1
    n = train_idx.size
    history = {"train": hist_train, "val": hist_val, "lr": hist_lr, "best_epoch": -1}

    def diverged(epoch: int) -> TrainingDivergedError:
        history["train"] = hist_train[:epoch]
        history["val"] = hist_val[:epoch]
        history["lr"] = hist_lr[:epoch]
        return TrainingDivergedError(
            f"training diverged at epoch {epoch}", best_theta, history
        )

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        lr = sched.lr
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            try:
                loss, grad = loss_grad(theta, Xtr[sel], Ytr[sel])
            except FloatingPointError:
                raise diverged(epoch) from None
            if not np.isfinite(loss):
                raise diverged(epoch)
            theta = adam_step(theta, grad, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            loss_sum += loss * sel.size
        try:
            vl = loss_fn(theta, Xva, Yva)
        except FloatingPointError:
            raise diverged(epoch) from None
        if not np.isfinite(vl):
            raise diverged(epoch)
        hist_train[epoch] = loss_sum / n  # epoch mean of the pre-update batch losses
        hist_val[epoch] = vl
        hist_lr[epoch] = lr
        if vl < best:
            best = vl
            best_theta = theta.copy()
            best_epoch = epoch
        sched.step(vl)

    history["best_epoch"] = best_epoch
    return best_theta, history


def _split_indices(n: int, fraction: float, rng: np.random.Generator
                   ) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        raise ValueError("validation split leaves no training samples")
    return perm[n_val:], perm[:n_val]


class DeepONetOperator(BaseEstimator):
    """Deep operator network for the local solution operator of a generator.

    The branch net encodes (state, discretized interface input) into q basis
    coefficients per state; the trunk net encodes the step size into q basis
    values per state; the prediction is their blockwise dot product. The
    ``output_mode`` fixes what the labels mean (and hence what ``predict``
    returns): the next state, the state increment, or the residual relative
    to an approximate-model step.
    """

    def __init__(
        self,
        q: int = 20,
        n_state: int = 4,
        n_input: int = 2,
        n_sensors: int = 1,
        output_mode: str = "incremental",
        branch_hidden: tuple[int, ...] = (60, 60, 60),
        trunk_hidden: tuple[int, ...] = (60, 60, 60),
        architecture: str = "modified_fc",
        activation: str = "tanh",
        leaky_slope: float = 0.01,
        learning_rate: float = 5e-3,
        epochs: int = 2000,
        batch_size: int = 256,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        plateau_factor: float = 0.5,
        plateau_patience: int = 50,
        min_lr: float = 1e-5,
        validation_fraction: float = 0.2,
        random_state: int = 0,
        warm_start: bool = False,
    ):
        self.q = q
        self.n_state = n_state
        self.n_input = n_input
        self.n_sensors = n_sensors
        self.output_mode = output_mode
        self.branch_hidden = branch_hidden
        self.trunk_hidden = trunk_hidden
        self.architecture = architecture
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.min_lr = min_lr
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.warm_start = warm_start

    # -- helpers -----------------------------------------------------------
    def _training_config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, epochs=self.epochs, batch_size=self.batch_size,
            plateau_factor=self.plateau_factor, plateau_patience=self.plateau_patience,
            min_lr=self.min_lr, validation_fraction=self.validation_fraction,
            seed=self.random_state,
        )

    def _specs(self) -> tuple[NetworkSpec, NetworkSpec]:
        out = self.q * self.n_state
        b_in = branch_dim(self.n_state, self.n_input, self.n_sensors)
        branch = NetworkSpec(b_in, out, tuple(self.branch_hidden),
                             self.activation, self.leaky_slope, self.architecture)
        trunk = NetworkSpec(1, out, tuple(self.trunk_hidden),
                            self.activation, self.leaky_slope, self.architecture)
        return branch, trunk

    def _fresh_model(self, rng: np.random.Generator) -> DeepONetModel:
        branch, trunk = self._specs()
        theta = np.concatenate([init_params(branch, rng), init_params(trunk, rng)])
        nb = branch.input_dim
        return DeepONetModel(
            branch, trunk, self.q, self.n_state, self.n_input, self.n_sensors,
            self.output_mode, theta,
            NormalizationStats.identity(nb, 1, self.n_state),
        )

    def _validate_X_y(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        want = branch_dim(self.n_state, self.n_input, self.n_sensors) + 1
        if X.ndim != 2 or X.shape[1] != want:
            raise ValueError(
                f"X must be (n_samples, {want}) for n_sensors={self.n_sensors}"
            )
        if y.shape != (X.shape[0], self.n_state):
            raise ValueError(f"y must be (n_samples, {self.n_state})")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        return X, y

    # -- estimator API -------------------------------------------------------
    def fit(self, X, y) -> "DeepONetOperator":
        """Train on packed feature rows X and mode-specific labels y.

        With ``warm_start=True`` and a previous fit, training continues from
        the current parameters and keeps the existing normalization.
        """
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"unknown output mode {self.output_mode!r}")
        X, y = self._validate_X_y(X, y)
        if X.shape[0] < 10:
            raise ValueError("need at least 10 samples to fit")
        cfg = self._training_config()
        rng = np.random.default_rng(cfg.seed)

        warm = self.warm_start and hasattr(self, "model_")
        model = self.model_ if warm else self._fresh_model(rng)
        nb = model.branch.input_dim

        train_idx, val_idx = _split_indices(X.shape[0], cfg.validation_fraction, rng)
        if not warm:
            model.norm = NormalizationStats.from_data(
                X[train_idx, :nb], X[train_idx, nb:], y[train_idx]
            )
        Xn = np.empty_like(X)
        Xn[:, :nb] = (X[:, :nb] - model.norm.b_mean) / model.norm.b_std
        Xn[:, nb:] = (X[:, nb:] - model.norm.t_mean) / model.norm.t_std
        Yn = (y - model.norm.y_mean) / model.norm.y_std

        theta, history = _run_adam(
            model.theta.copy(), model._loss_grad, model._loss,
            Xn, Yn, train_idx, val_idx, cfg, rng,
        )
        model.theta = theta
        self.model_ = model
        self.history_ = history
        self.train_idx_ = train_idx
        self.val_idx_ = val_idx
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        """Operator outputs in label space (next state / increment / residual)."""
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must be (n_samples, {self.n_features_in_})")
        return self.model_.predict_batch(X)

    def predict_step(self, x, sensors, locs, h) -> np.ndarray:
        """Single-step convenience used by the rollout schemes."""
        check_is_fitted(self, "model_")
        return self.model_.predict_one(x, sensors, locs, h)

    def score(self, X, y) -> float:
        """Negative mean squared L2 error in label space (larger is better)."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=float)
        return -float(np.mean(np.sum((pred - y) ** 2, axis=1)))


class NextStateRegressor(BaseEstimator):
    """Plain fully-connected next-step baseline: (x_n, y_n, h) -> x_{n+1}.

    Shares the training protocol of :class:`DeepONetOperator` but maps the
    packed features directly to the full next state with one MLP.
    """

    def __init__(
        self,
        n_state: int = 4,
        n_input: int = 2,
        hidden: tuple[int, ...] = (60, 60, 60),
        architecture: str = "modified_fc",
        activation: str = "tanh",
        leaky_slope: float = 0.01,
        learning_rate: float = 5e-3,
        epochs: int = 2000,
        batch_size: int = 256,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        plateau_factor: float = 0.5,
        plateau_patience: int = 50,
        min_lr: float = 1e-5,
        validation_fraction: float = 0.2,
        random_state: int = 0,
        warm_start: bool = False,
    ):
        self.n_state = n_state
        self.n_input = n_input
        self.hidden = hidden
        self.architecture = architecture
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.min_lr = min_lr
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.warm_start = warm_start

    def _spec(self) -> NetworkSpec:
        d_in = self.n_state + self.n_input + 1
        return NetworkSpec(d_in, self.n_state, tuple(self.hidden),
                           self.activation, self.leaky_slope, self.architecture)

    def _training_config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, epochs=self.epochs, batch_size=self.batch_size,
            plateau_factor=self.plateau_factor, plateau_patience=self.plateau_patience,
            min_lr=self.min_lr, validation_fraction=self.validation_fraction,
            seed=self.random_state,
        )

    def _loss_grad(self, theta, Xn, Yn):
        out, cache = forward_cached(self.spec_, theta, Xn)
        r = out - Yn
        loss = float(np.mean(np.sum(r * r, axis=1)))
        grad, _ = backward(self.spec_, theta, cache, (2.0 / Xn.shape[0]) * r)
        return loss, grad

    def _loss(self, theta, Xn, Yn):
        out = forward(self.spec_, theta, Xn)
        r = out - Yn
        return float(np.mean(np.sum(r * r, axis=1)))

    def fit(self, X, y) -> "NextStateRegressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        d_in = self.n_state + self.n_input + 1
        if X.ndim != 2 or X.shape[1] != d_in:
            raise ValueError(f"X must be (n_samples, {d_in})")
        if y.shape != (X.shape[0], self.n_state):
            raise ValueError(f"y must be (n_samples, {self.n_state})")
        if X.shape[0] < 10:
            raise ValueError("need at least 10 samples to fit")
        cfg = self._training_config()
        rng = np.random.default_rng(cfg.seed)

        warm = self.warm_start and hasattr(self, "theta_")
        if not warm:
            self.spec_ = self._spec()
            self.theta_ = init_params(self.spec_, rng)
        train_idx, val_idx = _split_indices(X.shape[0], cfg.validation_fraction, rng)
        if not warm:
            self.x_mean_ = X[train_idx].mean(axis=0)
            self.x_std_ = np.maximum(X[train_idx].std(axis=0), NormalizationStats.STD_FLOOR)
            self.y_mean_ = y[train_idx].mean(axis=0)
            self.y_std_ = np.maximum(y[train_idx].std(axis=0), NormalizationStats.STD_FLOOR)
        Xn = (X - self.x_mean_) / self.x_std_
        Yn = (y - self.y_mean_) / self.y_std_

        theta, history = _run_adam(
            self.theta_.copy(), self._loss_grad, self._loss,
            Xn, Yn, train_idx, val_idx, cfg, rng,
        )
        self.theta_ = theta
        self.history_ = history
        self.train_idx_ = train_idx
        self.val_idx_ = val_idx
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xn = (X - self.x_mean_) / self.x_std_
        out = forward(self.spec_, self.theta_, Xn)
        return out * self.y_std_ + self.y_mean_

    def predict_step(self, x, y_input, h) -> np.ndarray:
        row = np.concatenate([np.asarray(x, float).ravel(),
                              np.asarray(y_input, float).ravel(), [float(h)]])
        return self.predict(row[None, :])[0]

    def score(self, X, y) -> float:
        """Negative mean squared L2 error in label space (larger is better)."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=float)
        return -float(np.mean(np.sum((pred - y) ** 2, axis=1)))


# -- serialization ----------------------------------------------------------

def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode_array(s: str, n: int) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8", count=n).copy()


def save_model(path: str | Path, est) -> None:
    """Serialize a fitted estimator to one self-describing JSON file.

    The flat parameter vector is stored as base64-encoded little-endian
    float64 bytes, so a load/save round trip is bitwise exact.
    """
    path = Path(path)
    if isinstance(est, DeepONetOperator):
        check_is_fitted(est, "model_")
        m = est.model_
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "kind": "deeponet",
            "params": est.get_params(),
            "branch_spec": m.branch.to_dict(),
            "trunk_spec": m.trunk.to_dict(),
            "q": m.q,
            "n_state": m.n_state,
            "n_input": m.n_input,
            "n_sensors": m.n_sensors,
            "output_mode": m.output_mode,
            "norm": m.norm.to_dict(),
            "n_theta": int(m.theta.size),
            "theta": _encode_array(m.theta),
        }
    elif isinstance(est, NextStateRegressor):
        check_is_fitted(est, "theta_")
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "kind": "fnn",
            "params": est.get_params(),
            "spec": est.spec_.to_dict(),
            "norm": {
                "x_mean": est.x_mean_.tolist(), "x_std": est.x_std_.tolist(),
                "y_mean": est.y_mean_.tolist(), "y_std": est.y_std_.tolist(),
            },
            "n_theta": int(est.theta_.size),
            "theta": _encode_array(est.theta_),
        }
    else:
        raise TypeError(f"cannot serialize {type(est).__name__}")
    params = doc["params"]
    for key, value in list(params.items()):
        if isinstance(value, tuple):
            params[key] = list(value)
    path.write_text(json.dumps(doc, indent=1))


def load_model(path: str | Path):
    """Load an estimator saved by :func:`save_model`."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {doc.get('version')}")
    params = dict(doc["params"])
    for key, value in list(params.items()):
        if isinstance(value, list):
            params[key] = tuple(value)
    theta = _decode_array(doc["theta"], doc["n_theta"])
    if doc["kind"] == "deeponet":
        est = DeepONetOperator(**params)
        est.model_ = DeepONetModel(
            NetworkSpec.from_dict(doc["branch_spec"]),
            NetworkSpec.from_dict(doc["trunk_spec"]),
            int(doc["q"]), int(doc["n_state"]), int(doc["n_input"]),
            int(doc["n_sensors"]), doc["output_mode"], theta,
            NormalizationStats.from_dict(doc["norm"]),
        )
        est.n_features_in_ = est.model_.branch.input_dim + 1
        return est
    if doc["kind"] == "fnn":
        est = NextStateRegressor(**params)
        est.spec_ = NetworkSpec.from_dict(doc["spec"])
        est.theta_ = theta
        norm = doc["norm"]
        est.x_mean_ = np.asarray(norm["x_mean"], dtype=float)
        est.x_std_ = np.asarray(norm["x_std"], dtype=float)
        est.y_mean_ = np.asarray(norm["y_mean"], dtype=float)
        est.y_std_ = np.asarray(norm["y_std"], dtype=float)
        est.n_features_in_ = est.spec_.input_dim
        return est
    raise ValueError(f"{path}: unknown model kind {doc['kind']!r}")
