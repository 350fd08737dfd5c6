"""Iterative data aggregation for operator models interacting with the grid.

Each iteration trains on the current aggregate, rolls the trained model out
in closed loop from freshly sampled initial conditions, collects the
(state, input, step) triples the model actually visited, labels them with
the reference solution operator, and unions them into the aggregate. The
labels never come from the model itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import clone

from gridop.operator import DeepONetModel, DeepONetOperator
from gridop.physics import (
    GeneratorParams,
    GridParams,
    State,
    TimePartition,
    Trajectory,
    uniform_partition,
)
from gridop.rollout import (
    ClosedLoopProvider,
    RolloutDivergedError,
    rollout_data_driven,
    rollout_residual,
)
from gridop.sampling import (
    DatasetSample,
    gamma_perturbed_state,
    make_label,
    samples_to_arrays,
)

__all__ = ["DaggerConfig", "DaggerIteration", "DaggerResult", "collect_visited", "run_dagger"]


@dataclass(frozen=True)
class DaggerConfig:
    """Aggregation loop settings: rollout budget, horizon, retraining policy."""

    n_iter: int = 5
    n_rollout: int = 10
    partition: TimePartition = field(
        default_factory=lambda: uniform_partition(5.0, 0.05)
    )
    gamma_range: tuple[float, float] = (0.2, 1.5)
    warm_start: bool = True
    finetune_epochs: int | None = None  # default: half the template's budget
    label_substeps: int = 16

    def __post_init__(self) -> None:
        if self.n_iter < 1 or self.n_rollout < 1:
            raise ValueError("n_iter and n_rollout must be >= 1")


@dataclass
class DaggerIteration:
    """Bookkeeping for one aggregation round."""

    index: int
    n_aggregate: int  # training-set size used this round
    n_collected: int  # visited points added after this round
    n_diverged: int  # rollouts cut short by the divergence guard
    best_val_loss: float
    model: DeepONetModel  # snapshot after this round's training


@dataclass
class DaggerResult:
    estimator: DeepONetOperator
    iterations: list[DaggerIteration]
    aggregate: list[DatasetSample]

    def estimator_at(self, iteration: int) -> DeepONetOperator:
        """Reconstruct the model as trained at the end of round ``iteration``."""
        snap = self.iterations[iteration - 1]
        est = clone(self.estimator)
        m = snap.model
        est.model_ = DeepONetModel(
            m.branch, m.trunk, m.q, m.n_state, m.n_input, m.n_sensors,
            m.output_mode, m.theta.copy(), m.norm,
        )
        est.n_features_in_ = m.branch.input_dim + 1
        return est


def collect_visited(
    times: np.ndarray, states: np.ndarray, inputs: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """One (visited state, interface input, step) triple per executed step.

    The states are the rollout's own predictions, not the reference
    trajectory; labeling happens separately with the true operator.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    n_steps = min(times.size - 1, states.shape[0] - 1)
    out = []
    for n in range(n_steps):
        h_n = float(times[n + 1] - times[n])
        out.append((states[n], inputs[n], h_n))
    return out


def collect_visited_trajectory(traj: Trajectory) -> list[tuple[np.ndarray, np.ndarray, float]]:
    return collect_visited(traj.times, traj.states, traj.inputs)


def run_dagger(
    initial_dataset: Sequence[DatasetSample],
    template: DeepONetOperator,
    cfg: DaggerConfig,
    gp: GeneratorParams,
    grid: GridParams,
    x_star: State,
    rng: np.random.Generator,
    verbose: bool = False,
) -> DaggerResult:
    """Train-rollout-label-aggregate loop returning the final trained model.

    ``gp`` carries the approximate-model beta used by residual rollouts;
    labels always integrate the reference (beta = 1) model. Diverged
    rollouts still contribute their visited points up to the divergence
    step. The first round trains from scratch with the template's full
    epoch budget; later rounds either fine-tune from the previous
    parameters at a reduced budget (``warm_start``) or retrain cold.
    """
    if not initial_dataset:
        raise ValueError("initial dataset must be nonempty")
    aggregate = list(initial_dataset)
    mode = template.output_mode
    est = clone(template)
    finetune = cfg.finetune_epochs
    if finetune is None:
        finetune = max(1, template.epochs // 2)
    provider = ClosedLoopProvider(gp, grid)
    iterations: list[DaggerIteration] = []

    for it in range(1, cfg.n_iter + 1):
        if it > 1:
            if cfg.warm_start:
                est.set_params(warm_start=True, epochs=finetune)
            else:
                est = clone(template)
        X, y = samples_to_arrays(aggregate, template.n_sensors)
        est.fit(X, y)
        n_agg = len(aggregate)

        visited: list[tuple[np.ndarray, np.ndarray, float]] = []
        n_div = 0
        for _ in range(cfg.n_rollout):
            gamma = rng.uniform(*cfg.gamma_range)
            x0 = gamma_perturbed_state(x_star, gamma)
            try:
                if mode == "residual":
                    traj = rollout_residual(est, x0, cfg.partition, provider, gp)
                else:
                    traj = rollout_data_driven(est, x0, cfg.partition, provider)
                visited.extend(collect_visited_trajectory(traj))
            except RolloutDivergedError as err:
                n_div += 1
                visited.extend(collect_visited(err.times, err.states, err.inputs))

        new_samples = []
        for x_v, y_v, h_v in visited:
            label = make_label(
                State(*x_v), y_v[None, :], np.zeros(1), h_v, mode, gp,
                substeps=cfg.label_substeps,
            )
            new_samples.append(
                DatasetSample(x_v, y_v[None, :], np.zeros(1), h_v, label)
            )
        aggregate.extend(new_samples)

        m = est.model_
        snapshot = DeepONetModel(
            m.branch, m.trunk, m.q, m.n_state, m.n_input, m.n_sensors,
            m.output_mode, m.theta.copy(), m.norm,
        )
        iterations.append(DaggerIteration(
            index=it,
            n_aggregate=n_agg,
            n_collected=len(new_samples),
            n_diverged=n_div,
            best_val_loss=float(est.history_["val"].min()),
            model=snapshot,
        ))
        if verbose:
            print(
                f"[dagger] iter {it}: trained on {n_agg}, collected {len(new_samples)}"
                f" ({n_div} diverged), best val {iterations[-1].best_val_loss:.3e}"
            )

    return DaggerResult(est, iterations, aggregate)
