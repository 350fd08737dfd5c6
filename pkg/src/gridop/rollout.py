"""Recursive rollout of trained operator models over a time partition.

Two coupling modes are supported through input providers:

* closed loop -- the model's own predicted state is used to solve the
  network equations at every step, so prediction errors feed back into the
  interface inputs (the interacting-simulation setting);
* recorded (shadow) -- interface inputs are read from a stored reference
  trajectory and the model's errors cannot contaminate them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from gridop.physics import (
    FaultEvent,
    GeneratorParams,
    GridParams,
    State,
    TimePartition,
    Trajectory,
    grid_at,
    integrate_with_input,
    solve_network,
)
from gridop.sampling import sensor_input_function

__all__ = [
    "RolloutDivergedError",
    "InputProvider",
    "ClosedLoopProvider",
    "RecordedProvider",
    "rollout_data_driven",
    "rollout_residual",
    "irregular_partition",
]

DIVERGENCE_LIMIT = 1e3


class RolloutDivergedError(RuntimeError):
    """Prediction left the admissible region; carries the partial rollout."""

    def __init__(self, step: int, times: np.ndarray, states: np.ndarray,
                 inputs: np.ndarray):
        super().__init__(f"rollout diverged at step {step}")
        self.step = step
        self.times = times
        self.states = states
        self.inputs = inputs


class InputProvider(Protocol):
    """Source of sensor readings of the interface input along a rollout."""

    m: int

    def sensors_at(self, t_n: float, h_n: float, x_pred: State
                   ) -> tuple[np.ndarray, np.ndarray]:
        """Sensor values (m, 2) and offsets (m,) for the step [t_n, t_n + h_n]."""
        ...

    def final_input(self, t_end: float, x_pred: State) -> np.ndarray:
        """Interface input recorded at the final partition point."""
        ...


class ClosedLoopProvider:
    """Inputs from the network equations evaluated on the predicted state.

    Single-sensor only: the interface input is read at the step start, under
    the fault schedule active at that time.
    """

    m = 1

    def __init__(self, gp: GeneratorParams, grid: GridParams,
                 faults: Sequence[FaultEvent] = ()):
        self.gp = gp
        self.grid = grid
        self.faults = tuple(faults)

    def sensors_at(self, t_n, h_n, x_pred):
        g = grid_at(t_n, self.grid, self.faults)
        y = solve_network(x_pred, self.gp, g)
        return np.array([y], dtype=float), np.zeros(1)

    def final_input(self, t_end, x_pred):
        g = grid_at(t_end, self.grid, self.faults)
        return np.array(solve_network(x_pred, self.gp, g), dtype=float)


class RecordedProvider:
    """Inputs read from a stored trajectory (shadow mode).

    Never touches the network equations, so model errors cannot propagate
    into the inputs. Sensor values at interior offsets are linearly
    interpolated between the recorded samples. With ``m = 2`` the second
    sensor sits at ``loc_fraction * h_n`` into the step.
    """

    def __init__(self, trajectory: Trajectory, m: int = 1,
                 loc_fraction: float = 1.0):
        if m < 1:
            raise ValueError("sensor count must be >= 1")
        if not 0.0 < loc_fraction <= 1.0:
            raise ValueError("loc_fraction must lie in (0, 1]")
        self.trajectory = trajectory
        self.m = m
        self.loc_fraction = loc_fraction
        self._times = trajectory.times
        self._inputs = trajectory.inputs

    def _input_at(self, t: float) -> np.ndarray:
        lo, hi = self._times[0], self._times[-1]
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise ValueError("recorded trajectory does not cover the rollout partition")
        return np.array([
            np.interp(t, self._times, self._inputs[:, 0]),
            np.interp(t, self._times, self._inputs[:, 1]),
        ])

    def sensors_at(self, t_n, h_n, x_pred):
        if self.m == 1:
            return self._input_at(t_n)[None, :], np.zeros(1)
        offs = np.concatenate([
            [0.0], np.linspace(self.loc_fraction * h_n / (self.m - 1),
                               self.loc_fraction * h_n, self.m - 1)
        ])
        values = np.vstack([self._input_at(t_n + d) for d in offs])
        return values, offs

    def final_input(self, t_end, x_pred):
        return self._input_at(t_end)


def _check_state(vec: np.ndarray, step: int, times, states, inputs) -> None:
    if not np.all(np.isfinite(vec)) or np.max(np.abs(vec)) > DIVERGENCE_LIMIT:
        raise RolloutDivergedError(step, np.asarray(times), np.asarray(states),
                                   np.asarray(inputs))


def rollout_data_driven(
    model,
    x0: State,
    partition: TimePartition,
    provider: InputProvider,
) -> Trajectory:
    """Recursive one-step prediction with a full or incremental operator.

    Per step the provider supplies the discretized interface input, the
    operator predicts the next state (or its increment), and the predicted
    state seeds the following step.
    """
    mode = model.output_mode
    if mode not in ("full", "incremental"):
        raise ValueError("data-driven rollout needs a full or incremental model")
    pts = partition.points
    states = [np.array(x0, dtype=float)]
    inputs: list[np.ndarray] = []
    x = np.array(x0, dtype=float)
    for n in range(partition.n_steps):
        t_n = float(pts[n])
        h_n = float(pts[n + 1] - pts[n])
        sensors, locs = provider.sensors_at(t_n, h_n, State(*x))
        inputs.append(sensors[0].copy())
        pred = model.predict_step(x, sensors, locs, h_n)
        x_next = pred if mode == "full" else x + pred
        _check_state(x_next, n + 1, pts[: n + 1], states, inputs)
        states.append(x_next)
        x = x_next
    inputs.append(provider.final_input(float(pts[-1]), State(*x)))
    return Trajectory(partition, np.vstack(states), np.vstack(inputs),
                      "rollout_data_driven")


def rollout_residual(
    model,
    x0: State,
    partition: TimePartition,
    provider: InputProvider,
    gp_approx: GeneratorParams,
    substeps: int = 16,
) -> Trajectory:
    """Residual scheme: approximate-model step plus learned correction.

    Per step the degraded (beta-scaled) model is integrated against the
    frozen/interpolated sensor input, the operator predicts the correction,
    and their sum is the next state.
    """
    if model.output_mode != "residual":
        raise ValueError("residual rollout needs a residual-mode model")
    pts = partition.points
    states = [np.array(x0, dtype=float)]
    inputs: list[np.ndarray] = []
    x = np.array(x0, dtype=float)
    for n in range(partition.n_steps):
        t_n = float(pts[n])
        h_n = float(pts[n + 1] - pts[n])
        sensors, locs = provider.sensors_at(t_n, h_n, State(*x))
        inputs.append(sensors[0].copy())
        y_of_s = sensor_input_function(sensors, locs)
        x_apx = integrate_with_input(State(*x), y_of_s, gp_approx, h_n, substeps)
        correction = model.predict_step(x, sensors, locs, h_n)
        x_next = np.array(x_apx) + correction
        _check_state(x_next, n + 1, pts[: n + 1], states, inputs)
        states.append(x_next)
        x = x_next
    inputs.append(provider.final_input(float(pts[-1]), State(*x)))
    return Trajectory(partition, np.vstack(states), np.vstack(inputs),
                      "rollout_residual")


def irregular_partition(
    t_end: float,
    n_points: int,
    rng: np.random.Generator,
    max_step: float = 0.25,
    max_tries: int = 1000,
) -> TimePartition:
    """Random partition: sorted distinct uniform draws on (0, t_end], with 0
    prepended; redrawn until every step is in (0, max_step]."""
    if n_points < 2:
        raise ValueError("need at least two random points")
    if t_end / n_points > max_step:
        raise ValueError("too few points to satisfy the max step")
    for _ in range(max_tries):
        draws = np.sort(rng.uniform(0.0, t_end, n_points))
        pts = np.concatenate([[0.0], draws])
        steps = np.diff(pts)
        if np.all(steps > 0.0) and np.all(steps <= max_step):
            return TimePartition(pts, max_step=max_step)
    raise RuntimeError("could not draw an admissible irregular partition")
