"""Training-set and test-suite construction.

Two sampling procedures for branch-net inputs: independent uniform draws
over the state and input boxes, or uniform state draws with the interface
input obtained by solving the network equations. Labels integrate the
reference model over one step against the sensor-discretized input; the
residual mode additionally integrates the degraded (beta-scaled) model and
labels the difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from gridop.operator import pack_features
from gridop.physics import (
    FaultEvent,
    GeneratorParams,
    GridParams,
    InterfaceInput,
    State,
    TimePartition,
    Trajectory,
    integrate_with_input,
    simulate_truth,
    solve_network,
)

__all__ = [
    "SamplingRanges",
    "SensorSpec",
    "DatasetSample",
    "sample_state_input",
    "sample_state_solve_network",
    "sensor_input_function",
    "make_label",
    "build_training_set",
    "trajectory_to_samples",
    "build_test_suite",
    "samples_to_arrays",
    "default_fault_grid",
    "gamma_perturbed_state",
]

LABEL_SUBSTEPS = 16
ORACLE_SUBSTEPS = 256


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform sampling boxes for states, interface inputs, and step sizes."""

    delta: tuple[float, float] = (-math.pi, 4.0 * math.pi)
    omega: tuple[float, float] = (0.0, math.pi / 2.0)
    e_d_prime: tuple[float, float] = (-1.0, 1.0)
    e_q_prime: tuple[float, float] = (0.0, 1.5)
    i_d: tuple[float, float] = (-1.0, 3.0)
    i_q: tuple[float, float] = (-1.0, 1.0)
    h: tuple[float, float] = (1e-3, 0.25)  # open at the left end

    def __post_init__(self) -> None:
        for name in ("delta", "omega", "e_d_prime", "e_q_prime", "i_d", "i_q", "h"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"range {name} needs lower < upper")
        if self.h[0] <= 0:
            raise ValueError("h range must exclude zero-length steps")

    @property
    def state_bounds(self) -> np.ndarray:
        return np.array([self.delta, self.omega, self.e_d_prime, self.e_q_prime])

    @property
    def input_bounds(self) -> np.ndarray:
        return np.array([self.i_d, self.i_q])


@dataclass(frozen=True)
class SensorSpec:
    """Number of input sensors per step and their placement rule.

    ``m = 1`` is the singleton sensor at the step start (partition-solution
    semantics). For ``m >= 2`` the first sensor is pinned at offset 0 and the
    remaining offsets are drawn uniformly from the open step interior.
    """

    m: int = 1

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("sensor count must be >= 1")

    @property
    def rule(self) -> str:
        return "singleton" if self.m == 1 else "fixed_plus_uniform"


@dataclass(frozen=True)
class DatasetSample:
    """One supervised triplet: (state, discretized input, step) -> label."""

    state: np.ndarray  # (4,)
    sensors: np.ndarray  # (m, 2)
    sensor_locs: np.ndarray  # (m,), first entry 0, increasing, <= h
    h: float
    label: np.ndarray  # (4,)

    def __post_init__(self) -> None:
        state = np.asarray(self.state, dtype=float)
        sensors = np.atleast_2d(np.asarray(self.sensors, dtype=float))
        locs = np.asarray(self.sensor_locs, dtype=float)
        label = np.asarray(self.label, dtype=float)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "sensor_locs", locs)
        object.__setattr__(self, "label", label)
        if state.shape != (4,) or label.shape != (4,):
            raise ValueError("state and label must be 4-vectors")
        if sensors.shape != (locs.size, 2):
            raise ValueError("sensors must be (m, 2) matching sensor_locs")
        if self.h <= 0:
            raise ValueError("step size must be positive")
        if locs[0] != 0.0:
            raise ValueError("first sensor offset must be 0")
        if np.any(np.diff(locs) <= 0):
            raise ValueError("sensor offsets must be strictly increasing")
        if locs[-1] > self.h * (1.0 + 1e-12):
            raise ValueError("sensor offsets must not exceed the step size")
        for arr in (state, sensors, locs, label):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite sample data")

    @property
    def m(self) -> int:
        return self.sensor_locs.size


def _uniform_box(bounds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(bounds[:, 0], bounds[:, 1])


def sample_state_input(
    ranges: SamplingRanges, rng: np.random.Generator
) -> tuple[State, InterfaceInput]:
    """Procedure 1: independent uniform draws over the state and input boxes."""
    x = _uniform_box(ranges.state_bounds, rng)
    y = _uniform_box(ranges.input_bounds, rng)
    return State(*x), InterfaceInput(*y)


def sample_state_solve_network(
    ranges: SamplingRanges,
    gp: GeneratorParams,
    grid: GridParams,
    rng: np.random.Generator,
) -> tuple[State, InterfaceInput]:
    """Procedure 2: uniform state draw, input from the network equations."""
    x = State(*_uniform_box(ranges.state_bounds, rng))
    return x, solve_network(x, gp, grid)


def sensor_input_function(
    sensors: np.ndarray, locs: np.ndarray
) -> Callable[[float], InterfaceInput]:
    """Interface-input signal reconstructed from the sensors.

    A single sensor freezes the input; multiple sensors are joined by linear
    interpolation, held constant beyond the last sensor.
    """
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    locs = np.asarray(locs, dtype=float)
    if sensors.shape[0] == 1:
        y = InterfaceInput(*sensors[0])
        return lambda s: y

    def y_of_s(s: float) -> InterfaceInput:
        i_d = np.interp(s, locs, sensors[:, 0])
        i_q = np.interp(s, locs, sensors[:, 1])
        return InterfaceInput(float(i_d), float(i_q))

    return y_of_s


def make_label(
    x: State,
    sensors: np.ndarray,
    sensor_locs: np.ndarray,
    h: float,
    mode: str,
    gp: GeneratorParams,
    substeps: int = LABEL_SUBSTEPS,
) -> np.ndarray:
    """Supervised label for one step under the sensor-discretized input.

    The reference model (beta forced to 1) is integrated over [0, h]; in
    ``residual`` mode the configured ``gp.beta`` model is integrated
    identically and the label is the difference of the endpoints.
    """
    if mode not in ("full", "incremental", "residual"):
        raise ValueError(f"unknown label mode {mode!r}")
    y_of_s = sensor_input_function(sensors, sensor_locs)
    gp_true = replace(gp, beta=1.0)
    x_true = integrate_with_input(x, y_of_s, gp_true, h, substeps)
    if mode == "full":
        return np.array(x_true)
    if mode == "incremental":
        return np.array(x_true) - np.array(x)
    x_approx = integrate_with_input(x, y_of_s, gp, h, substeps)
    return np.array(x_true) - np.array(x_approx)


def _draw_step(ranges: SamplingRanges, rng: np.random.Generator) -> float:
    # h on the half-open interval (h_min, h_max]
    lo, hi = ranges.h
    return hi - rng.uniform(0.0, 1.0) * (hi - lo)


def _draw_sensor_locs(m: int, h: float, rng: np.random.Generator) -> np.ndarray:
    if m == 1:
        return np.zeros(1)
    while True:
        inner = np.sort(rng.uniform(0.0, h, m - 1))
        if inner[0] > 0.0 and np.all(np.diff(inner) > 0.0):
            return np.concatenate([[0.0], inner])


def build_training_set(
    n_samples: int,
    procedure: str,
    mode: str,
    sensor_spec: SensorSpec,
    ranges: SamplingRanges,
    gp: GeneratorParams,
    grid: GridParams,
    rng: np.random.Generator,
    label_substeps: int = LABEL_SUBSTEPS,
) -> list[DatasetSample]:
    """Draw i.i.d. supervised samples per the requested procedure and mode.

    ``procedure`` is ``"state_input"`` (independent box draws) or
    ``"network"`` (inputs from the network equations). The network procedure
    is defined for the single-sensor case only.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if procedure not in ("state_input", "network"):
        raise ValueError(f"unknown sampling procedure {procedure!r}")
    if procedure == "network" and sensor_spec.m != 1:
        raise ValueError("the network-equation procedure supports m = 1 only")

    samples = []
    for _ in range(n_samples):
        if procedure == "state_input":
            x, y0 = sample_state_input(ranges, rng)
        else:
            x, y0 = sample_state_solve_network(ranges, gp, grid, rng)
        h = _draw_step(ranges, rng)
        locs = _draw_sensor_locs(sensor_spec.m, h, rng)
        values = [np.array(y0)]
        for _ in range(sensor_spec.m - 1):
            values.append(_uniform_box(ranges.input_bounds, rng))
        sensors = np.vstack(values)
        label = make_label(x, sensors, locs, h, mode, gp, substeps=label_substeps)
        samples.append(DatasetSample(np.array(x), sensors, locs, h, label))
    return samples


def trajectory_to_samples(
    traj: Trajectory,
    sensor_spec: SensorSpec,
    mode: str,
    rng: np.random.Generator,
    gp: GeneratorParams | None = None,
    label_substeps: int = LABEL_SUBSTEPS,
) -> list[DatasetSample]:
    """Shadow-mode dataset: samples read off a recorded trajectory.

    Labels come from the recorded states themselves (``full`` /
    ``incremental``) or, in ``residual`` mode, from the gap between the
    recorded next state and an approximate-model step (requires ``gp``).
    Sensor values at interior offsets are linearly interpolated between the
    recorded inputs at the step endpoints.
    """
    if mode == "residual" and gp is None:
        raise ValueError("residual shadow labels need the approximate-model parameters")
    times = traj.times
    samples = []
    for n in range(traj.partition.n_steps):
        h = float(times[n + 1] - times[n])
        x_n = traj.states[n]
        y_n = traj.inputs[n]
        y_next = traj.inputs[n + 1]
        locs = _draw_sensor_locs(sensor_spec.m, h, rng)
        frac = locs / h
        sensors = y_n[None, :] + frac[:, None] * (y_next - y_n)[None, :]
        if mode == "full":
            label = traj.states[n + 1].copy()
        elif mode == "incremental":
            label = traj.states[n + 1] - x_n
        else:
            y_of_s = sensor_input_function(sensors, locs)
            x_apx = integrate_with_input(State(*x_n), y_of_s, gp, h, label_substeps)
            label = traj.states[n + 1] - np.array(x_apx)
        samples.append(DatasetSample(x_n.copy(), sensors, locs, h, label))
    return samples


def default_fault_grid(grid: GridParams, factor: float = 5.0) -> GridParams:
    """Faulted impedance: scale the external reactance (default x5)."""
    return replace(grid, X_ep=grid.X_ep * factor)


def gamma_perturbed_state(x_star: State, gamma: float) -> State:
    """Test initial condition: equilibrium with the rotor speed scaled by gamma."""
    return State(x_star.delta, gamma * x_star.omega, x_star.e_d_prime, x_star.e_q_prime)


def build_test_suite(
    kind: str,
    n_traj: int,
    partition: TimePartition,
    gp: GeneratorParams,
    grid: GridParams,
    x_star: State,
    rng: np.random.Generator,
    gamma_range: tuple[float, float] = (0.2, 1.5),
    t_fault: float = 1.0,
    fault_duration_range: tuple[float, float] = (0.05, 1.0),
    fault_grid: GridParams | None = None,
    substeps: int = 8,
    fault_durations: Sequence[float] | None = None,
) -> list[Trajectory]:
    """Reference test trajectories: speed-perturbed starts or fault events.

    ``gamma_perturbed`` scales the equilibrium rotor speed by a uniform
    gamma; ``fault`` starts at the equilibrium and switches the grid
    impedance at ``t_fault`` for a uniformly drawn duration (or the
    explicit ``fault_durations``, when a caller needs to record them).
    """
    if kind not in ("gamma_perturbed", "fault"):
        raise ValueError(f"unknown test-suite kind {kind!r}")
    if fault_grid is None:
        fault_grid = default_fault_grid(grid)
    out = []
    for i in range(n_traj):
        if kind == "gamma_perturbed":
            gamma = rng.uniform(*gamma_range)
            x0 = gamma_perturbed_state(x_star, gamma)
            faults: tuple[FaultEvent, ...] = ()
        else:
            if fault_durations is not None:
                duration = float(fault_durations[i])
            else:
                duration = rng.uniform(*fault_duration_range)
            x0 = x_star
            faults = (FaultEvent(t_fault, duration, fault_grid),)
        out.append(simulate_truth(x0, partition, gp, grid, faults, substeps))
    return out


def samples_to_arrays(
    samples: Sequence[DatasetSample], n_sensors: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pack samples into the estimator's (X, y) matrices."""
    if not samples:
        raise ValueError("empty sample list")
    X = np.vstack([
        pack_features(s.state, s.sensors, s.sensor_locs, s.h, n_sensors)
        for s in samples
    ])
    y = np.vstack([s.label for s in samples])
    return X, y
