"""Error metrics, Lipschitz-constant estimation, and the cumulative error bound.

The trajectory metric throughout is the L2-relative error in percent,
``100 * ||pred - truth||_2 / ||truth||_2`` over the sampled time series of
one quantity. Tables aggregate mean and population standard deviation over
a trajectory set, per state and per interface-input component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from gridop.physics import (
    GeneratorParams,
    GridParams,
    InterfaceInput,
    State,
    Trajectory,
    integrate_frozen,
    rk4_step,
    solve_network,
    two_axis_rhs,
)
from gridop.sampling import SamplingRanges

__all__ = [
    "QUANTITIES",
    "quantity_series",
    "l2_relative_error",
    "ErrorTable",
    "error_table",
    "estimate_lipschitz",
    "estimate_lipschitz_f",
    "estimate_lipschitz_flow",
    "estimate_input_deviation",
    "BoundInputs",
    "cumulative_bound",
    "BoundReport",
    "verify_bound",
]

QUANTITIES = ("delta", "omega", "e_d_prime", "e_q_prime", "i_d", "i_q")
_STATE_COLS = {"delta": 0, "omega": 1, "e_d_prime": 2, "e_q_prime": 3}
_INPUT_COLS = {"i_d": 0, "i_q": 1}

DENOM_FLOOR = 1e-12


def quantity_series(traj: Trajectory, quantity: str) -> np.ndarray:
    """One quantity's sampled time series (states or interface inputs)."""
    if quantity in _STATE_COLS:
        return traj.states[:, _STATE_COLS[quantity]]
    if quantity in _INPUT_COLS:
        return traj.inputs[:, _INPUT_COLS[quantity]]
    raise ValueError(f"unknown quantity {quantity!r}")


def l2_relative_error(pred: Trajectory, truth: Trajectory, quantity: str) -> float:
    """Percent L2-relative error of one quantity's sampled time series."""
    if pred.times.shape != truth.times.shape or not np.allclose(
        pred.times, truth.times, rtol=0.0, atol=1e-9
    ):
        raise ValueError("trajectories live on different partitions")
    p = quantity_series(pred, quantity)
    t = quantity_series(truth, quantity)
    denom = max(float(np.linalg.norm(t)), DENOM_FLOOR)
    return 100.0 * float(np.linalg.norm(p - t)) / denom


@dataclass(frozen=True)
class ErrorTable:
    """Mean and population standard deviation of the percent L2 error."""

    mean: dict[str, float]
    std: dict[str, float]
    n_trajectories: int

    def __post_init__(self) -> None:
        for q in QUANTITIES:
            if q not in self.mean or q not in self.std:
                raise ValueError(f"missing quantity {q!r}")
            if self.mean[q] < 0 or self.std[q] < 0:
                raise ValueError("error statistics must be nonnegative")

    def row(self, which: str) -> list[float]:
        src = self.mean if which == "mean" else self.std
        return [src[q] for q in QUANTITIES]

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std),
                "n_trajectories": self.n_trajectories}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorTable":
        return cls(dict(d["mean"]), dict(d["std"]), int(d["n_trajectories"]))


def error_table(
    preds: Sequence[Trajectory], truths: Sequence[Trajectory]
) -> ErrorTable:
    """Aggregate per-quantity L2-relative errors over matched trajectory pairs."""
    if len(preds) != len(truths):
        raise ValueError("prediction and truth sets must have equal size")
    if not preds:
        raise ValueError("empty trajectory set")
    errs = {q: np.array([l2_relative_error(p, t, q) for p, t in zip(preds, truths)])
            for q in QUANTITIES}
    mean = {q: float(errs[q].mean()) for q in QUANTITIES}
    std = {q: float(errs[q].std()) for q in QUANTITIES}  # population convention
    return ErrorTable(mean, std, len(preds))


# -- Lipschitz estimation -----------------------------------------------------

def estimate_lipschitz(
    field: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x_bounds: np.ndarray,
    y_bounds: np.ndarray,
    n_probe: int,
    rng: np.random.Generator,
    inflation: float = 2.0,
) -> float:
    """Probed Lipschitz estimate of a vector field in both arguments.

    Maximizes the difference quotients ``||f(x1,y)-f(x2,y)|| / ||x1-x2||``
    and the y-analogue over ``n_probe`` random pairs, then inflates by a
    safety factor. Probes are drawn sequentially, so nested probe budgets
    with a common seed give non-decreasing estimates.
    """
    if n_probe < 2:
        raise ValueError("need at least two probes")

    def draw(bounds):
        return rng.uniform(bounds[:, 0], bounds[:, 1])

    best = 0.0
    for _ in range(n_probe):
        x1, x2 = draw(x_bounds), draw(x_bounds)
        y = draw(y_bounds)
        dx = np.linalg.norm(x1 - x2)
        if dx > 1e-12:
            q = np.linalg.norm(field(x1, y) - field(x2, y)) / dx
            best = max(best, q)
        x = draw(x_bounds)
        y1, y2 = draw(y_bounds), draw(y_bounds)
        dy = np.linalg.norm(y1 - y2)
        if dy > 1e-12:
            q = np.linalg.norm(field(x, y1) - field(x, y2)) / dy
            best = max(best, q)
    return inflation * best


def estimate_lipschitz_f(
    gp: GeneratorParams,
    ranges: SamplingRanges,
    n_probe: int,
    rng: np.random.Generator,
    inflation: float = 2.0,
) -> float:
    """Lipschitz estimate of the reference (beta = 1) generator vector field."""
    gp_true = replace(gp, beta=1.0)

    def field(xv: np.ndarray, yv: np.ndarray) -> np.ndarray:
        return np.array(two_axis_rhs(State(*xv), InterfaceInput(*yv), gp_true))

    return estimate_lipschitz(field, ranges.state_bounds, ranges.input_bounds,
                              n_probe, rng, inflation)


def estimate_lipschitz_flow(
    gp: GeneratorParams,
    ranges: SamplingRanges,
    h: float,
    n_probe: int,
    rng: np.random.Generator,
    substeps: int = 16,
    inflation: float = 2.0,
) -> float:
    """Lipschitz estimate (in the state) of the one-step frozen-input flow map."""
    gp_true = replace(gp, beta=1.0)
    best = 0.0
    xb, yb = ranges.state_bounds, ranges.input_bounds
    for _ in range(n_probe):
        x1 = rng.uniform(xb[:, 0], xb[:, 1])
        x2 = rng.uniform(xb[:, 0], xb[:, 1])
        y = InterfaceInput(*rng.uniform(yb[:, 0], yb[:, 1]))
        dx = np.linalg.norm(x1 - x2)
        if dx <= 1e-12:
            continue
        f1 = integrate_frozen(State(*x1), y, gp_true, h, substeps)
        f2 = integrate_frozen(State(*x2), y, gp_true, h, substeps)
        best = max(best, np.linalg.norm(np.array(f1) - np.array(f2)) / dx)
    return inflation * best


def estimate_input_deviation(
    gp: GeneratorParams,
    grid: GridParams,
    ranges: SamplingRanges,
    h: float,
    n_probe: int,
    rng: np.random.Generator,
    substeps: int = 16,
    inflation: float = 2.0,
) -> float:
    """Single-sensor input-approximation bound kappa.

    Compares the frozen step-start input with the network-consistent input
    along a resolved one-step integration, maximizing the deviation over
    probes of network-consistent starting states.
    """
    gp_true = replace(gp, beta=1.0)
    xb = ranges.state_bounds
    best = 0.0
    for _ in range(n_probe):
        x = State(*rng.uniform(xb[:, 0], xb[:, 1]))
        y0 = np.array(solve_network(x, gp_true, grid))
        hs = h / substeps
        xi = x
        for _ in range(substeps):
            xi = rk4_step(xi, gp_true, hs, grid=grid)
            y_s = np.array(solve_network(xi, gp_true, grid))
            best = max(best, float(np.linalg.norm(y_s - y0)))
    return inflation * best


# -- cumulative error bound ---------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    """Constants feeding the two-term cumulative error bound."""

    L: float  # vector-field Lipschitz constant
    L_phi: float  # one-step flow-map Lipschitz constant
    eps: float  # network approximation error
    kappa: float  # input approximation error
    h: float  # maximum step size
    n: int  # number of steps

    def __post_init__(self) -> None:
        for name in ("L", "L_phi", "eps", "kappa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.n < 0:
            raise ValueError("n must be nonnegative")


def _geometric_sum(r: float, n: int) -> float:
    # sum_{k=0}^{n-1} r^k, with the r -> 1 limit handled explicitly
    if abs(r - 1.0) < 1e-9:
        return float(n)
    return (1.0 - r**n) / (1.0 - r)


def cumulative_bound(b: BoundInputs) -> float:
    """Two-term cumulative error bound after ``n`` steps.

    The input-approximation term compounds with ratio ``exp(L h)`` and
    per-step amplitude ``L h kappa exp(L h)``; the network-approximation
    term compounds with the flow-map constant and amplitude ``eps``.
    """
    r = math.exp(b.L * b.h)
    amp = b.L * b.h * b.kappa * math.exp(b.L * b.h)
    return amp * _geometric_sum(r, b.n) + b.eps * _geometric_sum(b.L_phi, b.n)


@dataclass
class BoundReport:
    """Outcome of the empirical bound-verification experiment."""

    L: float
    L_phi: float
    eps: float
    kappa: float
    h: float
    bound: np.ndarray  # (M+1,) bound value per partition index
    errors: np.ndarray  # (n_rollouts, M+1) per-step state error norms
    satisfied: np.ndarray  # (n_rollouts,) bound held at every step
    diverged: int  # rollouts aborted by the divergence guard

    @property
    def n_satisfied(self) -> int:
        return int(np.sum(self.satisfied))

    def to_dict(self) -> dict:
        return {
            "L": self.L, "L_phi": self.L_phi, "eps": self.eps,
            "kappa": self.kappa, "h": self.h,
            "bound": self.bound.tolist(),
            "max_error_per_rollout": self.errors.max(axis=1).tolist(),
            "satisfied": self.satisfied.astype(bool).tolist(),
            "n_satisfied": self.n_satisfied,
            "n_rollouts": int(self.errors.shape[0]),
            "diverged": self.diverged,
        }


def verify_bound(
    estimator,
    X_val: np.ndarray,
    y_val: np.ndarray,
    gp_approx: GeneratorParams,
    grid: GridParams,
    ranges: SamplingRanges,
    x_star: State,
    partition,
    n_rollouts: int,
    rng: np.random.Generator,
    gamma_range: tuple[float, float] = (0.2, 1.5),
    n_probe: int = 1000,
) -> BoundReport:
    """Check rollout errors of a residual model against the cumulative bound.

    ``gp_approx`` is the degraded model integrated inside the residual
    scheme; rollouts are compared against the reference (beta = 1) truth.
    Constants are estimated (and inflated) from probes: ``eps`` as the
    largest validation prediction error, ``L`` from the vector field,
    ``L_phi`` from the one-step flow map, ``kappa`` from frozen-versus-
    resolved inputs. An unsatisfied bound is reported, not raised.
    """
    from gridop.rollout import (
        ClosedLoopProvider,
        RolloutDivergedError,
        rollout_residual,
    )
    from gridop.sampling import gamma_perturbed_state
    from gridop.physics import simulate_truth

    if estimator.output_mode != "residual":
        raise ValueError("bound verification applies to residual-mode models")
    gp_true = replace(gp_approx, beta=1.0)

    pred_err = estimator.predict(X_val) - y_val
    eps = float(np.max(np.linalg.norm(pred_err, axis=1)))
    h = float(partition.max_step)
    L = estimate_lipschitz_f(gp_true, ranges, n_probe, rng)
    L_phi = estimate_lipschitz_flow(gp_true, ranges, h, n_probe, rng)
    kappa = estimate_input_deviation(gp_true, grid, ranges, h,
                                     max(1, n_probe // 10), rng)

    m = partition.points.size
    steps = np.arange(m)
    bound = np.array([
        cumulative_bound(BoundInputs(L, L_phi, eps, kappa, h, int(n)))
        for n in steps
    ])

    errors = np.full((n_rollouts, m), np.nan)
    satisfied = np.zeros(n_rollouts, dtype=bool)
    diverged = 0
    provider = ClosedLoopProvider(gp_true, grid)
    for k in range(n_rollouts):
        gamma = rng.uniform(*gamma_range)
        x0 = gamma_perturbed_state(x_star, gamma)
        truth = simulate_truth(x0, partition, gp_true, grid)
        try:
            pred = rollout_residual(estimator, x0, partition, provider,
                                    gp_approx)
        except RolloutDivergedError:
            diverged += 1
            continue
        err = np.linalg.norm(pred.states - truth.states, axis=1)
        errors[k] = err
        satisfied[k] = bool(np.all(err <= bound + 1e-12))
    return BoundReport(L, L_phi, eps, kappa, h, bound, errors, satisfied, diverged)
