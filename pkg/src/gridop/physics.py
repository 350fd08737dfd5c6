"""Two-axis synchronous generator physics against an infinite bus.

Ground-truth layer: generator ODE right-hand side, algebraic network
equations of the infinite bus, equilibrium solvers, fault schedules, and a
fixed-step RK4 integrator used as the reference solution operator.

Conventions
-----------
* State ordering is ``(delta, omega, e_d_prime, e_q_prime)`` everywhere.
* Rotor speed ``omega`` is in per unit with ``omega_s = 1``; the angle
  equation ``d(delta)/dt = omega_base * (omega - omega_s)`` defaults to
  ``omega_base = 1`` (per-unit time base).
* The q-axis network equation uses ``cos(delta - theta_inf)``, the standard
  stator-algebraic form. See README for the sign conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "State",
    "InterfaceInput",
    "GeneratorParams",
    "GridParams",
    "FaultEvent",
    "TimePartition",
    "Trajectory",
    "SingularNetworkError",
    "EquilibriumNotFoundError",
    "electrical_torque",
    "two_axis_rhs",
    "solve_network",
    "network_residual",
    "rk4_step",
    "integrate_frozen",
    "integrate_with_input",
    "simulate_truth",
    "find_equilibrium",
    "calibrate_operating_point",
    "uniform_partition",
    "default_generator",
    "default_grid",
]


class SingularNetworkError(ValueError):
    """Network matrix determinant below tolerance: no unique current solution."""


class EquilibriumNotFoundError(RuntimeError):
    """Newton iteration failed to reach the equilibrium residual tolerance."""


class State(NamedTuple):
    """Generator state (delta [rad], omega [p.u.], E'd [p.u.], E'q [p.u.])."""

    delta: float
    omega: float
    e_d_prime: float
    e_q_prime: float


class InterfaceInput(NamedTuple):
    """Stator currents (I_d, I_q) in p.u., the algebraic interface to the grid."""

    i_d: float
    i_q: float


@dataclass(frozen=True)
class GeneratorParams:
    """Two-axis (transient) generator parameters, all in p.u. except time constants.

    ``beta`` scales the damping term and sets the model fidelity: ``beta = 1``
    is the reference model, ``beta < 1`` the degraded approximate model used
    for residual learning.
    """

    T_d0_prime: float = 8.0  # d-axis open-circuit transient time constant (s)
    T_q0_prime: float = 0.8  # q-axis open-circuit transient time constant (s)
    X_d: float = 1.81
    X_d_prime: float = 0.30
    X_q: float = 1.76
    X_q_prime: float = 0.65
    H: float = 1.2  # inertia constant (s)
    D: float = 2.0  # damping coefficient (p.u.)
    omega_s: float = 1.0  # synchronous speed (p.u.)
    E_fld: float = 2.0  # field voltage, held constant
    T_M: float = 0.5  # mechanical torque, held constant
    beta: float = 1.0  # damping fidelity scalar
    omega_base: float = 1.0  # optional multiplier on d(delta)/dt

    def __post_init__(self) -> None:
        if not (self.T_d0_prime > 0 and self.T_q0_prime > 0):
            raise ValueError("time constants must be positive")
        if not self.H > 0:
            raise ValueError("inertia H must be positive")
        if not (self.X_d >= self.X_d_prime > 0):
            raise ValueError("require X_d >= X_d' > 0")
        if not (self.X_q >= self.X_q_prime > 0):
            raise ValueError("require X_q >= X_q' > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass(frozen=True)
class GridParams:
    """Infinite-bus network parameters (resistances, external reactance, bus phasor)."""

    R_s: float = 0.003  # stator resistance (p.u.)
    R_e: float = 0.01  # external resistance (p.u.)
    X_ep: float = 0.35  # external reactance (p.u.)
    V_inf: float = 1.0  # infinite-bus voltage magnitude (p.u.)
    theta_inf: float = 0.0  # infinite-bus angle (rad)

    def __post_init__(self) -> None:
        if self.V_inf < 0:
            raise ValueError("V_inf must be nonnegative")


@dataclass(frozen=True)
class FaultEvent:
    """Impedance switch active on ``[t_start, t_start + duration)``."""

    t_start: float
    duration: float
    faulted_grid: GridParams

    def __post_init__(self) -> None:
        if self.t_start < 0:
            raise ValueError("fault start must be nonnegative")
        if self.duration <= 0:
            raise ValueError("fault duration must be positive")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


@dataclass(frozen=True)
class TimePartition:
    """Strictly increasing time points t_0 = 0 < ... < t_M with steps <= max_step."""

    points: np.ndarray
    max_step: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("partition needs at least two points")
        if pts[0] != 0.0:
            raise ValueError("partition must start at t = 0")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise ValueError("partition points must be strictly increasing")
        # tolerate float round-off from linspace-style construction
        if np.any(steps > self.max_step * (1.0 + 1e-9)):
            raise ValueError("partition step exceeds max_step")

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    @property
    def t_end(self) -> float:
        return float(self.points[-1])


PROVENANCES = ("truth", "rollout_data_driven", "rollout_residual", "shadow")


@dataclass(frozen=True)
class Trajectory:
    """States and interface inputs sampled on a time partition."""

    partition: TimePartition
    states: np.ndarray  # (M+1, 4)
    inputs: np.ndarray  # (M+1, 2)
    provenance: str

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        n = self.partition.points.size
        if states.shape != (n, 4):
            raise ValueError(f"states must have shape ({n}, 4)")
        if inputs.shape != (n, 2):
            raise ValueError(f"inputs must have shape ({n}, 2)")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def times(self) -> np.ndarray:
        return self.partition.points

    def state_at(self, n: int) -> State:
        return State(*self.states[n])

    def input_at(self, n: int) -> InterfaceInput:
        return InterfaceInput(*self.inputs[n])


def _check_finite_state(x: State, y: InterfaceInput) -> None:
    for v in (*x, *y):
        if not math.isfinite(v):
            raise ValueError("non-finite state")


def electrical_torque(x: State, y: InterfaceInput, gp: GeneratorParams) -> float:
    """Air-gap electrical torque T_E = E'd I_d + E'q I_q + (X'q - X'd) I_d I_q."""
    return (
        x.e_d_prime * y.i_d
        + x.e_q_prime * y.i_q
        + (gp.X_q_prime - gp.X_d_prime) * y.i_d * y.i_q
    )


def two_axis_rhs(
    x: State, y: InterfaceInput, gp: GeneratorParams
) -> tuple[float, float, float, float]:
    """Time derivative of (delta, omega, E'd, E'q) for the two-axis model.

    The damping term carries the fidelity factor ``gp.beta``; with
    ``beta = 1`` this is the reference model.
    """
    _check_finite_state(x, y)
    t_e = electrical_torque(x, y, gp)
    d_delta = gp.omega_base * (x.omega - gp.omega_s)
    d_omega = (gp.omega_s / (2.0 * gp.H)) * (
        gp.T_M - t_e - gp.beta * gp.D * (x.omega - gp.omega_s)
    )
    d_ed = (-x.e_d_prime + (gp.X_q - gp.X_q_prime) * y.i_q) / gp.T_q0_prime
    d_eq = (
        -x.e_q_prime - (gp.X_d - gp.X_d_prime) * y.i_d + gp.E_fld
    ) / gp.T_d0_prime
    return (d_delta, d_omega, d_ed, d_eq)


def solve_network(
    x: State, gp: GeneratorParams, grid: GridParams
) -> InterfaceInput:
    """Solve the infinite-bus network equations for the stator currents.

        (R_s+R_e) I_d - (X'q+X_ep) I_q = E'd - V_inf sin(delta - theta_inf)
        (R_s+R_e) I_q + (X'd+X_ep) I_d = E'q - V_inf cos(delta - theta_inf)
    """
    a = grid.R_s + grid.R_e
    b_q = gp.X_q_prime + grid.X_ep
    b_d = gp.X_d_prime + grid.X_ep
    det = a * a + b_q * b_d
    if abs(det) < 1e-12:
        raise SingularNetworkError(f"singular network (det = {det:.3e})")
    angle = x.delta - grid.theta_inf
    rhs_d = x.e_d_prime - grid.V_inf * math.sin(angle)
    rhs_q = x.e_q_prime - grid.V_inf * math.cos(angle)
    i_d = (a * rhs_d + b_q * rhs_q) / det
    i_q = (a * rhs_q - b_d * rhs_d) / det
    return InterfaceInput(i_d, i_q)


def network_residual(
    x: State, y: InterfaceInput, gp: GeneratorParams, grid: GridParams
) -> tuple[float, float]:
    """Residuals of the two network equations (zero when y solves them)."""
    a = grid.R_s + grid.R_e
    angle = x.delta - grid.theta_inf
    r1 = (
        a * y.i_d
        - (gp.X_q_prime + grid.X_ep) * y.i_q
        - x.e_d_prime
        + grid.V_inf * math.sin(angle)
    )
    r2 = (
        a * y.i_q
        + (gp.X_d_prime + grid.X_ep) * y.i_d
        - x.e_q_prime
        + grid.V_inf * math.cos(angle)
    )
    return (r1, r2)


def _rhs_resolved(x: State, gp: GeneratorParams, grid: GridParams):
    return two_axis_rhs(x, solve_network(x, gp, grid), gp)


def rk4_step(
    x: State,
    gp: GeneratorParams,
    h: float,
    *,
    grid: GridParams | None = None,
    y: InterfaceInput | None = None,
) -> State:
    """One classical RK4 step of size ``h``.

    Exactly one of ``grid`` and ``y`` must be given: with ``grid`` the network
    equations are re-solved at every stage state (truth-generation coupling);
    with ``y`` the interface input is frozen for all four stages (single-sensor
    semantics of the partitioned-solution approach).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    if (grid is None) == (y is None):
        raise ValueError("pass exactly one of grid= (resolve) or y= (frozen)")

    if y is not None:
        f: Callable[[State], tuple[float, float, float, float]] = (
            lambda s: two_axis_rhs(s, y, gp)
        )
    else:
        f = lambda s: _rhs_resolved(s, gp, grid)

    k1 = f(x)
    x2 = State(
        x.delta + 0.5 * h * k1[0],
        x.omega + 0.5 * h * k1[1],
        x.e_d_prime + 0.5 * h * k1[2],
        x.e_q_prime + 0.5 * h * k1[3],
    )
    k2 = f(x2)
    x3 = State(
        x.delta + 0.5 * h * k2[0],
        x.omega + 0.5 * h * k2[1],
        x.e_d_prime + 0.5 * h * k2[2],
        x.e_q_prime + 0.5 * h * k2[3],
    )
    k3 = f(x3)
    x4 = State(
        x.delta + h * k3[0],
        x.omega + h * k3[1],
        x.e_d_prime + h * k3[2],
        x.e_q_prime + h * k3[3],
    )
    k4 = f(x4)
    c = h / 6.0
    return State(
        x.delta + c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x.omega + c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x.e_d_prime + c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        x.e_q_prime + c * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    )


def integrate_frozen(
    x: State, y: InterfaceInput, gp: GeneratorParams, h: float, substeps: int
) -> State:
    """Integrate the frozen-input model over [0, h] with equal RK4 substeps."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    hs = h / substeps
    for _ in range(substeps):
        x = rk4_step(x, gp, hs, y=y)
    return x


def integrate_with_input(
    x: State,
    y_of_s: Callable[[float], InterfaceInput],
    gp: GeneratorParams,
    h: float,
    substeps: int,
) -> State:
    """Integrate over [0, h] with a time-varying interface input ``y_of_s``.

    The input is evaluated at the RK4 stage times, so a piecewise-linear
    sensor interpolation is honored inside each substep.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    hs = h / substeps
    for k in range(substeps):
        s0 = k * hs
        y0 = y_of_s(s0)
        ymid = y_of_s(s0 + 0.5 * hs)
        y1 = y_of_s(s0 + hs)
        f = two_axis_rhs
        k1 = f(x, y0, gp)
        x2 = State(
            x.delta + 0.5 * hs * k1[0],
            x.omega + 0.5 * hs * k1[1],
            x.e_d_prime + 0.5 * hs * k1[2],
            x.e_q_prime + 0.5 * hs * k1[3],
        )
        k2 = f(x2, ymid, gp)
        x3 = State(
            x.delta + 0.5 * hs * k2[0],
            x.omega + 0.5 * hs * k2[1],
            x.e_d_prime + 0.5 * hs * k2[2],
            x.e_q_prime + 0.5 * hs * k2[3],
        )
        k3 = f(x3, ymid, gp)
        x4 = State(
            x.delta + hs * k3[0],
            x.omega + hs * k3[1],
            x.e_d_prime + hs * k3[2],
            x.e_q_prime + hs * k3[3],
        )
        k4 = f(x4, y1, gp)
        c = hs / 6.0
        x = State(
            x.delta + c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x.omega + c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            x.e_d_prime + c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            x.e_q_prime + c * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        )
    return x


def grid_at(
    t: float, grid: GridParams, faults: Sequence[FaultEvent] = ()
) -> GridParams:
    """The grid parameters active at time ``t`` under the fault schedule."""
    for ev in faults:
        if ev.active(t):
            return ev.faulted_grid
    return grid


def simulate_truth(
    x0: State,
    partition: TimePartition,
    gp: GeneratorParams,
    grid: GridParams,
    faults: Sequence[FaultEvent] = (),
    substeps: int = 8,
) -> Trajectory:
    """Reference simulation: stage-resolved RK4 marching the partition.

    Each macro step is split into ``substeps`` equal RK4 substeps; the fault
    schedule is sampled at substep boundaries, so switching times are honored
    at resolution ``h_n / substeps``.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    pts = partition.points
    n_rec = pts.size
    states = np.empty((n_rec, 4))
    inputs = np.empty((n_rec, 2))

    x = x0
    states[0] = x
    inputs[0] = solve_network(x, gp, grid_at(pts[0], grid, faults))
    for n in range(n_rec - 1):
        t_n = pts[n]
        h_n = pts[n + 1] - t_n
        hs = h_n / substeps
        for k in range(substeps):
            g = grid_at(t_n + k * hs, grid, faults)
            x = rk4_step(x, gp, hs, grid=g)
        states[n + 1] = x
        inputs[n + 1] = solve_network(x, gp, grid_at(pts[n + 1], grid, faults))
    return Trajectory(partition, states, inputs, "truth")


def _equilibrium_residual(
    x: State, gp: GeneratorParams, grid: GridParams
) -> np.ndarray:
    y = solve_network(x, gp, grid)
    return np.array(two_axis_rhs(x, y, gp))


def find_equilibrium(
    gp: GeneratorParams,
    grid: GridParams,
    guess: State,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> State:
    """Damped Newton solve of f(x, y(x)) = 0 for the full (beta = 1) model.

    The Jacobian is formed by central differences; steps that fail to reduce
    the residual norm are halved up to 8 times before giving up on descent
    for that iteration.
    """
    gp_true = replace(gp, beta=1.0)
    x = np.array(guess, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")

    def res(v: np.ndarray) -> np.ndarray:
        return _equilibrium_residual(State(*v), gp_true, grid)

    r = res(x)
    for _ in range(max_iter):
        norm = np.max(np.abs(r))
        if norm <= tol:
            # polish: keep iterating while the residual still improves, so the
            # returned point is an equilibrium to near machine precision
            for _ in range(5):
                jac = _numerical_jacobian(res, x)
                try:
                    step = np.linalg.solve(jac, -r)
                except np.linalg.LinAlgError:
                    break
                x_new = x + step
                r_new = res(x_new)
                if np.max(np.abs(r_new)) >= norm:
                    break
                x, r = x_new, r_new
                norm = np.max(np.abs(r))
            return State(*x)
        jac = _numerical_jacobian(res, x)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumNotFoundError("singular Jacobian") from exc
        scale = 1.0
        x_new = x + step
        r_new = res(x_new)
        for _ in range(8):
            if np.max(np.abs(r_new)) < norm:
                break
            scale *= 0.5
            x_new = x + scale * step
            r_new = res(x_new)
        x, r = x_new, r_new
    raise EquilibriumNotFoundError(
        f"equilibrium not found in {max_iter} iterations (residual {np.max(np.abs(r)):.3e})"
    )


def _numerical_jacobian(
    fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = 1e-7
) -> np.ndarray:
    n = x.size
    jac = np.empty((n, n))
    for j in range(n):
        step = eps * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        jac[:, j] = (fun(xp) - fun(xm)) / (2.0 * step)
    return jac


def calibrate_operating_point(
    gp: GeneratorParams,
    grid: GridParams,
    delta: float,
    e_q_prime: float,
) -> tuple[State, GeneratorParams]:
    """Back-solve the constants that make a chosen operating point an equilibrium.

    Given the rotor angle and q-axis EMF, the d-axis EMF is pinned by the
    q-axis flux balance E'd = (X_q - X'q) I_q, which is linear in E'd through
    the network solution; E_fld and T_M follow from the remaining steady-state
    equations. Returns the equilibrium state and a parameter set with the
    calibrated constants.
    """
    k = gp.X_q - gp.X_q_prime

    def i_q_at(e_d: float) -> float:
        x = State(delta, gp.omega_s, e_d, e_q_prime)
        return solve_network(x, gp, grid).i_q

    # I_q is affine in E'd: solve E'd = k * (c0 + c1 E'd) in closed form
    c0 = i_q_at(0.0)
    c1 = i_q_at(1.0) - c0
    denom = 1.0 - k * c1
    if abs(denom) < 1e-12:
        raise EquilibriumNotFoundError("operating point back-solve is singular")
    e_d = k * c0 / denom

    x_star = State(delta, gp.omega_s, e_d, e_q_prime)
    y_star = solve_network(x_star, gp, grid)
    e_fld = e_q_prime + (gp.X_d - gp.X_d_prime) * y_star.i_d
    t_m = electrical_torque(x_star, y_star, gp)
    gp_cal = replace(gp, E_fld=e_fld, T_M=t_m)
    return x_star, gp_cal


def uniform_partition(t_end: float, h: float) -> TimePartition:
    """Uniform partition of [0, t_end] with step size h (t_end a multiple of h)."""
    n = round(t_end / h)
    if n < 1 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a positive multiple of h")
    return TimePartition(np.linspace(0.0, t_end, n + 1), max_step=h)


def default_generator() -> GeneratorParams:
    """Ship-with defaults: a textbook-style single-machine two-axis parameter set."""
    return GeneratorParams()


def default_grid() -> GridParams:
    return GridParams()


def default_operating_point() -> tuple[State, GeneratorParams, GridParams]:
    """Default calibrated operating point (delta* = 0.8 rad, E'q* = 1.1 p.u.)."""
    gp = default_generator()
    grid = default_grid()
    x_star, gp_cal = calibrate_operating_point(gp, grid, delta=0.8, e_q_prime=1.1)
    return x_star, gp_cal, grid
