"""Experiment configuration: one YAML file with named sections.

Every key has a shipped default except ``seed`` and ``out_dir``, which must
be explicit so no run is silently nondeterministic or writes to an implied
location. Unknown keys and type mismatches are reported with their dotted
paths. The packaged ``configs/default.yaml`` encodes the full default
experiment (training sizes, ranges, fault schedule, aggregation budget).
"""

from __future__ import annotations

import importlib.resources
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from gridop.operator import DeepONetOperator, NextStateRegressor
from gridop.physics import (
    GeneratorParams,
    GridParams,
    State,
    calibrate_operating_point,
)
from gridop.sampling import SamplingRanges, SensorSpec

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "default_config_path"]

ENV_CONFIG = "GRIDOP_CONFIG"


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass(frozen=True)
class GeneratorSection:
    T_d0_prime: float = 8.0
    T_q0_prime: float = 0.8
    X_d: float = 1.81
    X_d_prime: float = 0.30
    X_q: float = 1.76
    X_q_prime: float = 0.65
    H: float = 1.2
    D: float = 2.0
    omega_s: float = 1.0
    omega_base: float = 1.0
    beta_approx: float = 0.5


@dataclass(frozen=True)
class GridSection:
    R_s: float = 0.003
    R_e: float = 0.01
    X_ep: float = 0.35
    V_inf: float = 1.0
    theta_inf: float = 0.0


@dataclass(frozen=True)
class OperatingPointSection:
    delta: float = 0.8
    e_q_prime: float = 1.1


@dataclass(frozen=True)
class RangesSection:
    delta: tuple[float, float] = (-math.pi, 4.0 * math.pi)
    omega: tuple[float, float] = (0.0, math.pi / 2.0)
    e_d_prime: tuple[float, float] = (-1.0, 1.0)
    e_q_prime: tuple[float, float] = (0.0, 1.5)
    i_d: tuple[float, float] = (-1.0, 3.0)
    i_q: tuple[float, float] = (-1.0, 1.0)
    h: tuple[float, float] = (1e-3, 0.25)


@dataclass(frozen=True)
class SensorsSection:
    m: int = 1
    loc_fraction: float = 1.0  # second-sensor placement for shadow rollouts


@dataclass(frozen=True)
class DataSection:
    n_train: int = 2000
    procedure: str = "state_input"  # or "network"
    n_test: int = 500
    label_substeps: int = 16
    truth_substeps: int = 8


@dataclass(frozen=True)
class ModelSection:
    q: int = 20
    branch_hidden: tuple[int, ...] = (60, 60, 60)
    trunk_hidden: tuple[int, ...] = (60, 60, 60)
    architecture: str = "modified_fc"
    activation: str = "tanh"
    leaky_slope: float = 0.01


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 5e-3
    epochs: int = 2000
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    min_lr: float = 1e-5
    validation_fraction: float = 0.2


@dataclass(frozen=True)
class RolloutSection:
    t_end: float = 10.0
    h: float = 0.05
    partition: str = "uniform"  # or "irregular"
    irregular_points: int = 200


@dataclass(frozen=True)
class TestSection:
    gamma_range: tuple[float, float] = (0.2, 1.5)
    t_fault: float = 1.0
    fault_duration: tuple[float, float] = (0.05, 1.0)
    fault_impedance_factor: float = 5.0


@dataclass(frozen=True)
class DaggerSection:
    n_iter: int = 5
    n_rollout: int = 10
    t_end: float = 5.0
    h: float = 0.05
    n_initial: int = 100
    warm_start: bool = True


@dataclass(frozen=True)
class BoundSection:
    n_rollouts: int = 20
    n_probe: int = 1000


_SECTIONS = {
    "generator": GeneratorSection,
    "grid": GridSection,
    "operating_point": OperatingPointSection,
    "ranges": RangesSection,
    "sensors": SensorsSection,
    "data": DataSection,
    "model": ModelSection,
    "training": TrainingSection,
    "rollout": RolloutSection,
    "test": TestSection,
    "dagger": DaggerSection,
    "bound": BoundSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out_dir: str
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    grid: GridSection = field(default_factory=GridSection)
    operating_point: OperatingPointSection = field(default_factory=OperatingPointSection)
    ranges: RangesSection = field(default_factory=RangesSection)
    sensors: SensorsSection = field(default_factory=SensorsSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    rollout: RolloutSection = field(default_factory=RolloutSection)
    test: TestSection = field(default_factory=TestSection)
    dagger: DaggerSection = field(default_factory=DaggerSection)
    bound: BoundSection = field(default_factory=BoundSection)

    # -- bridges into the library -------------------------------------------
    def physics(self) -> tuple[State, GeneratorParams, GeneratorParams, GridParams]:
        """(x_star, gp_reference, gp_approximate, grid) with calibrated constants."""
        g = self.generator
        gp = GeneratorParams(
            T_d0_prime=g.T_d0_prime, T_q0_prime=g.T_q0_prime,
            X_d=g.X_d, X_d_prime=g.X_d_prime, X_q=g.X_q, X_q_prime=g.X_q_prime,
            H=g.H, D=g.D, omega_s=g.omega_s, omega_base=g.omega_base,
        )
        grid = GridParams(**{f.name: getattr(self.grid, f.name)
                             for f in fields(GridSection)})
        x_star, gp_cal = calibrate_operating_point(
            gp, grid, self.operating_point.delta, self.operating_point.e_q_prime
        )
        gp_approx = replace(gp_cal, beta=g.beta_approx)
        return x_star, gp_cal, gp_approx, grid

    def sampling_ranges(self) -> SamplingRanges:
        return SamplingRanges(**{f.name: getattr(self.ranges, f.name)
                                 for f in fields(RangesSection)})

    def sensor_spec(self) -> SensorSpec:
        return SensorSpec(self.sensors.m)

    def estimator(self, output_mode: str) -> DeepONetOperator:
        m, t = self.model, self.training
        return DeepONetOperator(
            q=m.q, n_sensors=self.sensors.m, output_mode=output_mode,
            branch_hidden=m.branch_hidden, trunk_hidden=m.trunk_hidden,
            architecture=m.architecture, activation=m.activation,
            leaky_slope=m.leaky_slope,
            learning_rate=t.learning_rate, epochs=t.epochs,
            batch_size=t.batch_size, beta1=t.beta1, beta2=t.beta2, eps=t.eps,
            plateau_factor=t.plateau_factor, plateau_patience=t.plateau_patience,
            min_lr=t.min_lr, validation_fraction=t.validation_fraction,
            random_state=self.seed,
        )

    def fnn_baseline(self) -> NextStateRegressor:
        m, t = self.model, self.training
        return NextStateRegressor(
            hidden=m.branch_hidden, architecture=m.architecture,
            activation=m.activation, leaky_slope=m.leaky_slope,
            learning_rate=t.learning_rate, epochs=t.epochs,
            batch_size=t.batch_size, beta1=t.beta1, beta2=t.beta2, eps=t.eps,
            plateau_factor=t.plateau_factor, plateau_patience=t.plateau_patience,
            min_lr=t.min_lr, validation_fraction=t.validation_fraction,
            random_state=self.seed,
        )

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"seed": self.seed, "out_dir": self.out_dir}
        for name, cls in _SECTIONS.items():
            sec = getattr(self, name)
            out[name] = {
                f.name: list(v) if isinstance(v := getattr(sec, f.name), tuple) else v
                for f in fields(cls)
            }
        return out


def _coerce(path: str, value: Any, target: Any) -> Any:
    """Coerce one YAML value onto a dataclass field type, with path diagnostics."""
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if target is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    origin = getattr(target, "__origin__", None)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        args = target.__args__
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(f"{path}[{i}]", v, args[0])
                         for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries")
        return tuple(_coerce(f"{path}[{i}]", v, a)
                     for i, (v, a) in enumerate(zip(value, args)))
    raise ConfigError(f"{path}: unsupported config field type {target!r}")


def _build_section(name: str, cls, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    hints = _type_hints(cls)
    for key, value in raw.items():
        kwargs[key] = _coerce(f"{name}.{key}", value, hints[key])
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _type_hints(cls) -> dict:
    import typing

    return typing.get_type_hints(cls)


def load_config(path: str | Path | None = None, seed: int | None = None,
                out_dir: str | None = None) -> ExperimentConfig:
    """Load and validate a YAML config; optional seed/out_dir overrides.

    With no path, ``$GRIDOP_CONFIG`` is consulted and then the packaged
    defaults file. ``seed`` and ``out_dir`` are required keys unless
    overridden here.
    """
    if path is None:
        path = os.environ.get(ENV_CONFIG) or default_config_path()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    known = {"seed", "out_dir", *_SECTIONS}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")

    if seed is None:
        if "seed" not in raw:
            raise ConfigError("missing required key: seed")
        seed = _coerce("seed", raw["seed"], int)
    if out_dir is None:
        if "out_dir" not in raw:
            raise ConfigError("missing required key: out_dir")
        out_dir = _coerce("out_dir", raw["out_dir"], str)

    sections = {
        name: _build_section(name, cls, raw.get(name))
        for name, cls in _SECTIONS.items()
    }
    cfg = ExperimentConfig(seed=seed, out_dir=out_dir, **sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.data.procedure not in ("state_input", "network"):
        raise ConfigError("data.procedure: must be 'state_input' or 'network'")
    if cfg.rollout.partition not in ("uniform", "irregular"):
        raise ConfigError("rollout.partition: must be 'uniform' or 'irregular'")
    if cfg.sensors.m < 1:
        raise ConfigError("sensors.m: must be >= 1")
    if cfg.data.n_train < 1 or cfg.data.n_test < 1:
        raise ConfigError("data.n_train and data.n_test must be >= 1")
    for name in ("t_end", "h"):
        if getattr(cfg.rollout, name) <= 0:
            raise ConfigError(f"rollout.{name}: must be positive")
    # cheap physics sanity: the sections must construct valid parameter sets
    try:
        cfg.physics()
        cfg.sampling_ranges()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def default_config_path() -> Path:
    """Path of the packaged defaults file."""
    res = importlib.resources.files("gridop") / "configs" / "default.yaml"
    return Path(str(res))
