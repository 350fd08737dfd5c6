"""Operator-learning surrogates for synchronous-generator transient dynamics.

The package learns the local solution operator of a two-axis generator
coupled to an infinite bus with a branch/trunk deep operator network, rolls
it out recursively against the algebraic network equations, supports a
physics-residual variant with a computable cumulative error bound, and
trains either by plain supervised learning or by data aggregation.
"""

from gridop.physics import (
    FaultEvent,
    GeneratorParams,
    GridParams,
    InterfaceInput,
    State,
    TimePartition,
    Trajectory,
    simulate_truth,
    uniform_partition,
)
from gridop.operator import (
    DeepONetOperator,
    NextStateRegressor,
    load_model,
    save_model,
)
from gridop.sampling import (
    DatasetSample,
    SamplingRanges,
    SensorSpec,
    build_test_suite,
    build_training_set,
    make_label,
    samples_to_arrays,
)
from gridop.rollout import (
    ClosedLoopProvider,
    RecordedProvider,
    irregular_partition,
    rollout_data_driven,
    rollout_residual,
)
from gridop.dagger import DaggerConfig, run_dagger
from gridop.metrics import (
    BoundInputs,
    ErrorTable,
    cumulative_bound,
    error_table,
    l2_relative_error,
    verify_bound,
)
from gridop.config import ExperimentConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "ClosedLoopProvider",
    "DaggerConfig",
    "DatasetSample",
    "DeepONetOperator",
    "ErrorTable",
    "ExperimentConfig",
    "FaultEvent",
    "GeneratorParams",
    "GridParams",
    "InterfaceInput",
    "NextStateRegressor",
    "RecordedProvider",
    "SamplingRanges",
    "SensorSpec",
    "State",
    "TimePartition",
    "Trajectory",
    "build_test_suite",
    "build_training_set",
    "cumulative_bound",
    "error_table",
    "irregular_partition",
    "l2_relative_error",
    "load_config",
    "load_model",
    "make_label",
    "rollout_data_driven",
    "rollout_residual",
    "run_dagger",
    "samples_to_arrays",
    "save_model",
    "simulate_truth",
    "uniform_partition",
    "verify_bound",
    "__version__",
]
