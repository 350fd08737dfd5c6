"""Multi-run experiment helpers: suite rollouts and sensitivity sweeps.

The sweeps rerun the supervised pipeline across training-set sizes or
aggregation budgets under a shared seed policy (per-purpose child streams
of one base seed), aggregate per-point error tables, and optionally emit a
tidy CSV of the results.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import clone

from gridop.dagger import DaggerConfig, run_dagger
from gridop.metrics import QUANTITIES, ErrorTable, error_table
from gridop.operator import DeepONetOperator
from gridop.physics import (
    GeneratorParams,
    GridParams,
    State,
    TimePartition,
    Trajectory,
)
from gridop.rollout import (
    ClosedLoopProvider,
    RolloutDivergedError,
    rollout_data_driven,
    rollout_residual,
)
from gridop.sampling import (
    SamplingRanges,
    SensorSpec,
    build_test_suite,
    build_training_set,
    samples_to_arrays,
)

__all__ = ["rollout_suite", "sweep_train_size", "sweep_dagger_iters",
           "sweep_to_csv", "grid_search_architecture"]


def grid_search_architecture(
    template: DeepONetOperator,
    X: np.ndarray,
    y: np.ndarray,
    widths: Sequence[int] = (40, 60),
    depths: Sequence[int] = (2, 3),
    verbose: bool = False,
) -> tuple[dict, list[tuple[dict, float]]]:
    """Small architecture search over hidden widths and depths.

    Fits a clone of the template per combination (same widths for branch and
    trunk) and ranks by best validation loss. Not run by any default
    pipeline; a convenience for retuning on new parameter sets.
    """
    results = []
    for width in widths:
        for depth in depths:
            hidden = tuple([int(width)] * int(depth))
            est = clone(template)
            est.set_params(branch_hidden=hidden, trunk_hidden=hidden)
            est.fit(X, y)
            score = float(np.min(est.history_["val"]))
            params = {"branch_hidden": hidden, "trunk_hidden": hidden}
            results.append((params, score))
            if verbose:
                print(f"[grid] {width}x{depth}: best val {score:.3e}")
    results.sort(key=lambda item: item[1])
    return results[0][0], results


def rollout_suite(
    model,
    truths: Sequence[Trajectory],
    gp: GeneratorParams,
    grid: GridParams,
    gp_approx: GeneratorParams | None = None,
    faults: Sequence[tuple] | None = None,
    substeps: int = 16,
) -> tuple[list[Trajectory], list[Trajectory], int]:
    """Closed-loop rollouts from each truth trajectory's initial state.

    Returns (predictions, matched truths, n_diverged); diverged rollouts are
    dropped from both lists so the sets stay paired.
    """
    preds, kept = [], []
    n_div = 0
    for i, truth in enumerate(truths):
        x0 = State(*truth.states[0])
        provider = ClosedLoopProvider(gp, grid, faults[i] if faults else ())
        try:
            if model.output_mode == "residual":
                traj = rollout_residual(model, x0, truth.partition, provider,
                                        gp_approx, substeps=substeps)
            else:
                traj = rollout_data_driven(model, x0, truth.partition, provider)
        except RolloutDivergedError:
            n_div += 1
            continue
        preds.append(traj)
        kept.append(truth)
    return preds, kept, n_div


def sweep_train_size(
    sizes: Sequence[int],
    seeds: Sequence[int],
    template: DeepONetOperator,
    mode: str,
    procedure: str,
    partition: TimePartition,
    gp: GeneratorParams,
    gp_approx: GeneratorParams,
    grid: GridParams,
    x_star: State,
    ranges: SamplingRanges,
    n_test: int = 50,
    gamma_range: tuple[float, float] = (0.2, 1.5),
    verbose: bool = False,
) -> dict[int, list[ErrorTable]]:
    """Error tables as a function of the training-set size, per seed.

    The per-seed test suite is fixed across sizes, so differences reflect
    the training data alone.
    """
    label_gp = gp_approx if mode == "residual" else gp
    out: dict[int, list[ErrorTable]] = {int(n): [] for n in sizes}
    for seed in seeds:
        truths = build_test_suite(
            "gamma_perturbed", n_test, partition, gp, grid, x_star,
            np.random.default_rng([seed, 101]), gamma_range=gamma_range,
        )
        for n in sizes:
            samples = build_training_set(
                int(n), procedure, mode, SensorSpec(template.n_sensors), ranges,
                label_gp, grid, np.random.default_rng([seed, 100, int(n)]),
            )
            est = clone(template)
            est.set_params(random_state=seed)
            X, y = samples_to_arrays(samples, template.n_sensors)
            est.fit(X, y)
            preds, kept, n_div = rollout_suite(est, truths, gp, grid, gp_approx)
            table = error_table(preds, kept)
            out[int(n)].append(table)
            if verbose:
                print(f"[sweep] seed={seed} n={n}: delta mean "
                      f"{table.mean['delta']:.3f}% ({n_div} diverged)")
    return out


def sweep_dagger_iters(
    n_iters: Sequence[int],
    seeds: Sequence[int],
    template: DeepONetOperator,
    dagger_cfg: DaggerConfig,
    n_initial: int,
    procedure: str,
    test_partition: TimePartition,
    gp_approx: GeneratorParams,
    gp: GeneratorParams,
    grid: GridParams,
    x_star: State,
    ranges: SamplingRanges,
    n_test: int = 50,
    fault_grid: GridParams | None = None,
    t_fault: float = 1.0,
    fault_duration_range: tuple[float, float] = (0.05, 1.0),
    verbose: bool = False,
) -> dict[int, list[ErrorTable]]:
    """Fault-suite error tables as a function of the aggregation budget.

    One aggregation run per seed at the largest budget provides snapshots
    for every smaller budget (the loop prefix is the smaller run).
    """
    from gridop.physics import FaultEvent
    from gridop.sampling import default_fault_grid

    mode = template.output_mode
    label_gp = gp_approx if mode == "residual" else gp
    if fault_grid is None:
        fault_grid = default_fault_grid(grid)
    max_iter = max(int(k) for k in n_iters)
    out: dict[int, list[ErrorTable]] = {int(k): [] for k in n_iters}

    for seed in seeds:
        rng_f = np.random.default_rng([seed, 102])
        durations = rng_f.uniform(*fault_duration_range, n_test)
        truths = build_test_suite(
            "fault", n_test, test_partition, gp, grid, x_star, rng_f,
            t_fault=t_fault, fault_grid=fault_grid,
            fault_durations=durations,
        )
        faults = [(FaultEvent(t_fault, float(d), fault_grid),) for d in durations]
        samples = build_training_set(
            n_initial, procedure, mode, SensorSpec(template.n_sensors), ranges,
            label_gp, grid, np.random.default_rng([seed, 100]),
        )
        tmpl = clone(template)
        tmpl.set_params(random_state=seed)
        cfg_k = replace(dagger_cfg, n_iter=max_iter)
        result = run_dagger(samples, tmpl, cfg_k, label_gp, grid, x_star,
                            np.random.default_rng([seed, 103]))
        for k in n_iters:
            est_k = result.estimator_at(int(k))
            preds, kept, n_div = rollout_suite(est_k, truths, gp, grid, gp_approx,
                                               faults=faults)
            table = error_table(preds, kept)
            out[int(k)].append(table)
            if verbose:
                print(f"[sweep] seed={seed} iters={k}: delta mean "
                      f"{table.mean['delta']:.4f}% ({n_div} diverged)")
    return out


def sweep_to_csv(path: str | Path, results: dict[int, list[ErrorTable]],
                 axis_name: str) -> None:
    """Tidy CSV: one row per (axis value, seed index, quantity)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis_name, "seed_index", "quantity",
                    "mean_l2_percent", "std_l2_percent"])
        for value in sorted(results):
            for si, table in enumerate(results[value]):
                for q in QUANTITIES:
                    w.writerow([value, si, q, repr(table.mean[q]), repr(table.std[q])])
