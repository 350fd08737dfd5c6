"""Command-line experiment pipeline.

Subcommands cover the full workflow: ``generate`` (datasets and test
suites), ``train`` (operator or baseline models), ``rollout`` (recursive
prediction against stored truth suites), ``evaluate`` (error tables),
``dagger`` (iterative aggregation), ``bound`` (cumulative error-bound
verification), and ``export-plots`` (per-quantity CSV time series).

Every command reads one YAML config (``--config``, ``$GRIDOP_CONFIG``, or
the packaged defaults), honors ``--seed`` / ``--out`` overrides, and writes
a manifest with config hash and artifact checksums into its output
directory. Identical config and seed reproduce identical artifact bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from gridop.config import ConfigError, ExperimentConfig, load_config
from gridop.dagger import DaggerConfig, run_dagger
from gridop.metrics import error_table, verify_bound
from gridop.operator import (
    DeepONetOperator,
    NextStateRegressor,
    load_model,
    save_model,
)
from gridop.physics import State, Trajectory, uniform_partition
from gridop.rollout import (
    ClosedLoopProvider,
    RecordedProvider,
    RolloutDivergedError,
    irregular_partition,
    rollout_data_driven,
    rollout_residual,
)
from gridop.sampling import (
    build_test_suite,
    build_training_set,
    default_fault_grid,
    samples_to_arrays,
)
from gridop import storage

# stable per-purpose RNG stream indices (seeded as default_rng([seed, purpose]))
RNG_TRAIN_DATA = 0
RNG_GAMMA_SUITE = 1
RNG_FAULT_SUITE = 2
RNG_DAGGER = 3
RNG_BOUND = 4
RNG_PARTITION = 5


def _rng(cfg: ExperimentConfig, purpose: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, purpose])


def _load_cfg(args) -> ExperimentConfig:
    return load_config(args.config, seed=args.seed, out_dir=args.out)


def _rollout_partition(cfg: ExperimentConfig):
    if cfg.rollout.partition == "irregular":
        return irregular_partition(
            cfg.rollout.t_end, cfg.rollout.irregular_points,
            _rng(cfg, RNG_PARTITION), max_step=cfg.ranges.h[1],
        )
    return uniform_partition(cfg.rollout.t_end, cfg.rollout.h)


# -- generate -----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    x_star, gp, gp_approx, grid = cfg.physics()
    ranges = cfg.sampling_ranges()
    label_gp = gp_approx if args.mode == "residual" else gp

    samples = build_training_set(
        cfg.data.n_train, cfg.data.procedure, args.mode, cfg.sensor_spec(),
        ranges, label_gp, grid, _rng(cfg, RNG_TRAIN_DATA),
        label_substeps=cfg.data.label_substeps,
    )
    train_path = out / "train.jsonl"
    storage.save_dataset(train_path, samples, meta={
        "mode": args.mode, "procedure": cfg.data.procedure,
        "m": cfg.sensors.m, "seed": cfg.seed,
        "ranges": {k: list(v) for k, v in vars(cfg.ranges).items()},
    })

    artifacts = [train_path]
    part = _rollout_partition(cfg)

    gamma_trajs = build_test_suite(
        "gamma_perturbed", cfg.data.n_test, part, gp, grid, x_star,
        _rng(cfg, RNG_GAMMA_SUITE), gamma_range=cfg.test.gamma_range,
        substeps=cfg.data.truth_substeps,
    )
    artifacts.extend(storage.save_trajectories(out / "gamma", gamma_trajs))

    rng_f = _rng(cfg, RNG_FAULT_SUITE)
    durations = rng_f.uniform(*cfg.test.fault_duration, cfg.data.n_test)
    fault_trajs = build_test_suite(
        "fault", cfg.data.n_test, part, gp, grid, x_star, rng_f,
        t_fault=cfg.test.t_fault,
        fault_grid=default_fault_grid(grid, cfg.test.fault_impedance_factor),
        substeps=cfg.data.truth_substeps,
        fault_durations=durations,
    )
    artifacts.extend(storage.save_trajectories(out / "fault", fault_trajs))
    sidecar = out / "fault" / "faults.json"
    sidecar.write_text(json.dumps({
        "t_fault": cfg.test.t_fault,
        "impedance_factor": cfg.test.fault_impedance_factor,
        "durations": durations.tolist(),
    }, indent=1))
    artifacts.append(sidecar)
    storage.write_manifest(out, "generate", cfg.to_dict(), cfg.seed, artifacts)
    print(f"wrote {cfg.data.n_train} training samples and "
          f"2 x {cfg.data.n_test} test trajectories under {out}")
    return 0


# -- train ----------------------------------------------------------------------

def _labels_as_full(samples, mode: str) -> np.ndarray:
    if mode == "full":
        return np.vstack([s.label for s in samples])
    if mode == "incremental":
        return np.vstack([s.state + s.label for s in samples])
    raise ConfigError("the FNN baseline needs a full or incremental dataset")


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir) / "models"
    out.mkdir(parents=True, exist_ok=True)
    samples, meta = storage.load_dataset(args.dataset)
    data_mode = meta.get("mode", "incremental")

    if args.mode == "fnn":
        if cfg.sensors.m != 1:
            raise ConfigError("the FNN baseline is single-sensor only")
        est = cfg.fnn_baseline()
        X, _ = samples_to_arrays(samples, 1)
        y = _labels_as_full(samples, data_mode)
        name = "fnn"
    else:
        if data_mode != args.mode:
            raise ConfigError(
                f"dataset labels are {data_mode!r} but --mode is {args.mode!r}"
            )
        est = cfg.estimator(args.mode)
        X, y = samples_to_arrays(samples, cfg.sensors.m)
        name = f"deeponet_{args.mode}"

    est.fit(X, y)
    model_path = out / f"{name}.json"
    hist_path = out / f"loss_history_{name}.csv"
    save_model(model_path, est)
    storage.save_loss_history(hist_path, est.history_)
    storage.write_manifest(out, "train", cfg.to_dict(), cfg.seed,
                           [model_path, hist_path])
    best = float(np.min(est.history_["val"]))
    print(f"trained {name}: best validation loss {best:.3e} -> {model_path}")
    return 0


# -- rollout ------------------------------------------------------------------

class _FnnRolloutAdapter:
    """Present the next-state baseline through the rollout model protocol."""

    output_mode = "full"

    def __init__(self, est: NextStateRegressor):
        self._est = est

    def predict_step(self, x, sensors, locs, h):
        return self._est.predict_step(x, sensors[0], h)


def cmd_rollout(args) -> int:
    cfg = _load_cfg(args)
    est = load_model(args.model)
    truths = storage.load_trajectories(args.truth)
    out = Path(cfg.out_dir) / "rollouts" / args.name
    out.mkdir(parents=True, exist_ok=True)
    x_star, gp, gp_approx, grid = cfg.physics()

    if isinstance(est, NextStateRegressor):
        model = _FnnRolloutAdapter(est)
    else:
        model = est

    faults = ()
    if args.suite_kind == "fault":
        faults = _fault_events_from(Path(args.truth), truths, cfg, grid)

    artifacts = []
    n_diverged = 0
    for i, truth in enumerate(truths):
        x0 = State(*truth.states[0])
        if args.provider == "recorded":
            provider = RecordedProvider(truth, m=cfg.sensors.m,
                                        loc_fraction=cfg.sensors.loc_fraction)
        else:
            provider = ClosedLoopProvider(gp, grid, faults[i] if faults else ())
        try:
            if model.output_mode == "residual":
                traj = rollout_residual(model, x0, truth.partition, provider,
                                        gp_approx, substeps=cfg.data.label_substeps)
            else:
                traj = rollout_data_driven(model, x0, truth.partition, provider)
            if args.provider == "recorded":
                traj = Trajectory(traj.partition, traj.states, traj.inputs, "shadow")
        except RolloutDivergedError as err:
            n_diverged += 1
            print(f"warning: rollout {i} diverged at step {err.step}; skipped",
                  file=sys.stderr)
            continue
        p = out / f"traj_{i:04d}.jsonl"
        storage.save_trajectory(p, traj)
        artifacts.append(p)
    storage.write_manifest(out, "rollout", cfg.to_dict(), cfg.seed, artifacts)
    print(f"rolled out {len(artifacts)} trajectories"
          + (f" ({n_diverged} diverged)" if n_diverged else "")
          + f" -> {out}")
    return 0 if artifacts else 1


def _fault_events_from(truth_dir: Path, truths, cfg: ExperimentConfig, grid):
    """Per-trajectory fault schedule recorded alongside the fault test suite."""
    from gridop.physics import FaultEvent

    sidecar = truth_dir / "faults.json"
    if not sidecar.exists():
        raise ConfigError(f"fault suite sidecar not found: {sidecar}")
    doc = json.loads(sidecar.read_text())
    durations = doc["durations"]
    if len(durations) < len(truths):
        raise ConfigError("faults.json lists fewer durations than trajectories")
    fault_grid = default_fault_grid(grid, doc["impedance_factor"])
    return [
        (FaultEvent(doc["t_fault"], float(d), fault_grid),)
        for d in durations[: len(truths)]
    ]


# -- evaluate --------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    preds = storage.load_trajectories(args.pred)
    truths = storage.load_trajectories(args.truth)
    if len(preds) != len(truths):
        print(f"error: {len(preds)} predictions vs {len(truths)} truths",
              file=sys.stderr)
        return 1
    table = error_table(preds, truths)
    out = Path(cfg.out_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"errors_{args.name}.csv"
    json_path = out / f"errors_{args.name}.json"
    storage.error_table_to_csv(csv_path, table)
    json_path.write_text(json.dumps(table.to_dict(), indent=1))
    storage.write_manifest(out, "evaluate", cfg.to_dict(), cfg.seed,
                           [csv_path, json_path])
    print(f"mean L2 % per quantity: "
          + ", ".join(f"{q}={table.mean[q]:.3f}" for q in table.mean))
    return 0


# -- dagger ----------------------------------------------------------------------

def cmd_dagger(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir) / "dagger"
    out.mkdir(parents=True, exist_ok=True)
    x_star, gp, gp_approx, grid = cfg.physics()
    ranges = cfg.sampling_ranges()
    rng = _rng(cfg, RNG_DAGGER)

    label_gp = gp_approx if args.mode == "residual" else gp
    initial = build_training_set(
        cfg.dagger.n_initial, cfg.data.procedure, args.mode, cfg.sensor_spec(),
        ranges, label_gp, grid, _rng(cfg, RNG_TRAIN_DATA),
        label_substeps=cfg.data.label_substeps,
    )
    template = cfg.estimator(args.mode)
    dcfg = DaggerConfig(
        n_iter=cfg.dagger.n_iter, n_rollout=cfg.dagger.n_rollout,
        partition=uniform_partition(cfg.dagger.t_end, cfg.dagger.h),
        gamma_range=cfg.test.gamma_range, warm_start=cfg.dagger.warm_start,
        label_substeps=cfg.data.label_substeps,
    )
    result = run_dagger(initial, template, dcfg, label_gp, grid, x_star, rng,
                        verbose=True)

    artifacts = []
    final_path = out / "deeponet_final.json"
    save_model(final_path, result.estimator)
    artifacts.append(final_path)
    agg_path = out / "aggregate.jsonl"
    storage.save_dataset(agg_path, result.aggregate, meta={
        "mode": args.mode, "m": cfg.sensors.m, "seed": cfg.seed,
        "procedure": cfg.data.procedure,
    })
    artifacts.append(agg_path)
    iters = []
    for it in result.iterations:
        snap_est = result.estimator_at(it.index)
        p = out / f"deeponet_iter_{it.index}.json"
        save_model(p, snap_est)
        artifacts.append(p)
        iters.append({
            "iteration": it.index, "n_aggregate": it.n_aggregate,
            "n_collected": it.n_collected, "n_diverged": it.n_diverged,
            "best_val_loss": it.best_val_loss,
        })
    summary = out / "iterations.json"
    summary.write_text(json.dumps(iters, indent=1))
    artifacts.append(summary)
    storage.write_manifest(out, "dagger", cfg.to_dict(), cfg.seed, artifacts)
    print(f"aggregation finished: |D| = {len(result.aggregate)} -> {final_path}")
    return 0


# -- bound -----------------------------------------------------------------------

def cmd_bound(args) -> int:
    cfg = _load_cfg(args)
    est = load_model(args.model)
    if not isinstance(est, DeepONetOperator) or est.output_mode != "residual":
        print("error: bound verification needs a residual-mode operator model",
              file=sys.stderr)
        return 1
    samples, meta = storage.load_dataset(args.dataset)
    X, y = samples_to_arrays(samples, cfg.sensors.m)
    x_star, gp, gp_approx, grid = cfg.physics()
    part = uniform_partition(cfg.rollout.t_end, cfg.rollout.h)
    report = verify_bound(
        est, X, y, gp_approx, grid, cfg.sampling_ranges(), x_star, part,
        cfg.bound.n_rollouts, _rng(cfg, RNG_BOUND),
        gamma_range=cfg.test.gamma_range, n_probe=cfg.bound.n_probe,
    )
    out = Path(cfg.out_dir) / "bound"
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=1))
    curve_path = out / "bound_curve.csv"
    with curve_path.open("w") as fh:
        fh.write("step,bound,max_empirical_error\n")
        worst = np.nanmax(report.errors, axis=0)
        for n, (b, e) in enumerate(zip(report.bound, worst)):
            fh.write(f"{n},{b!r},{e!r}\n")
    storage.write_manifest(out, "bound", cfg.to_dict(), cfg.seed,
                           [report_path, curve_path])
    print(f"bound satisfied on {report.n_satisfied}/{report.errors.shape[0]} rollouts"
          f" (eps={report.eps:.3e}, L={report.L:.2f}, L_phi={report.L_phi:.2f},"
          f" kappa={report.kappa:.3e})")
    return 0


# -- export-plots ------------------------------------------------------------------

def cmd_export_plots(args) -> int:
    cfg = _load_cfg(args)
    preds = storage.load_trajectories(args.pred)
    truths = storage.load_trajectories(args.truth)
    if args.index >= min(len(preds), len(truths)):
        print(f"error: trajectory index {args.index} out of range", file=sys.stderr)
        return 1
    pred, truth = preds[args.index], truths[args.index]
    out = Path(cfg.out_dir) / "plots"
    out.mkdir(parents=True, exist_ok=True)
    from gridop.metrics import QUANTITIES, quantity_series

    artifacts = []
    for q in QUANTITIES:
        p = out / f"{q}_{args.index:04d}.csv"
        with p.open("w") as fh:
            fh.write("t,truth,prediction\n")
            for t, tv, pv in zip(truth.times, quantity_series(truth, q),
                                 quantity_series(pred, q)):
                fh.write(f"{t!r},{tv!r},{pv!r}\n")
        artifacts.append(p)
    storage.write_manifest(out, "export-plots", cfg.to_dict(), cfg.seed, artifacts)
    print(f"wrote {len(artifacts)} plot series -> {out}")
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridop",
        description="Operator-learning surrogate pipeline for generator dynamics",
    )
    parser.add_argument("--config", default=None,
                        help="YAML config path (default: $GRIDOP_CONFIG or packaged defaults)")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override config out_dir")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write training dataset and test suites")
    p.add_argument("--mode", default="incremental",
                   choices=["full", "incremental", "residual"],
                   help="label mode of the training dataset")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train an operator model or the FNN baseline")
    p.add_argument("--dataset", required=True, help="training dataset (JSONL)")
    p.add_argument("--mode", default="incremental",
                   choices=["full", "incremental", "residual", "fnn"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rollout", help="roll a trained model out over stored truths")
    p.add_argument("--model", required=True, help="model file from `train`")
    p.add_argument("--truth", required=True, help="directory of truth trajectories")
    p.add_argument("--name", required=True, help="output subdirectory name")
    p.add_argument("--provider", default="closed_loop",
                   choices=["closed_loop", "recorded"],
                   help="closed loop re-solves the network on predictions; "
                        "recorded shadows the stored inputs")
    p.add_argument("--suite-kind", default="gamma", choices=["gamma", "fault"],
                   help="fault re-applies the suite's fault schedule in closed loop")
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("evaluate", help="L2-relative error table for matched sets")
    p.add_argument("--pred", required=True, help="directory of predicted trajectories")
    p.add_argument("--truth", required=True, help="directory of truth trajectories")
    p.add_argument("--name", required=True, help="output table name")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("dagger", help="iterative data aggregation training")
    p.add_argument("--mode", default="residual",
                   choices=["full", "incremental", "residual"])
    p.set_defaults(fn=cmd_dagger)

    p = sub.add_parser("bound", help="verify the cumulative error bound empirically")
    p.add_argument("--model", required=True, help="residual model file")
    p.add_argument("--dataset", required=True,
                   help="residual dataset for the eps estimate")
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("export-plots", help="per-quantity (t, truth, prediction) CSVs")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--index", type=int, default=0, help="trajectory index")
    p.set_defaults(fn=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
