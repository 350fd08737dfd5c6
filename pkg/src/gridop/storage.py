"""File formats: JSON-lines datasets and trajectories, CSV exports, manifests.

All numeric payloads are written as JSON floats (CPython emits shortest
round-trip representations, so reading back is bitwise exact). Every
command-level output directory carries a manifest with the exact config,
seed, and SHA-256 checksums of the artifacts; timestamps live only in the
manifest so artifact bytes are reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gridop.metrics import QUANTITIES, ErrorTable
from gridop.physics import TimePartition, Trajectory
from gridop.sampling import DatasetSample

__all__ = [
    "save_trajectory",
    "load_trajectory",
    "save_trajectories",
    "load_trajectories",
    "trajectory_to_csv",
    "save_dataset",
    "load_dataset",
    "error_table_to_csv",
    "save_loss_history",
    "write_manifest",
    "sha256_file",
]


# -- trajectories -------------------------------------------------------------

def save_trajectory(path: str | Path, traj: Trajectory) -> None:
    """One JSONL file: a header record, then one record per time point."""
    path = Path(path)
    with path.open("w") as fh:
        header = {
            "kind": "trajectory",
            "provenance": traj.provenance,
            "max_step": traj.partition.max_step,
            "n_points": int(traj.times.size),
        }
        fh.write(json.dumps(header) + "\n")
        for t, s, u in zip(traj.times, traj.states, traj.inputs):
            fh.write(json.dumps({"t": float(t), "state": s.tolist(),
                                 "input": u.tolist()}) + "\n")


def load_trajectory(path: str | Path) -> Trajectory:
    with Path(path).open() as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "trajectory":
            raise ValueError(f"{path}: not a trajectory file")
        times, states, inputs = [], [], []
        for line in fh:
            rec = json.loads(line)
            times.append(rec["t"])
            states.append(rec["state"])
            inputs.append(rec["input"])
    part = TimePartition(np.asarray(times), max_step=header["max_step"])
    return Trajectory(part, np.asarray(states), np.asarray(inputs),
                      header["provenance"])


def save_trajectories(directory: str | Path, trajs: Sequence[Trajectory],
                      prefix: str = "traj") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    width = max(4, len(str(len(trajs) - 1)))
    for i, traj in enumerate(trajs):
        p = directory / f"{prefix}_{i:0{width}d}.jsonl"
        save_trajectory(p, traj)
        paths.append(p)
    return paths


def load_trajectories(directory: str | Path, prefix: str = "traj") -> list[Trajectory]:
    directory = Path(directory)
    paths = sorted(directory.glob(f"{prefix}_*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no {prefix}_*.jsonl files in {directory}")
    return [load_trajectory(p) for p in paths]


def trajectory_to_csv(path: str | Path, traj: Trajectory) -> None:
    """Plot-ready CSV: time, the four states, and the two interface inputs."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "delta", "omega", "e_d_prime", "e_q_prime", "i_d", "i_q"])
        for t, s, u in zip(traj.times, traj.states, traj.inputs):
            w.writerow([repr(float(v)) for v in (t, *s, *u)])


# -- datasets -----------------------------------------------------------------

def save_dataset(path: str | Path, samples: Sequence[DatasetSample],
                 meta: dict | None = None) -> None:
    """JSONL dataset: header record with provenance metadata, then samples."""
    path = Path(path)
    with path.open("w") as fh:
        header = {"kind": "dataset", "n_samples": len(samples)}
        header.update(meta or {})
        fh.write(json.dumps(header) + "\n")
        for s in samples:
            fh.write(json.dumps({
                "state": s.state.tolist(),
                "sensors": s.sensors.tolist(),
                "sensor_locs": s.sensor_locs.tolist(),
                "h": s.h,
                "label": s.label.tolist(),
            }) + "\n")


def load_dataset(path: str | Path) -> tuple[list[DatasetSample], dict]:
    with Path(path).open() as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "dataset":
            raise ValueError(f"{path}: not a dataset file")
        samples = []
        for line in fh:
            rec = json.loads(line)
            samples.append(DatasetSample(
                np.asarray(rec["state"]),
                np.asarray(rec["sensors"]),
                np.asarray(rec["sensor_locs"]),
                float(rec["h"]),
                np.asarray(rec["label"]),
            ))
    return samples, header


# -- tables and histories -----------------------------------------------------

def error_table_to_csv(path: str | Path, table: ErrorTable) -> None:
    """Table layout: one column per quantity, rows for mean and std (percent).

    The standard deviation uses the population convention (divide by N).
    """
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", *QUANTITIES])
        w.writerow(["mean_l2_percent", *[repr(v) for v in table.row("mean")]])
        w.writerow(["stdev_l2_percent(population)", *[repr(v) for v in table.row("std")]])


def save_loss_history(path: str | Path, history: dict) -> None:
    """Per-epoch CSV of training/validation losses and the learning rate."""
    train = history["train"]
    val = history["val"]
    lr = history["lr"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for i, (t, v, l) in enumerate(zip(train, val, lr)):
            w.writerow([i, repr(float(t)), repr(float(v)), repr(float(l))])


# -- manifests ------------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: str | Path,
    command: str,
    config: dict,
    seed: int,
    artifacts: Iterable[str | Path],
) -> Path:
    """Record the exact config, seed, and artifact checksums of one command run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_blob = json.dumps(config, sort_keys=True)
    doc = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_sha256": hashlib.sha256(config_blob.encode()).hexdigest(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": {
            str(Path(p).relative_to(out_dir)): sha256_file(p) for p in artifacts
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=1))
    return path
