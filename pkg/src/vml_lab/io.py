"""Trajectory and summary serialization.

CSV floats use ``%.17g``; JSON floats use Python's shortest round-trip repr,
which is exact.  NaN and infinities become ``null`` in JSON.

Trajectory CSV columns: ``step, sigma, <loss fields>, loss_start, grad_norm,
x_0..x_{n-1}, d_0..d_{n-1}`` where ``x`` is the iterate after the inner
optimization and ``d`` its denoised estimate.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .loss import FIELDS
from .solver import Trajectory


def fmt(v) -> str:
    return "%.17g" % float(v)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(jsonable(data), indent=2, allow_nan=False) + "\n")


def trajectory_columns(dim: int) -> list[str]:
    return (
        ["step", "sigma", *FIELDS, "loss_start", "grad_norm"]
        + [f"x_{i}" for i in range(dim)]
        + [f"d_{i}" for i in range(dim)]
    )


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    dim = traj.final_x.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_columns(dim))
        for r in traj.steps:
            losses = [getattr(r.loss, f) for f in FIELDS]
            w.writerow(
                [r.step, fmt(r.sigma), *map(fmt, losses), fmt(r.loss_start), fmt(r.grad_norm)]
                + [fmt(v) for v in r.x_after_opt]
                + [fmt(v) for v in r.denoised]
            )


def trajectory_dict(traj: Trajectory, run_id: str) -> dict:
    return {
        "run_id": run_id,
        "seed": traj.seed,
        "sigma_y": traj.sigma_y,
        "final_x": traj.final_x,
        "steps": [
            {
                "step": r.step,
                "sigma": r.sigma,
                "loss": r.loss.as_dict(),
                "loss_start": r.loss_start,
                "grad_norm": r.grad_norm,
                "x_after_opt": r.x_after_opt,
                "denoised": r.denoised,
            }
            for r in traj.steps
        ],
    }


def write_density_csv(path: Path, x: np.ndarray, density: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "density"])
        for a, b in zip(x, density):
            w.writerow([fmt(a), fmt(b)])


def read_density_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]
