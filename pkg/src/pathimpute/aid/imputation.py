"""Container for a set of imputed latent paths, with CSV/JSON persistence."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..core import LatentPath, TrajectoryGrid
from ..errors import ValidationError
from ..util import write_csv_atomic, write_json_atomic

__all__ = ["ImputationSet", "save_imputation_set", "load_imputation_set"]


@dataclass(frozen=True)
class ImputationSet:
    """K latent-path draws from one imputation model on a shared grid.

    ``source`` records which model produced the draws and with which fitted
    parameters; ``mean_path`` is the model's conditional-mean path and
    ``mean_pos_var`` the pointwise conditional position variance, when the
    model provides them.
    """

    grid: TrajectoryGrid
    draws: tuple
    source: dict
    K: int
    mean_path: LatentPath | None = None
    mean_pos_var: np.ndarray | None = None

    def __post_init__(self):
        if self.K < 1 or len(self.draws) != self.K:
            raise ValidationError("K must be >= 1 and match the number of draws")
        for d in self.draws:
            if d.grid.m != self.grid.m or np.any(d.grid.times != self.grid.times):
                raise ValidationError("all draws must share the imputation grid")
        object.__setattr__(self, "draws", tuple(self.draws))


def save_imputation_set(out_dir, s: ImputationSet) -> None:
    """One CSV per draw plus a JSON manifest; mean path saved alongside."""
    os.makedirs(out_dir, exist_ok=True)
    width = max(3, len(str(s.K - 1)))
    for k, d in enumerate(s.draws):
        rows = [(t, p[0], p[1]) for t, p in zip(s.grid.times, d.positions)]
        write_csv_atomic(os.path.join(out_dir, f"draw_{k:0{width}d}.csv"), ["time", "x", "y"], rows)
    if s.mean_path is not None:
        rows = [(t, p[0], p[1]) for t, p in zip(s.grid.times, s.mean_path.positions)]
        write_csv_atomic(os.path.join(out_dir, "mean_path.csv"), ["time", "x", "y"], rows)
    write_json_atomic(
        os.path.join(out_dir, "manifest.json"),
        {"K": s.K, "source": s.source, "draw_width": width},
    )


def load_imputation_set(out_dir) -> ImputationSet:
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    K = int(manifest["K"])
    width = int(manifest.get("draw_width", 3))
    draws = []
    grid = None
    for k in range(K):
        data = np.loadtxt(
            os.path.join(out_dir, f"draw_{k:0{width}d}.csv"),
            delimiter=",",
            skiprows=1,
            ndmin=2,
        )
        if grid is None:
            grid = TrajectoryGrid(data[:, 0])
        draws.append(LatentPath(grid, data[:, 1:3]))
    mean_path = None
    mp = os.path.join(out_dir, "mean_path.csv")
    if os.path.exists(mp):
        data = np.loadtxt(mp, delimiter=",", skiprows=1, ndmin=2)
        mean_path = LatentPath(grid, data[:, 1:3])
    return ImputationSet(
        grid=grid, draws=tuple(draws), source=manifest["source"], K=K, mean_path=mean_path
    )
