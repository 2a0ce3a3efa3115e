"""Forward simulation of the latent movement models and the observation
process.

Two latent models are supported: a second-order model in which a potential
force acts on the velocity of a Brownian particle, and a first-order model
in which a constant-strength force acts directly on the position process.
Both are simulated on an explicit time grid; the second-order model uses
the same Euler discretization that the complete-data likelihood inverts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import LatentPath, Telemetry, TrajectoryGrid
from .errors import ValidationError
from .potential import AttractorPotential
from .util import as_rng, write_csv_atomic, write_json_atomic

__all__ = [
    "Sde2Params",
    "Sde1Params",
    "ObsParams",
    "simulate_sde2",
    "simulate_sde1",
    "observe",
    "save_dataset",
    "load_truth_csv",
]


@dataclass(frozen=True)
class Sde2Params:
    """Second-order model: velocity feels the potential force, friction
    sigma_v, and diffusion sigma_v."""

    sigma_v: float
    potential: AttractorPotential
    init_position: tuple[float, float] = (0.0, 0.0)
    init_velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.sigma_v <= 0:
            raise ValidationError("sigma_v must be positive")


@dataclass(frozen=True)
class Sde1Params:
    """First-order model: constant pull of strength beta toward a center,
    unit diffusion, Gaussian initial position."""

    beta: float
    center: tuple[float, float] = (0.0, 0.0)
    sigma0_sq: float = 1e2

    def __post_init__(self):
        if self.sigma0_sq <= 0:
            raise ValidationError("sigma0_sq must be positive")


@dataclass(frozen=True)
class ObsParams:
    """Circular Gaussian measurement error with per-coordinate variance."""

    sigma_s_sq: float

    def __post_init__(self):
        if self.sigma_s_sq < 0:
            raise ValidationError("sigma_s_sq must be nonnegative")


def simulate_sde2(
    params: Sde2Params,
    grid: TrajectoryGrid,
    seed,
    noise: bool = True,
) -> LatentPath:
    """Euler scheme for the second-order model.

    mu(t_{j+1}) = mu(t_j) + v(t_j) dt
    v(t_{j+1})  = v(t_j) - gradH(mu(t_j), t_j) dt - sigma_v v(t_j) dt
                  + sigma_v N(0, dt I_2)

    ``noise=False`` drops the stochastic term (deterministic limit used in
    tests). Returns a path carrying its simulated velocities.
    """
    rng = as_rng(seed)
    m = grid.m
    dt = grid.increments
    mu = np.empty((m, 2))
    v = np.empty((m, 2))
    mu[0] = params.init_position
    v[0] = params.init_velocity
    pot = params.potential
    sv = params.sigma_v
    eps = rng.standard_normal((m - 1, 2)) if noise else np.zeros((m - 1, 2))
    c = pot.center
    for j in range(m - 1):
        d = mu[j] - c
        r = np.hypot(d[0], d[1])
        grad = (pot.beta_at(j) / r) * d if r > 0 else np.zeros(2)
        mu[j + 1] = mu[j] + v[j] * dt[j]
        v[j + 1] = v[j] - (grad + sv * v[j]) * dt[j] + sv * np.sqrt(dt[j]) * eps[j]
    return LatentPath(grid, mu, v)


def simulate_sde1(params: Sde1Params, grid: TrajectoryGrid, seed) -> LatentPath:
    """Exact transition sampling for the first-order model.

    mu(t_1) ~ N(0, sigma0_sq I_2), then
    mu(t_i) | mu(t_{i-1}) ~ N(mu(t_{i-1}) + beta (c-mu)/||c-mu|| dt_i, dt_i I_2).
    """
    rng = as_rng(seed)
    m = grid.m
    dt = grid.increments
    c = np.asarray(params.center, dtype=float)
    mu = np.empty((m, 2))
    mu[0] = rng.standard_normal(2) * np.sqrt(params.sigma0_sq)
    steps = rng.standard_normal((m - 1, 2))
    for i in range(1, m):
        d = c - mu[i - 1]
        r = np.hypot(d[0], d[1])
        drift = (params.beta / r) * d * dt[i - 1] if r > 0 else np.zeros(2)
        mu[i] = mu[i - 1] + drift + np.sqrt(dt[i - 1]) * steps[i - 1]
    return LatentPath(grid, mu)


def observe(path: LatentPath, obs_times, obs: ObsParams, seed) -> Telemetry:
    """Noisy observation of a path at a subset of its grid times.

    s(t_i) = mu(t_i) + N(0, sigma_s_sq I_2). The observation times must
    already lie on the path's grid (merge them in first).
    """
    rng = as_rng(seed)
    idx = path.grid.locate(obs_times)
    mu = path.positions[idx]
    if obs.sigma_s_sq > 0:
        mu = mu + np.sqrt(obs.sigma_s_sq) * rng.standard_normal(mu.shape)
    return Telemetry(path.grid.times[idx], mu)


def save_dataset(out_dir, truth: LatentPath, data: Telemetry, params: dict) -> None:
    """Write truth/telemetry CSVs plus a JSON sidecar of generating values.

    Truth columns are time,x,y plus vx,vy when the path carries velocities.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    if truth.velocities is not None:
        header = ["time", "x", "y", "vx", "vy"]
        rows = [
            (t, p[0], p[1], v[0], v[1])
            for t, p, v in zip(truth.grid.times, truth.positions, truth.velocities)
        ]
    else:
        header = ["time", "x", "y"]
        rows = [(t, p[0], p[1]) for t, p in zip(truth.grid.times, truth.positions)]
    write_csv_atomic(os.path.join(out_dir, "truth.csv"), header, rows)
    from .core import write_telemetry_csv

    write_telemetry_csv(os.path.join(out_dir, "telemetry.csv"), data)
    write_json_atomic(os.path.join(out_dir, "params.json"), params)


def load_truth_csv(path) -> LatentPath:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = TrajectoryGrid(data[:, 0])
    if data.shape[1] >= 5:
        return LatentPath(grid, data[:, 1:3], data[:, 3:5])
    return LatentPath(grid, data[:, 1:3])
