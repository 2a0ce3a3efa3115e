"""Time grids, latent paths, telemetry, and basis matrices.

Times are in hours and positions in km throughout the package. All types
here are immutable after construction (arrays are stored with the writeable
flag cleared) and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import ValidationError

__all__ = [
    "TrajectoryGrid",
    "LatentPath",
    "Telemetry",
    "BasisSpec",
    "PriorSpec",
    "build_grid",
    "merge_grid",
    "velocities_from_path",
    "basis_matrix",
    "uniform_bspline_spec",
    "read_telemetry_csv",
    "write_telemetry_csv",
]

#: absolute tolerance (hours) below which two time stamps count as equal
TIME_TOL = 1e-12


def _freeze(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TrajectoryGrid:
    """Dense, strictly increasing time grid t_1..t_m with per-step increments.

    ``increments[j]`` is ``times[j+1] - times[j]`` (length m-1); all latent
    processes in the package live on one of these grids.
    """

    times: np.ndarray

    def __post_init__(self):
        times = _freeze(self.times)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ValidationError("grid needs at least two time points")
        if not np.all(np.isfinite(times)):
            raise ValidationError("grid times must be finite")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("grid times must be strictly increasing")

    @property
    def m(self) -> int:
        return self.times.size

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def locate(self, query_times) -> np.ndarray:
        """Indices of ``query_times`` in this grid (within TIME_TOL each).

        Raises ValidationError if any query time is absent.
        """
        q = np.asarray(query_times, dtype=float)
        idx = np.searchsorted(self.times, q)
        idx = np.clip(idx, 0, self.m - 1)
        left = np.clip(idx - 1, 0, self.m - 1)
        use_left = np.abs(self.times[left] - q) < np.abs(self.times[idx] - q)
        idx = np.where(use_left, left, idx)
        if np.any(np.abs(self.times[idx] - q) > TIME_TOL):
            bad = q[np.abs(self.times[idx] - q) > TIME_TOL]
            raise ValidationError(f"times not on grid: {bad[:5]}")
        return idx


@dataclass(frozen=True)
class LatentPath:
    """Positions (and optionally velocities) of a latent process on a grid."""

    grid: TrajectoryGrid
    positions: np.ndarray
    velocities: np.ndarray | None = None
    # True when velocities were reconstructed by finite differences, in which
    # case the final velocity is a replicated copy carrying no information.
    velocities_derived: bool = False

    def __post_init__(self):
        pos = _freeze(self.positions)
        object.__setattr__(self, "positions", pos)
        if pos.shape != (self.grid.m, 2):
            raise ValidationError(f"positions must have shape ({self.grid.m}, 2)")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions must be finite")
        if self.velocities is not None:
            vel = _freeze(self.velocities)
            object.__setattr__(self, "velocities", vel)
            if vel.shape != (self.grid.m, 2):
                raise ValidationError(f"velocities must have shape ({self.grid.m}, 2)")
            if not np.all(np.isfinite(vel)):
                raise ValidationError("velocities must be finite")

    @property
    def m(self) -> int:
        return self.grid.m


@dataclass(frozen=True)
class Telemetry:
    """Observed locations at strictly increasing observation times."""

    obs_times: np.ndarray
    locations: np.ndarray

    def __post_init__(self):
        t = _freeze(self.obs_times)
        x = _freeze(self.locations)
        object.__setattr__(self, "obs_times", t)
        object.__setattr__(self, "locations", x)
        if t.ndim != 1 or t.size < 2:
            raise ValidationError("telemetry needs at least two observations")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("observation times must be strictly increasing")
        if x.shape != (t.size, 2) or not np.all(np.isfinite(x)):
            raise ValidationError("locations must be finite with shape (n, 2)")
        if not np.all(np.isfinite(t)):
            raise ValidationError("observation times must be finite")

    @property
    def n(self) -> int:
        return self.obs_times.size


@dataclass(frozen=True)
class BasisSpec:
    """B-spline basis for the time-varying attraction strength.

    ``knot_times`` are the breakpoints, including both span endpoints;
    interior breakpoints are free knots. With p basis functions,
    p = len(knot_times) - 2 + degree + 1.
    """

    knot_times: np.ndarray
    degree: int = 3
    prior_variance: float = 1.0

    def __post_init__(self):
        kt = _freeze(self.knot_times)
        object.__setattr__(self, "knot_times", kt)
        if kt.size < 2 or np.any(np.diff(kt) <= 0):
            raise ValidationError("knot_times must be >= 2 strictly increasing values")
        if self.degree < 0:
            raise ValidationError("degree must be nonnegative")
        if self.prior_variance <= 0:
            raise ValidationError("prior_variance must be positive")

    @property
    def p(self) -> int:
        return self.knot_times.size - 2 + self.degree + 1


@dataclass(frozen=True)
class PriorSpec:
    """Inverse-gamma shape/rate hyperparameters for the two error variances."""

    a_s: float = 1e-3
    b_s: float = 1e-4
    a_v: float = 1e-3
    b_v: float = 1e-4

    def __post_init__(self):
        if min(self.a_s, self.b_s, self.a_v, self.b_v) <= 0:
            raise ValidationError("prior hyperparameters must be strictly positive")


def build_grid(start: float, end: float, m: int) -> TrajectoryGrid:
    """Equally spaced grid of ``m`` points on [start, end]."""
    if not (np.isfinite(start) and np.isfinite(end)) or end <= start:
        raise ValidationError("need end > start")
    if m < 2:
        raise ValidationError("need m >= 2")
    return TrajectoryGrid(np.linspace(float(start), float(end), int(m)))


def merge_grid(grid: TrajectoryGrid, obs_times) -> tuple[TrajectoryGrid, np.ndarray]:
    """Union of a grid with observation times.

    Returns the merged grid and the index of each observation time in it.
    Duplicate times (within TIME_TOL) are collapsed. Observation times must
    lie inside the grid span.
    """
    obs = np.asarray(obs_times, dtype=float)
    lo, hi = grid.span
    if obs.size and (obs.min() < lo - TIME_TOL or obs.max() > hi + TIME_TOL):
        raise ValidationError("observation times outside grid span")
    merged = np.sort(np.concatenate([grid.times, obs]))
    keep = np.empty(merged.size, dtype=bool)
    keep[0] = True
    np.greater(np.diff(merged), TIME_TOL, out=keep[1:])
    merged = merged[keep]
    out = TrajectoryGrid(merged)
    return out, out.locate(obs)


def velocities_from_path(path: LatentPath) -> LatentPath:
    """Attach forward-difference velocities to a position path.

    v(t_j) = (mu(t_{j+1}) - mu(t_j)) / dt_{j+1} for j < m; the final velocity
    replicates the (m-1)-th so the arrays stay aligned with the grid. This is
    the exact inverse of the Euler position update used by the simulators.
    """
    dt = path.grid.increments[:, None]
    v = np.empty_like(path.positions)
    v[:-1] = np.diff(path.positions, axis=0) / dt
    v[-1] = v[-2]
    return LatentPath(path.grid, path.positions, v, velocities_derived=True)


def basis_matrix(spec: BasisSpec, grid: TrajectoryGrid) -> np.ndarray:
    """Evaluate the B-spline basis at every grid time; returns W (m x p).

    The basis is clamped (endpoint knots repeated degree+1 times), so rows
    sum to one everywhere inside the knot span.
    """
    lo, hi = grid.span
    k0, k1 = float(spec.knot_times[0]), float(spec.knot_times[-1])
    if k0 > lo + TIME_TOL or k1 < hi - TIME_TOL:
        raise ValidationError("knot span does not cover the grid")
    if spec.p < 1:
        raise ValidationError("basis has no functions")
    knots = np.concatenate(
        [
            np.repeat(spec.knot_times[0], spec.degree + 1),
            spec.knot_times[1:-1],
            np.repeat(spec.knot_times[-1], spec.degree + 1),
        ]
    )
    # clip guards times that equal a knot endpoint up to TIME_TOL rounding
    x = np.clip(grid.times, k0, k1)
    W = BSpline.design_matrix(x, knots, spec.degree).toarray()
    return W


def uniform_bspline_spec(
    start: float,
    end: float,
    n_interior: int = 10,
    degree: int = 3,
    prior_variance: float = 1.0,
) -> BasisSpec:
    """Cubic-by-default B-spline spec with equally spaced interior knots."""
    if n_interior < 0:
        raise ValidationError("n_interior must be >= 0")
    knots = np.linspace(float(start), float(end), int(n_interior) + 2)
    return BasisSpec(knots, degree=degree, prior_variance=prior_variance)


def read_telemetry_csv(path) -> Telemetry:
    """Read telemetry from a ``time,x,y`` CSV (header required, '.' decimals)."""
    with open(path) as fh:
        header = fh.readline().strip()
        cols = [c.strip() for c in header.split(",")]
        if cols[:3] != ["time", "x", "y"]:
            raise ValidationError(f"expected header 'time,x,y', got {header!r}")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValidationError(f"malformed telemetry CSV: {exc}") from exc
    if data.shape[0] < 2 or data.shape[1] < 3:
        raise ValidationError("telemetry CSV needs >= 2 rows of time,x,y")
    return Telemetry(data[:, 0], data[:, 1:3])


def write_telemetry_csv(path, data: Telemetry) -> None:
    from .util import write_csv_atomic

    rows = [(t, x, y) for t, (x, y) in zip(data.obs_times, data.locations)]
    write_csv_atomic(path, ["time", "x", "y"], rows)
