"""Gaussian-process imputation model with squared-exponential covariance.

Each coordinate is modeled independently as a constant mean plus a
zero-mean GP with covariance amplitude * exp(-(t-t')^2 / (2 range^2)),
observed with N(0, tau_sq) noise. The data are centered per coordinate
before fitting and the mean is added back to draws, so the fitted mean is
the per-coordinate sample mean of the telemetry.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from ..core import LatentPath, Telemetry, TrajectoryGrid
from ..errors import NumericalError, ValidationError
from ..util import as_rng
from .imputation import ImputationSet

__all__ = [
    "GpAidParams",
    "gp_covariance",
    "cholesky_with_jitter",
    "fit_gp_aid",
    "draw_gp_paths",
]


@dataclass(frozen=True)
class GpAidParams:
    range: float
    amplitude: float
    obs_variance: float
    mean: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.range <= 0 or self.amplitude <= 0:
            raise ValidationError("range and amplitude must be positive")
        if self.obs_variance < 0:
            raise ValidationError("obs_variance must be nonnegative")


def gp_covariance(t1, t2, params: GpAidParams) -> np.ndarray:
    """amplitude * exp(-(t1-t2)^2 / (2 range^2)), evaluated pairwise."""
    d = np.subtract.outer(np.asarray(t1, float), np.asarray(t2, float))
    return params.amplitude * np.exp(-0.5 * (d / params.range) ** 2)


def cholesky_with_jitter(mat: np.ndarray, scale: float):
    """Cholesky factor of ``mat``, adding escalating diagonal jitter.

    Jitter starts at 1e-8*scale and grows tenfold up to 1e-4*scale; a
    warning records any jitter that was required. Raises NumericalError if
    the matrix still cannot be factorized.
    """
    try:
        return cho_factor(mat, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * scale
    while jitter <= 1e-4 * scale * (1 + 1e-9):
        try:
            fac = cho_factor(mat + jitter * np.eye(mat.shape[0]), lower=True)
            warnings.warn(f"covariance required jitter {jitter:.3e}", stacklevel=2)
            return fac, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance not positive definite even after jitter")


def _nll(x, tobs, yc, n):
    # x = (log range, log amplitude, log obs_variance)
    if np.any(np.abs(x) > 40.0):
        return 1e12
    p = GpAidParams(math.exp(x[0]), math.exp(x[1]), math.exp(x[2]))
    A = gp_covariance(tobs, tobs, p)
    A[np.diag_indices(n)] += p.obs_variance
    try:
        fac, _ = cholesky_with_jitter(A, p.amplitude)
    except NumericalError:
        return 1e12
    logdet = 2.0 * float(np.sum(np.log(np.diag(fac[0]))))
    quad = float(np.sum(yc * cho_solve(fac, yc)))
    ll = -0.5 * quad - logdet - n * math.log(2.0 * math.pi)
    return -ll if np.isfinite(ll) else 1e12


def fit_gp_aid(data: Telemetry, max_iter: int = 300) -> GpAidParams:
    """Fit (range, amplitude, obs_variance, mean) by marginal likelihood.

    A coarse log-parameter grid picks the best cell and Nelder-Mead refines
    from there.
    """
    if data.n < 4:
        raise ValidationError("need at least 4 observations to fit the GP model")
    tobs = data.obs_times
    mean = data.locations.mean(axis=0)
    yc = data.locations - mean
    n = data.n
    span = float(tobs[-1] - tobs[0])
    med_dt = float(np.median(np.diff(tobs)))
    pos_var = float(np.mean(np.var(yc, axis=0))) + 1e-12

    ranges = np.geomspace(max(2.0 * med_dt, 1e-6), max(span / 2.0, 4.0 * med_dt), 5)
    amps = np.geomspace(0.05 * pos_var, 5.0 * pos_var, 4)
    taus = np.geomspace(1e-5 * pos_var, 0.3 * pos_var, 4)
    best_x, best_val = None, np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in ranges:
            for a in amps:
                for t in taus:
                    x = np.log([r, a, t])
                    val = _nll(x, tobs, yc, n)
                    if val < best_val:
                        best_x, best_val = x, val
        res = minimize(
            _nll,
            best_x,
            args=(tobs, yc, n),
            method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-8},
        )
    x = res.x if res.fun <= best_val else best_x
    return GpAidParams(
        math.exp(x[0]), math.exp(x[1]), math.exp(x[2]), (float(mean[0]), float(mean[1]))
    )


def gp_conditional(params: GpAidParams, data: Telemetry, grid: TrajectoryGrid):
    """Conditional mean (m, 2) and covariance (m, m) of the path at grid
    times given the telemetry. The covariance is shared by the coordinates."""
    grid.locate(data.obs_times)  # validates containment
    tobs = data.obs_times
    tg = grid.times
    yc = data.locations - np.asarray(params.mean)
    A = gp_covariance(tobs, tobs, params)
    A[np.diag_indices(data.n)] += params.obs_variance
    fac, _ = cholesky_with_jitter(A, params.amplitude)
    Kgo = gp_covariance(tg, tobs, params)
    cond_mean = np.asarray(params.mean) + Kgo @ cho_solve(fac, yc)
    cond_cov = gp_covariance(tg, tg, params) - Kgo @ cho_solve(fac, Kgo.T)
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    return cond_mean, cond_cov


def draw_gp_paths(
    params: GpAidParams,
    data: Telemetry,
    grid: TrajectoryGrid,
    K: int,
    seed,
) -> ImputationSet:
    """K draws from the GP conditional distribution at the grid times.

    Sampling uses an eigendecomposition of the conditional covariance with
    negative eigenvalues clamped to zero, which avoids injecting jitter
    noise into otherwise smooth draws.
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    rng = as_rng(seed)
    cond_mean, cond_cov = gp_conditional(params, data, grid)
    evals, evecs = np.linalg.eigh(cond_cov)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    z = rng.standard_normal((K, grid.m, 2))
    paths = cond_mean[None, :, :] + np.einsum("ij,kjd->kid", root, z)
    draws = tuple(LatentPath(grid, paths[k]) for k in range(K))
    source = {
        "aid": "gp",
        "range": params.range,
        "amplitude": params.amplitude,
        "obs_variance": params.obs_variance,
        "mean": list(params.mean),
    }
    return ImputationSet(
        grid=grid,
        draws=draws,
        source=source,
        K=K,
        mean_path=LatentPath(grid, cond_mean),
        mean_pos_var=np.diag(cond_cov).copy(),
    )
