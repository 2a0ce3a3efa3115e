"""Integrated Ornstein-Uhlenbeck imputation model.

Per coordinate the latent state is (position, velocity): the velocity is an
OU process with reversion rate ``theta`` and diffusion ``sigma``, and the
position integrates the velocity. Observations are the position plus
N(0, tau_sq) noise. Exact discrete transition moments over each time step
give a linear-Gaussian state-space model, so the marginal likelihood comes
from a Kalman filter and conditional path draws from a forward-filter
backward-sampler. Both coordinates share one covariance recursion because
the system matrices and observation pattern are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ..core import Telemetry, TrajectoryGrid
from ..errors import FitError, ValidationError
from ..util import as_rng
from .imputation import ImputationSet

__all__ = ["OuAidParams", "ou_transition", "ou_loglik", "fit_ou_aid", "draw_ou_paths"]

#: diffuse prior variance (km^2) for the initial position
DIFFUSE_POSITION_VAR = 1e6


@dataclass(frozen=True)
class OuAidParams:
    """Fitted parameters of the integrated-OU imputation model.

    The initial state at the first filtered time is position ~
    N(init_pos_mean, init_pos_var) per coordinate (diffuse by default) and
    velocity ~ N(0, sigma^2 / (2 theta)), the stationary law.
    """

    theta: float
    sigma: float
    tau_sq: float
    init_pos_mean: tuple[float, float] = (0.0, 0.0)
    init_pos_var: float = DIFFUSE_POSITION_VAR

    def __post_init__(self):
        if self.theta <= 0 or self.sigma <= 0:
            raise ValidationError("theta and sigma must be positive")
        if self.tau_sq < 0:
            raise ValidationError("tau_sq must be nonnegative")
        if self.init_pos_var <= 0:
            raise ValidationError("init_pos_var must be positive")

    @property
    def vel_var(self) -> float:
        return self.sigma**2 / (2.0 * self.theta)


def ou_transition(theta: float, sigma: float, dt: float):
    """Exact (position, velocity) transition moments over one step.

    Returns ``(f01, a, qpp, qpv, qvv)`` where the transition matrix is
    [[1, f01], [0, a]] and Q is the process-noise covariance. A series
    expansion is used when theta*dt is tiny, where the closed forms lose
    all precision to cancellation.
    """
    x = theta * dt
    s2 = sigma * sigma
    if x < 1e-4:
        f01 = dt * (1.0 - 0.5 * x + x * x / 6.0)
        a = math.exp(-x)
        qvv = s2 * dt * (1.0 - x + (2.0 / 3.0) * x * x)
        qpv = s2 * dt * dt * (0.5 - 0.5 * x + (7.0 / 24.0) * x * x)
        qpp = s2 * dt * dt * dt * (1.0 / 3.0 - 0.25 * x + (7.0 / 60.0) * x * x)
    else:
        a = math.exp(-x)
        e1 = -math.expm1(-x)
        e2 = -math.expm1(-2.0 * x)
        f01 = e1 / theta
        qvv = s2 * e2 / (2.0 * theta)
        qpv = s2 / (theta * theta) * (e1 - 0.5 * e2)
        qpp = s2 / (theta * theta) * (dt - 2.0 * e1 / theta + e2 / (2.0 * theta))
    return f01, a, qpp, qpv, qvv


def _filter(times, obs_mask, y, params: OuAidParams, store: bool):
    """Kalman filter over ``times`` with observations where obs_mask is set.

    Means are per coordinate; the covariance recursion is shared. When
    ``store`` is true, returns the per-step quantities needed for smoothing
    and backward sampling.
    """
    m = len(times)
    tau = params.tau_sq
    # state means: [px, vx], [py, vy]
    mx = [params.init_pos_mean[0], 0.0]
    my = [params.init_pos_mean[1], 0.0]
    p11, p12, p22 = params.init_pos_var, 0.0, params.vel_var
    ll = 0.0
    if store:
        mf = np.empty((m, 2, 2))
        pf = np.empty((m, 3))
        mpred = np.empty((m, 2, 2))
        ppred = np.empty((m, 3))
        fmat = np.empty((m, 2))
    log2pi = math.log(2.0 * math.pi)
    for j in range(m):
        if j > 0:
            dt = times[j] - times[j - 1]
            f01, a, qpp, qpv, qvv = ou_transition(params.theta, params.sigma, dt)
            mx = [mx[0] + f01 * mx[1], a * mx[1]]
            my = [my[0] + f01 * my[1], a * my[1]]
            t12 = p12 + f01 * p22
            n11 = p11 + 2.0 * f01 * p12 + f01 * f01 * p22 + qpp
            n12 = a * t12 + qpv
            n22 = a * a * p22 + qvv
            p11, p12, p22 = n11, n12, n22
        else:
            f01, a = 0.0, 1.0
        if store:
            mpred[j, 0], mpred[j, 1] = mx, my
            ppred[j] = (p11, p12, p22)
            fmat[j] = (f01, a)
        if obs_mask[j]:
            s = p11 + tau
            nx = y[j, 0] - mx[0]
            ny = y[j, 1] - my[0]
            ll -= 0.5 * (2.0 * (log2pi + math.log(s)) + (nx * nx + ny * ny) / s)
            k1 = p11 / s
            k2 = p12 / s
            mx = [mx[0] + k1 * nx, mx[1] + k2 * nx]
            my = [my[0] + k1 * ny, my[1] + k2 * ny]
            p11, p12, p22 = p11 - k1 * p11, p12 - k1 * p12, p22 - k2 * p12
        if store:
            mf[j, 0], mf[j, 1] = mx, my
            pf[j] = (p11, p12, p22)
    if store:
        return ll, mf, pf, mpred, ppred, fmat
    return ll


def ou_loglik(params: OuAidParams, data: Telemetry) -> float:
    """Marginal log-likelihood of the telemetry under the model."""
    n = data.n
    return _filter(data.obs_times, np.ones(n, dtype=bool), data.locations, params, False)


def fit_ou_aid(
    data: Telemetry,
    restarts: int = 5,
    seed: int = 0,
    max_iter: int = 500,
) -> OuAidParams:
    """Maximum-likelihood fit by Nelder-Mead on log-parameters.

    Runs ``restarts`` searches from perturbed heuristic starting points and
    keeps the best. Raises FitError (carrying the best parameters found) if
    no search converges.
    """
    if data.n < 4:
        raise ValidationError("need at least 4 observations to fit the OU model")
    rng = as_rng(seed)
    dts = np.diff(data.obs_times)
    speeds = np.diff(data.locations, axis=0) / dts[:, None]
    v2 = float(np.mean(speeds**2))
    pos_var = float(np.mean(np.var(data.locations, axis=0))) + 1e-12
    theta0 = 1.0 / float(np.mean(dts))
    sigma0 = math.sqrt(max(2.0 * theta0 * v2, 1e-12))
    tau0 = max(1e-8, 1e-2 * pos_var)
    x0 = np.log([theta0, sigma0, tau0])
    init_mean = (float(data.locations[0, 0]), float(data.locations[0, 1]))

    def nll(x):
        if np.any(x > 40.0) or np.any(x < -40.0):
            return 1e12
        p = OuAidParams(math.exp(x[0]), math.exp(x[1]), math.exp(x[2]), init_mean)
        val = ou_loglik(p, data)
        return -val if np.isfinite(val) else 1e12

    best, best_val, converged = None, np.inf, False
    for r in range(restarts):
        start = x0 if r == 0 else x0 + rng.normal(scale=1.0, size=3)
        res = minimize(nll, start, method="Nelder-Mead", options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-8})
        if res.fun < best_val:
            best, best_val = res.x, res.fun
        converged = converged or bool(res.success)
    # polish from the incumbent; on flat likelihood ridges the restarts can
    # all hit maxiter even though the incumbent is already at the optimum
    res = minimize(nll, best, method="Nelder-Mead", options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-8})
    if res.fun < best_val:
        best, best_val = res.x, res.fun
    converged = converged or bool(res.success)
    params = OuAidParams(
        math.exp(best[0]), math.exp(best[1]), math.exp(best[2]), init_mean
    )
    if not converged:
        raise FitError("OU fit did not converge", best_params=params)
    return params


def _chol2(p11, p12, p22):
    l11 = math.sqrt(max(p11, 0.0))
    l21 = p12 / l11 if l11 > 0 else 0.0
    l22 = math.sqrt(max(p22 - l21 * l21, 0.0))
    return l11, l21, l22


def draw_ou_paths(
    params: OuAidParams,
    data: Telemetry,
    grid: TrajectoryGrid,
    K: int,
    seed,
) -> ImputationSet:
    """K conditional path draws on a grid containing the observation times.

    Forward-filter backward-sampler for the position process given the
    telemetry, plus the smoothing-mean path (used for the "posterior mean of
    the AID" regime). Draw k uses the k-th block of the seed stream, so
    draws are independent given (params, data).
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    rng = as_rng(seed)
    times = grid.times
    m = grid.m
    obs_idx = grid.locate(data.obs_times)
    mask = np.zeros(m, dtype=bool)
    mask[obs_idx] = True
    y = np.zeros((m, 2))
    y[obs_idx] = data.locations

    _, mf, pf, mpred, ppred, fmat = _filter(times, mask, y, params, True)

    # states per draw: (K, coord, [pos, vel]); backward pass shares gain/cov
    X = np.empty((m, K, 2, 2))
    l11, l21, l22 = _chol2(*pf[-1])
    L = np.array([[l11, 0.0], [l21, l22]])
    z = rng.standard_normal((K, 2, 2))
    X[-1] = mf[-1][None, :, :] + z @ L.T
    smean = np.empty((m, 2, 2))
    svar = np.empty((m, 3))
    smean[-1] = mf[-1]
    svar[-1] = pf[-1]
    for j in range(m - 2, -1, -1):
        f01, a = fmat[j + 1]
        F = np.array([[1.0, f01], [0.0, a]])
        Pf = np.array([[pf[j, 0], pf[j, 1]], [pf[j, 1], pf[j, 2]]])
        Pp = np.array([[ppred[j + 1, 0], ppred[j + 1, 1]], [ppred[j + 1, 1], ppred[j + 1, 2]]])
        G = np.linalg.solve(Pp.T, (Pf @ F.T).T).T
        C = Pf - G @ Pp @ G.T
        C = 0.5 * (C + C.T)
        l11, l21, l22 = _chol2(C[0, 0], C[0, 1], C[1, 1])
        Lc = np.array([[l11, 0.0], [l21, l22]])
        dev = X[j + 1] - mpred[j + 1][None, :, :]
        z = rng.standard_normal((K, 2, 2))
        X[j] = mf[j][None, :, :] + dev @ G.T + z @ Lc.T
        smean[j] = mf[j] + (smean[j + 1] - mpred[j + 1]) @ G.T
        Ps = np.array([[svar[j + 1, 0], svar[j + 1, 1]], [svar[j + 1, 1], svar[j + 1, 2]]])
        Pn = Pf + G @ (Ps - Pp) @ G.T
        svar[j] = (Pn[0, 0], Pn[0, 1], Pn[1, 1])

    from ..core import LatentPath

    draws = tuple(LatentPath(grid, X[:, k, :, 0]) for k in range(K))
    mean_path = LatentPath(grid, smean[:, :, 0])
    source = {
        "aid": "ou",
        "theta": params.theta,
        "sigma": params.sigma,
        "tau_sq": params.tau_sq,
        "init_pos_mean": list(params.init_pos_mean),
        "init_pos_var": params.init_pos_var,
    }
    return ImputationSet(
        grid=grid,
        draws=draws,
        source=source,
        K=K,
        mean_path=mean_path,
        mean_pos_var=svar[:, 0].copy(),
    )
