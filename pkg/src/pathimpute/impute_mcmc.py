"""Complete-data posterior updates for the potential-force movement model
and the process-imputation MCMC driver.

Conditioned on a latent path, the attraction coefficients are a conjugate
Gaussian linear model, the measurement-error variance is conjugate
inverse-gamma, and the velocity scale gets a Metropolis-Hastings step on
the log scale (it enters both the drift and the diffusion, so its full
conditional is not inverse-gamma despite the inverse-gamma prior). The
driver selects one of the K imputed paths uniformly at random each
iteration and updates the parameters given that path.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .aid.imputation import ImputationSet
from .core import (
    BasisSpec,
    LatentPath,
    PriorSpec,
    Telemetry,
    TrajectoryGrid,
    basis_matrix,
    velocities_from_path,
)
from .errors import ValidationError
from .potential import unit_from_center
from .util import as_rng, write_csv_atomic, write_json_atomic

__all__ = [
    "ProcessParams",
    "ProcessModelConfig",
    "ChainOutput",
    "PathStats",
    "complete_data_loglik",
    "update_alpha",
    "alpha_full_conditional",
    "update_sigma_v_sq",
    "update_sigma_s_sq",
    "sample_inverse_gamma",
    "run_process_imputation",
    "combine_moments",
    "save_chain",
    "load_chain",
]


@dataclass(frozen=True)
class ProcessParams:
    """Process parameters: basis coefficients and velocity variance.

    ``beta_grid`` is always recomputed as W @ alpha, never stored, so the
    two cannot drift apart.
    """

    alpha: np.ndarray
    sigma_v_sq: float

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", a)
        if self.sigma_v_sq <= 0:
            raise ValidationError("sigma_v_sq must be positive")

    def beta_grid(self, W: np.ndarray) -> np.ndarray:
        return W @ self.alpha


@dataclass(frozen=True)
class ProcessModelConfig:
    """Everything the complete-data sampler needs besides the paths."""

    center: tuple[float, float]
    basis: BasisSpec
    priors: PriorSpec = field(default_factory=PriorSpec)
    proposal_scale: float = 0.2
    init_sigma_v_sq: float = 1.0
    init_sigma_s_sq: float = 1e-2
    burn_in: int | None = None  # default: first half


class PathStats:
    """Sufficient statistics of one latent path for the complete-data model.

    Precomputing these makes every MCMC update O(p^2) instead of O(m p).
    Paths whose velocities were derived by finite differences contribute one
    fewer velocity transition: the replicated final velocity carries no
    information.
    """

    def __init__(self, path: LatentPath, W: np.ndarray, center, data: Telemetry | None = None):
        if path.velocities is None:
            path = velocities_from_path(path)
        m = path.m
        J = m - 2 if path.velocities_derived else m - 1
        if J < 1:
            raise ValidationError("path too short for any velocity transition")
        v = path.velocities[: J + 1]
        dv = np.diff(v, axis=0)
        dt = path.grid.increments[:J]
        u = unit_from_center(path.positions[:J], np.asarray(center, dtype=float))
        w = W[:J]
        self.J = J
        udv = np.einsum("jd,jd->j", u, dv)
        uv = np.einsum("jd,jd->j", u, v[:J])
        self.A = (w * dt[:, None]).T @ w
        self.h1 = w.T @ udv
        self.h2 = w.T @ (uv * dt)
        self.s1 = float(np.sum(np.einsum("jd,jd->j", dv, dv) / dt))
        self.s2 = float(np.sum(np.einsum("jd,jd->j", v[:J], v[:J]) * dt))
        self.s3 = float(np.sum(np.einsum("jd,jd->j", v[:J], dv)))
        self.s4 = float(np.sum(np.log(dt)))
        if data is not None:
            idx = path.grid.locate(data.obs_times)
            resid = data.locations - path.positions[idx]
            self.obs_n = data.n
            self.obs_ssr = float(np.sum(resid**2))
        else:
            self.obs_n = 0
            self.obs_ssr = 0.0

    def loglik(self, alpha: np.ndarray, sigma_v_sq: float) -> float:
        sv = math.sqrt(sigma_v_sq)
        q = (
            self.s1
            + float(alpha @ self.A @ alpha)
            + sigma_v_sq * self.s2
            + 2.0 * float(alpha @ self.h1)
            + 2.0 * sv * self.s3
            + 2.0 * sv * float(alpha @ self.h2)
        )
        return -0.5 * q / sigma_v_sq - self.J * math.log(2.0 * math.pi * sigma_v_sq) - self.s4


def complete_data_loglik(
    path: LatentPath,
    params: ProcessParams,
    center,
    W: np.ndarray,
    data: Telemetry | None = None,
) -> float:
    """Log-density of the velocity transitions of ``path`` under the model.

    Each transition is bivariate normal:
    v(t_{j+1}) ~ N(v(t_j) - (beta_j u_j + sigma_v v(t_j)) dt_{j+1},
                   sigma_v_sq dt_{j+1} I_2)
    with u_j the unit vector from the center to mu(t_j). Velocities are
    reconstructed by finite differences when the path does not carry them.
    """
    stats = PathStats(path, W, center, data)
    return stats.loglik(params.alpha, params.sigma_v_sq)


def alpha_full_conditional(stats: PathStats, sigma_v_sq: float, prior_variance: float):
    """Gaussian full conditional of the basis coefficients.

    Stacked per-coordinate velocity increments regress on
    -(u_j dt_{j+1}) x (basis row j) with noise variance sigma_v_sq dt_{j+1}
    and prior alpha ~ N(0, prior_variance I). Returns (mean, precision_chol).
    """
    p = stats.A.shape[0]
    sv = math.sqrt(sigma_v_sq)
    prec = stats.A / sigma_v_sq + np.eye(p) / prior_variance
    b = -(stats.h1 + sv * stats.h2) / sigma_v_sq
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, b)
    return mean, L


def update_alpha(
    path_or_stats,
    sigma_v_sq: float,
    basis: BasisSpec,
    seed,
    center=None,
    W: np.ndarray | None = None,
) -> np.ndarray:
    """Exact Gibbs draw of the basis coefficients given a path.

    Accepts either a precomputed PathStats or a LatentPath (in which case
    ``center`` is required and W is built from the basis spec).
    """
    rng = as_rng(seed)
    stats = _as_stats(path_or_stats, basis, center, W)
    mean, L = alpha_full_conditional(stats, sigma_v_sq, basis.prior_variance)
    z = rng.standard_normal(mean.size)
    # solve L' x = z gives covariance prec^{-1}
    return mean + np.linalg.solve(L.T, z)


def _as_stats(path_or_stats, basis, center, W) -> PathStats:
    if isinstance(path_or_stats, PathStats):
        return path_or_stats
    if center is None:
        raise ValidationError("center is required when passing a raw path")
    if W is None:
        W = basis_matrix(basis, path_or_stats.grid)
    return PathStats(path_or_stats, W, center)


def _log_ig_kernel(x: float, a: float, b: float) -> float:
    return -(a + 1.0) * math.log(x) - b / x


def update_sigma_v_sq(
    path_or_stats,
    alpha: np.ndarray,
    current: float,
    proposal_scale: float,
    seed,
    priors: PriorSpec = PriorSpec(),
    basis: BasisSpec | None = None,
    center=None,
    W: np.ndarray | None = None,
) -> tuple[float, bool]:
    """Random-walk Metropolis-Hastings step for sigma_v_sq on the log scale.

    Target: complete-data likelihood times the IG(a_v, b_v) prior. The
    log-scale proposal contributes a +log(x) Jacobian to the log target.
    Returns (new value, accepted flag).
    """
    if current <= 0:
        raise ValidationError("current sigma_v_sq must be positive")
    rng = as_rng(seed)
    stats = _as_stats(path_or_stats, basis, center, W)
    if proposal_scale == 0.0:
        return current, True
    prop = current * math.exp(proposal_scale * rng.standard_normal())

    def logtarget(x):
        return stats.loglik(alpha, x) + _log_ig_kernel(x, priors.a_v, priors.b_v) + math.log(x)

    log_ratio = logtarget(prop) - logtarget(current)
    if math.log(rng.uniform()) < log_ratio:
        return prop, True
    return current, False


def sample_inverse_gamma(rng, shape: float, rate: float) -> float:
    """IG(shape, rate) draw with density proportional to
    x^-(shape+1) exp(-rate/x)."""
    return rate / rng.gamma(shape, 1.0)


def update_sigma_s_sq(
    path: LatentPath | None,
    data: Telemetry | None,
    prior: PriorSpec,
    seed,
    ssr: float | None = None,
    n: int | None = None,
) -> float:
    """Conjugate draw of the measurement-error variance.

    Posterior: IG(a_s + n, b_s + 0.5 sum_i ||s(t_i) - mu(t_i)||^2); each of
    the n two-dimensional residuals contributes 2/2 = 1 to the shape. With
    no data the prior is sampled unchanged.
    """
    rng = as_rng(seed)
    if ssr is None:
        if data is None or path is None:
            ssr, n = 0.0, 0
        else:
            idx = path.grid.locate(data.obs_times)
            resid = data.locations - path.positions[idx]
            ssr = float(np.sum(resid**2))
            n = data.n
    return sample_inverse_gamma(rng, prior.a_s + n, prior.b_s + 0.5 * ssr)


@dataclass(frozen=True)
class ChainOutput:
    """Retained MCMC samples plus bookkeeping.

    Which sample arrays are present depends on the sampler that produced the
    chain; absent quantities are None. ``selected_k`` is the imputed-path
    index chosen at each retained iteration (imputation chains only).
    """

    iterations: int
    burn_in: int
    alpha: np.ndarray | None = None
    sigma_v_sq: np.ndarray | None = None
    sigma_s_sq: np.ndarray | None = None
    beta: np.ndarray | None = None
    selected_k: np.ndarray | None = None
    deviance: np.ndarray | None = None
    acceptance_rates: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lens = {
            arr.shape[0]
            for arr in (self.alpha, self.sigma_v_sq, self.sigma_s_sq, self.beta, self.selected_k, self.deviance)
            if arr is not None
        }
        if len(lens) > 1:
            raise ValidationError("inconsistent sample lengths")
        for v in self.acceptance_rates.values():
            if not 0.0 <= v <= 1.0:
                raise ValidationError("acceptance rates must be in [0, 1]")

    @property
    def n_retained(self) -> int:
        for arr in (self.sigma_s_sq, self.beta, self.sigma_v_sq, self.alpha):
            if arr is not None:
                return arr.shape[0]
        return 0

    def parameter(self, name: str) -> np.ndarray:
        """Samples of a named scalar parameter; 'alpha:i' indexes a basis
        coefficient."""
        if name.startswith("alpha:"):
            if self.alpha is None:
                raise ValidationError("chain has no alpha samples")
            return self.alpha[:, int(name.split(":", 1)[1])]
        arr = getattr(self, name, None)
        if arr is None:
            raise ValidationError(f"chain has no samples for {name!r}")
        return arr


def run_process_imputation(
    imputations: ImputationSet,
    data: Telemetry,
    config: ProcessModelConfig,
    iterations: int,
    seed,
) -> ChainOutput:
    """Process-imputation sampler for the potential-force model.

    Each iteration selects one of the K imputed paths uniformly at random,
    then updates (alpha, sigma_v_sq, sigma_s_sq) given that path: exact
    Gibbs for alpha and sigma_s_sq, log-scale MH for sigma_v_sq. Pooled
    post-burn-in samples approximate the imputation-averaged posterior.
    """
    if iterations < 2:
        raise ValidationError("iterations must be >= 2")
    if config.proposal_scale < 0:
        raise ValidationError("proposal_scale must be >= 0")
    burn = iterations // 2 if config.burn_in is None else config.burn_in
    if not 0 <= burn < iterations:
        raise ValidationError("burn_in must lie in [0, iterations)")
    rng = as_rng(seed)
    K = imputations.K
    W = basis_matrix(config.basis, imputations.grid)
    stats = [PathStats(d, W, config.center, data) for d in imputations.draws]
    p = config.basis.p

    n_keep = iterations - burn
    out_alpha = np.empty((n_keep, p))
    out_sv = np.empty(n_keep)
    out_ss = np.empty(n_keep)
    out_k = np.empty(n_keep, dtype=np.int64)
    out_dev = np.empty(n_keep)

    sigma_v_sq = config.init_sigma_v_sq
    alpha = np.zeros(p)
    accepted = 0
    for it in range(iterations):
        k = int(rng.integers(K))
        st = stats[k]
        alpha = update_alpha(st, sigma_v_sq, config.basis, rng)
        sigma_v_sq, acc = update_sigma_v_sq(
            st, alpha, sigma_v_sq, config.proposal_scale, rng, config.priors
        )
        sigma_s_sq = update_sigma_s_sq(
            None, None, config.priors, rng, ssr=st.obs_ssr, n=st.obs_n
        )
        if it >= burn:
            j = it - burn
            accepted += acc
            out_alpha[j] = alpha
            out_sv[j] = sigma_v_sq
            out_ss[j] = sigma_s_sq
            out_k[j] = k
            out_dev[j] = -2.0 * st.loglik(alpha, sigma_v_sq)
    return ChainOutput(
        iterations=iterations,
        burn_in=burn,
        alpha=out_alpha,
        sigma_v_sq=out_sv,
        sigma_s_sq=out_ss,
        selected_k=out_k,
        deviance=out_dev,
        acceptance_rates={"sigma_v_sq": accepted / n_keep},
        metadata={
            "method": "process-imputation",
            "K": K,
            "aid": imputations.source.get("aid"),
            "priors": vars(config.priors),
            "proposal_scale": config.proposal_scale,
            "sigma_alpha_sq": config.basis.prior_variance,
        },
    )


def combine_moments(per_draw_means, per_draw_variances) -> tuple[np.ndarray, np.ndarray]:
    """Pool complete-data posterior moments across K imputations.

    Mean: average of the per-imputation posterior means. Variance: average
    of the per-imputation posterior variances plus the sample variance
    (K-1 divisor) of the means; no additional finite-K inflation term is
    applied because inference pools a single mixed chain.
    """
    means = np.asarray(per_draw_means, dtype=float)
    variances = np.asarray(per_draw_variances, dtype=float)
    if means.shape != variances.shape or means.shape[0] < 1:
        raise ValidationError("means and variances must share shape, K >= 1")
    K = means.shape[0]
    mean = means.mean(axis=0)
    between = means.var(axis=0, ddof=1) if K > 1 else np.zeros_like(mean)
    return mean, variances.mean(axis=0) + between


def save_chain(prefix, chain: ChainOutput) -> None:
    """ChainOutput -> <prefix>.csv (one row per retained iteration) and
    <prefix>.json manifest."""
    os.makedirs(os.path.dirname(os.path.abspath(os.fspath(prefix))), exist_ok=True)
    header, cols = ["iter"], []
    n = chain.n_retained
    cols.append(np.arange(chain.burn_in, chain.iterations))
    if chain.selected_k is not None:
        header.append("k")
        cols.append(chain.selected_k)
    if chain.alpha is not None:
        for i in range(chain.alpha.shape[1]):
            header.append(f"alpha_{i}")
            cols.append(chain.alpha[:, i])
    for name in ("sigma_v_sq", "sigma_s_sq", "beta", "deviance"):
        arr = getattr(chain, name)
        if arr is not None:
            header.append(name)
            cols.append(arr)
    rows = list(zip(*cols))
    write_csv_atomic(str(prefix) + ".csv", header, rows)
    write_json_atomic(
        str(prefix) + ".json",
        {
            "iterations": chain.iterations,
            "burn_in": chain.burn_in,
            "acceptance_rates": chain.acceptance_rates,
            "metadata": chain.metadata,
            "columns": header,
        },
    )


def load_chain(prefix) -> ChainOutput:
    with open(str(prefix) + ".json") as fh:
        manifest = json.load(fh)
    data = np.loadtxt(str(prefix) + ".csv", delimiter=",", skiprows=1, ndmin=2)
    cols = manifest["columns"]
    by_name = {c: data[:, i] for i, c in enumerate(cols)}
    alpha_cols = [c for c in cols if c.startswith("alpha_")]
    alpha = (
        np.column_stack([by_name[c] for c in alpha_cols]) if alpha_cols else None
    )
    return ChainOutput(
        iterations=int(manifest["iterations"]),
        burn_in=int(manifest["burn_in"]),
        alpha=alpha,
        sigma_v_sq=by_name.get("sigma_v_sq"),
        sigma_s_sq=by_name.get("sigma_s_sq"),
        beta=by_name.get("beta"),
        selected_k=by_name["k"].astype(np.int64) if "k" in by_name else None,
        deviance=by_name.get("deviance"),
        acceptance_rates=manifest["acceptance_rates"],
        metadata=manifest["metadata"],
    )
