"""Coverage/detection regions, scalar interval coverage, the Gelman-Rubin
diagnostic, and DIC."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .impute_mcmc import ChainOutput

__all__ = [
    "IntervalBand",
    "EvalReport",
    "DicResult",
    "band_from_chain",
    "coverage_detection",
    "scalar_interval",
    "scalar_coverage",
    "gelman_rubin",
    "dic",
]


@dataclass(frozen=True)
class IntervalBand:
    """Pointwise equal-tailed credible band for a function of time."""

    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not (t.shape == lo.shape == hi.shape):
            raise ValidationError("band arrays must share shape")
        if np.any(lo > hi + 1e-15):
            raise ValidationError("band lower bound exceeds upper bound")
        if not 0.0 < self.level < 1.0:
            raise ValidationError("level must lie in (0, 1)")


@dataclass(frozen=True)
class EvalReport:
    """Per-replicate evaluation summary.

    The detection region is by definition a subset of the coverage region,
    which is asserted on construction.
    """

    coverage: float | None = None
    detection: float | None = None
    covered: dict = field(default_factory=dict)
    psrf: dict = field(default_factory=dict)
    dic: float | None = None

    def __post_init__(self):
        if self.coverage is not None and self.detection is not None:
            if self.detection > self.coverage + 1e-12:
                raise ValidationError("detection must not exceed coverage")

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "detection": self.detection,
            "covered": dict(self.covered),
            "psrf": dict(self.psrf),
            "dic": self.dic,
        }


def band_from_chain(
    chain: ChainOutput, W: np.ndarray, level: float = 0.95, times=None
) -> IntervalBand:
    """Empirical pointwise equal-tailed band for beta(t) = W alpha.

    Quantiles use linear interpolation of order statistics (numpy default,
    the type-7 convention).
    """
    if chain.alpha is None:
        raise ValidationError("chain has no basis-coefficient samples")
    if chain.n_retained < 100:
        raise ValidationError("need at least 100 retained samples")
    beta = chain.alpha @ W.T
    q = (1.0 - level) / 2.0
    lower = np.quantile(beta, q, axis=0)
    upper = np.quantile(beta, 1.0 - q, axis=0)
    if times is None:
        times = np.arange(W.shape[0], dtype=float)
    return IntervalBand(times, lower, upper, level)


def coverage_detection(band: IntervalBand, truth) -> tuple[float, float]:
    """Fractions of grid times where the band covers the truth, and where it
    covers the truth while excluding zero.

    "Contains zero" means lower <= 0 <= upper, so detection requires strict
    exclusion of zero.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != band.lower.shape:
        raise ValidationError("truth and band grids do not match")
    inside = (band.lower <= truth) & (truth <= band.upper)
    excludes_zero = (band.lower > 0.0) | (band.upper < 0.0)
    coverage = float(np.mean(inside))
    detection = float(np.mean(inside & excludes_zero))
    return coverage, detection


def scalar_interval(chain: ChainOutput, parameter: str, level: float = 0.95):
    samples = chain.parameter(parameter)
    q = (1.0 - level) / 2.0
    return float(np.quantile(samples, q)), float(np.quantile(samples, 1.0 - q))


def scalar_coverage(chain: ChainOutput, parameter: str, truth: float, level: float = 0.95) -> bool:
    """Whether the equal-tailed credible interval contains the truth."""
    lo, hi = scalar_interval(chain, parameter, level)
    return bool(lo <= truth <= hi)


def gelman_rubin(chains, parameter: str) -> float:
    """Potential scale reduction factor across >= 2 chains of equal length.

    R_hat = sqrt(((n-1)/n W + B/n) / W) with W the mean within-chain
    variance and B = n times the variance of the chain means. Identical
    chains give sqrt((n-1)/n); zero within-chain variance with distinct
    means gives +inf with a warning.
    """
    series = [np.asarray(c.parameter(parameter), dtype=float) for c in chains]
    if len(series) < 2:
        raise ValidationError("need at least 2 chains")
    n = series[0].size
    if n < 2 or any(s.size != n for s in series):
        raise ValidationError("chains must have equal retained length >= 2")
    means = np.array([s.mean() for s in series])
    within = float(np.mean([s.var(ddof=1) for s in series]))
    between = n * float(means.var(ddof=1))
    if within == 0.0:
        if between == 0.0:
            return math.sqrt((n - 1.0) / n)
        warnings.warn("zero within-chain variance; PSRF undefined", stacklevel=2)
        return math.inf
    return math.sqrt(((n - 1.0) / n * within + between / n) / within)


@dataclass(frozen=True)
class DicResult:
    dic: float
    dbar: float
    d_at_mean: float
    p_d: float


def dic(chain: ChainOutput, loglik_at_mean) -> DicResult:
    """Deviance information criterion from stored per-iteration deviances.

    ``loglik_at_mean`` maps the posterior-mean parameters (alpha,
    sigma_v_sq) to a log-likelihood; under process imputation it should
    average the complete-data log-likelihood over the K imputed paths.
    """
    if chain.deviance is None:
        raise ValidationError("chain has no stored deviance")
    dbar = float(np.mean(chain.deviance))
    alpha_bar = chain.alpha.mean(axis=0) if chain.alpha is not None else None
    sv_bar = float(np.mean(chain.sigma_v_sq)) if chain.sigma_v_sq is not None else None
    d_at_mean = -2.0 * float(loglik_at_mean(alpha_bar, sv_bar))
    p_d = dbar - d_at_mean
    return DicResult(dic=dbar + p_d, dbar=dbar, d_at_mean=d_at_mean, p_d=p_d)
