"""Attraction potential surfaces and their spatial gradients.

The potential value at a location is the attraction strength times the
Euclidean distance to a fixed center; its negative spatial gradient is the
force pulling the animal toward (strength > 0) or away from (strength < 0)
the center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ["AttractorPotential", "potential_value", "potential_gradient"]


@dataclass(frozen=True)
class AttractorPotential:
    """Distance-to-center potential with scalar or per-grid-time strength.

    ``beta`` may be a scalar (constant strength) or an array of strengths
    aligned with a grid, indexed by the ``j`` argument of the evaluation
    functions.
    """

    center: np.ndarray
    beta: float | np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (2,) or not np.all(np.isfinite(c)):
            raise ValidationError("center must be a finite 2-vector")
        b = np.asarray(self.beta, dtype=float)
        if not np.all(np.isfinite(b)):
            raise ValidationError("beta must be finite")
        object.__setattr__(self, "center", c)

    def beta_at(self, j: int) -> float:
        b = np.asarray(self.beta, dtype=float)
        return float(b) if b.ndim == 0 else float(b[j])


def potential_value(p: AttractorPotential, mu, j: int = 0) -> float:
    """beta(t_j) times the distance from ``mu`` to the center."""
    mu = np.asarray(mu, dtype=float)
    return p.beta_at(j) * float(np.hypot(*(mu - p.center)))


def potential_gradient(p: AttractorPotential, mu, j: int = 0) -> np.ndarray:
    """Spatial gradient of the potential at ``mu``.

    Equals beta(t_j) times the unit vector from the center to ``mu``. The
    norm is not differentiable at the center itself; the zero vector (a
    subgradient) is returned there to keep simulated paths finite.
    """
    mu = np.asarray(mu, dtype=float)
    d = mu - p.center
    r = float(np.hypot(d[0], d[1]))
    if r == 0.0:
        return np.zeros(2)
    return (p.beta_at(j) / r) * d


def unit_from_center(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Row-wise unit vectors from ``center`` to ``points`` (zero rows at the
    center). Shared by the simulators and the complete-data likelihood."""
    d = points - center
    r = np.hypot(d[:, 0], d[:, 1])
    out = np.zeros_like(d)
    nz = r > 0
    out[nz] = d[nz] / r[nz, None]
    return out
