"""Approximate imputation distributions: fit a tractable path model to
telemetry, then draw conditional latent-path realizations on a target grid."""

from .gp import GpAidParams, draw_gp_paths, fit_gp_aid, gp_covariance
from .imputation import ImputationSet, load_imputation_set, save_imputation_set
from .ou import OuAidParams, draw_ou_paths, fit_ou_aid, ou_loglik, ou_transition

__all__ = [
    "GpAidParams",
    "OuAidParams",
    "ImputationSet",
    "fit_ou_aid",
    "draw_ou_paths",
    "fit_gp_aid",
    "draw_gp_paths",
    "ou_loglik",
    "ou_transition",
    "gp_covariance",
    "save_imputation_set",
    "load_imputation_set",
]
