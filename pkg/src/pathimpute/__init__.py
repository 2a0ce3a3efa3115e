"""Process imputation for continuous-time animal movement models.

Simulate potential-force movement models, fit approximate imputation
distributions (integrated Ornstein-Uhlenbeck or Gaussian process) to
telemetry, draw latent-path imputations, and run two-stage or exact MCMC
inference, with the coverage/detection evaluation machinery used by the
replicated simulation studies.
"""

from .aid import (
    GpAidParams,
    ImputationSet,
    OuAidParams,
    draw_gp_paths,
    draw_ou_paths,
    fit_gp_aid,
    fit_ou_aid,
)
from .core import (
    BasisSpec,
    LatentPath,
    PriorSpec,
    Telemetry,
    TrajectoryGrid,
    basis_matrix,
    build_grid,
    merge_grid,
    read_telemetry_csv,
    uniform_bspline_spec,
    velocities_from_path,
)
from .errors import FitError, NumericalError, ValidationError
from .evaluate import (
    EvalReport,
    IntervalBand,
    band_from_chain,
    coverage_detection,
    dic,
    gelman_rubin,
    scalar_coverage,
)
from .exact_mcmc import ExactModelConfig, run_exact, run_imputation_sde1
from .experiments import StudyConfig, resume_study, run_study, study1_config, study2_config
from .impute_mcmc import (
    ChainOutput,
    ProcessModelConfig,
    ProcessParams,
    combine_moments,
    complete_data_loglik,
    run_process_imputation,
    update_alpha,
    update_sigma_s_sq,
    update_sigma_v_sq,
)
from .potential import AttractorPotential, potential_gradient, potential_value
from .simulate import (
    ObsParams,
    Sde1Params,
    Sde2Params,
    observe,
    simulate_sde1,
    simulate_sde2,
)

__version__ = "0.1.0"
