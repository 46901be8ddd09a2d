"""Surrogate-assisted one-step debiased inference for GLM coefficients with missing outcomes."""

__version__ = "0.1.0"

from .baselines import BaselineEstimate, fit_dml, fit_proposed, fit_proposed_no_z
from .debias import (
    DebiasedEstimate,
    WeightModel,
    bootstrap_inference,
    bootstrap_many,
    evaluate_inv_pi,
    fit_weight_model,
    one_step_estimate,
    score_row,
)
from .errors import (
    DegenerateInformationError,
    DegenerateScaleError,
    EstimationError,
    InsufficientDataError,
    NonConvergenceError,
    SingularDesignError,
)
from .first_stage import Dataset, FirstStageFit, fit_first_stage, refit_g_excluding
from .glm import BINOMIAL, GAUSSIAN, GlmFamily, GlmFit, deviance_loss, fit_glm, fit_glm_imputed
from .kernels import SmootherFit, default_bandwidth, kernel_weighted_mean, nw_fit, nw_predict
from .sdr import ReducedBasis, augment, estimate_subspace, select_dimension
from .simulation import ScenarioConfig, generate, oracle_beta_star, run_scenario, test_deviance

__all__ = [name for name in dir() if not name.startswith("_")]
