"""Branching diffusions in random environment: exact formula evaluators,
regime asymptotics, and cross-validating Monte Carlo constructions."""

__version__ = "0.1.0"

from .asymptotics import ThetaEvaluator
from .backbone import (
    BackboneResult,
    Excursion,
    KsReport,
    PointRealization,
    backbone_simulate,
    excursion_values_at,
    feller_immigration_check,
    sample_excursion,
)
from .bpre import BpreConfig, BpreRun, ConvergenceRow, convergence_diagnostic, simulate_bpre
from .envpath import (
    EnvPath,
    ExpFunctionalSample,
    TimeChangeGrid,
    env_path_to_csv,
    exp_functional_batch,
    sample_env_path,
    sample_exp_functional,
    time_change,
)
from .errors import AccuracyError, StabilityError
from .exact import (
    DensityGrid,
    GammaLimit,
    QuadratureSettings,
    T_MIN,
    build_density_grid,
    density_inv_two_A,
    gamma_limit,
    hartman_watson_theta,
    joint_density,
    laplace_conditional,
    phi_beta,
    survival_conditional,
    survival_exact,
)
from .model import (
    AsymptoticProfile,
    ModelParams,
    Regime,
    classify_regime,
    decay_profile,
    f_eval,
)
from .simulate import (
    BoundaryClassification,
    McEstimate,
    TrajectorySet,
    boundary_classification,
    default_dt,
    mc_survival,
    reweighted_expectation,
    scale_function,
    simulate_bdre,
    simulate_conditioned,
    simulate_via_time_change,
    stationary_cdf,
    stationary_density,
)

__all__ = [
    "__version__",
    "ModelParams", "Regime", "AsymptoticProfile", "classify_regime", "f_eval", "decay_profile",
    "EnvPath", "TimeChangeGrid", "ExpFunctionalSample", "sample_env_path", "time_change",
    "sample_exp_functional", "exp_functional_batch", "env_path_to_csv",
    "QuadratureSettings", "DensityGrid", "T_MIN", "hartman_watson_theta", "joint_density",
    "density_inv_two_A", "build_density_grid", "phi_beta", "laplace_conditional",
    "survival_conditional", "survival_exact", "gamma_limit", "GammaLimit",
    "ThetaEvaluator",
    "TrajectorySet", "McEstimate", "default_dt", "simulate_bdre", "simulate_via_time_change",
    "mc_survival", "simulate_conditioned", "reweighted_expectation", "scale_function",
    "boundary_classification", "BoundaryClassification", "stationary_density", "stationary_cdf",
    "Excursion", "PointRealization", "BackboneResult", "KsReport", "sample_excursion",
    "excursion_values_at", "backbone_simulate", "feller_immigration_check",
    "BpreConfig", "BpreRun", "ConvergenceRow", "simulate_bpre", "convergence_diagnostic",
    "StabilityError", "AccuracyError",
]
