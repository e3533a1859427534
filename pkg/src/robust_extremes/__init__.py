"""Robust bounds on bivariate extremal dependence and portfolio VaR."""

from .bounds import (
    BoundReport,
    MomentSummary,
    Regime,
    clip_to_triangle,
    delta_star,
    delta_star_star,
    exact_bound,
    kl_bound,
    moments_for_pickands,
    optimizer_density,
    renyi_eta_bound,
    sqrt_bound,
)
from .divergence import DominatingMeasure, divergence, empirical_model, estimate_divergence, renyi2_radius
from .estimators import ParetoMargins, PolarThreshold, RobustPickands, SpectralFamilyMLE
from .inference import EXPERIMENTS, ExperimentConfig, fit_mle, model_class_bounds, polar_topk, run_experiment
from .numerics import AtomicMeasure, RngState, integrate, sample_positive_stable, solve_system
from .portfolio import (
    AtomicSampler,
    BivariateSampler,
    DirichletSampler,
    PortfolioSpec,
    comonotone_sampler,
    independence_sampler,
    mc_moments,
    var_bounds,
)
from .spectral import (
    AsymmetricLogistic,
    BivariateSample,
    Empirical,
    ExtremalT,
    HuslerReiss,
    SpectralModel,
    extremal_coefficient,
    parse_model,
    pickands,
    sample_angle,
    simulate_asym_logistic,
    to_pareto_margins,
)

__version__ = "0.1.0"
