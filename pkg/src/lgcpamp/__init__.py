"""Log Gaussian Cox processes: simulation, two-stage approximate marginal
posterior inference, and joint MCMC baselines."""

from .baselines import MmalaConfig, run_ess_joint, run_mmala
from .chain import Chain
from .covariance import ExponentialKernel, LmcSpec
from .diagnostics import (
    density_export,
    efficiency_report,
    efficiency_table,
    inefficiency_factor,
    summarize,
)
from .domain import (
    BlockPartition,
    CountSummary,
    CovariateRaster,
    Domain,
    PointPattern,
    build_partition,
    count_points,
)
from .latent import mix_latent_posterior, run_latent_stage, sample_latent_given_theta
from .model import ParamSpace, PriorSpec, factor1_pattern
from .moments import compute_cox_moments, moments_to_mpln, mpln_to_moments
from .pseudomarginal import run_amp
from .simulate import LgcpModel, simulate_lgcp

__version__ = "0.1.0"

__all__ = [
    "BlockPartition",
    "Chain",
    "CountSummary",
    "CovariateRaster",
    "Domain",
    "ExponentialKernel",
    "LgcpModel",
    "LmcSpec",
    "MmalaConfig",
    "ParamSpace",
    "PointPattern",
    "PriorSpec",
    "build_partition",
    "compute_cox_moments",
    "count_points",
    "density_export",
    "efficiency_report",
    "efficiency_table",
    "factor1_pattern",
    "inefficiency_factor",
    "mix_latent_posterior",
    "moments_to_mpln",
    "mpln_to_moments",
    "run_amp",
    "run_ess_joint",
    "run_latent_stage",
    "run_mmala",
    "sample_latent_given_theta",
    "simulate_lgcp",
    "summarize",
]
