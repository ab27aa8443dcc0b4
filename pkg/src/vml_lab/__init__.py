"""Exact-analytics laboratory for variational mode-seeking MAP estimation."""

from .estimator import VMLMAPRestorer
from .latent import SyntheticDecoder, latent_solve
from .loss import LossBreakdown, vml_full, vml_simplified
from .operator import LinearOperator
from .prior import GaussianMixture, PosteriorGMM, measurement_posterior
from .schedule import NoiseSchedule, build_edm_grid
from .solver import SolverConfig, Trajectory, solve

__version__ = "0.1.0"

__all__ = [
    "GaussianMixture",
    "LinearOperator",
    "LossBreakdown",
    "NoiseSchedule",
    "PosteriorGMM",
    "SolverConfig",
    "SyntheticDecoder",
    "Trajectory",
    "VMLMAPRestorer",
    "build_edm_grid",
    "latent_solve",
    "measurement_posterior",
    "solve",
    "vml_full",
    "vml_simplified",
]
