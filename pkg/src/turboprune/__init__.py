"""Bayesian pruning toolkit: clustered support prior, turbo-style alternation
between a mean-field estimator and grid message passing, and a block-sparse
weight format with a coordinate baseline."""

from ._accel import BACKEND
from .errors import ConfigError, DivergenceError, FormatError
from .prior import GammaHyper, HierarchicalPrior, MrfParams, gamma_density, sample_support, weight_density
from .nn import Dataset, LikelihoodModel, MlpWeights, NetworkDef
from .turbo import PruneResult, TurboConfig, TurboState, turbo_run
from .vbi import (
    BernoulliPosterior,
    GammaPosterior,
    GaussianPosterior,
    PriorInput,
    VariationalPosterior,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BernoulliPosterior",
    "ConfigError",
    "Dataset",
    "DivergenceError",
    "FormatError",
    "GammaHyper",
    "GammaPosterior",
    "GaussianPosterior",
    "HierarchicalPrior",
    "LikelihoodModel",
    "MlpWeights",
    "MrfParams",
    "NetworkDef",
    "PriorInput",
    "PruneResult",
    "TurboConfig",
    "TurboState",
    "VariationalPosterior",
    "gamma_density",
    "sample_support",
    "turbo_run",
    "weight_density",
    "__version__",
]
