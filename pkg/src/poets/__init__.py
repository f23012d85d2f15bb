"""Policy ensembles for KL-regularized Thompson sampling on finite-action bandits."""

from .objective import RegularizationCoeffs
from .policy import ContextFeatures, EnsembleParams, PolicyDistribution, RolloutBatch
from .trainer import TrainerConfig, grpo_config, run_experiment

__version__ = "0.1.0"
