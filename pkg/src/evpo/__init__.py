"""Explained-variance gating between critic and batch-mean baselines."""

__version__ = "0.1.0"

from .advantages import (AdvantageSet, RolloutGroup, Trajectory, batch_mean_advantages,
                         evpo_advantages, gae_advantages, grpo_advantages, ppo_advantages)
from .stats import (BatchDiagnostics, GaussianRegime, Mode, batch_diagnostics,
                    explained_variance, fused_baseline, kalman_gain, population_ev)

__all__ = [
    "AdvantageSet", "BatchDiagnostics", "GaussianRegime", "Mode", "RolloutGroup", "Trajectory",
    "batch_diagnostics", "batch_mean_advantages", "evpo_advantages", "explained_variance",
    "fused_baseline", "gae_advantages", "grpo_advantages", "kalman_gain", "population_ev",
    "ppo_advantages",
]
