"""PPO training stack: GAE, parameter-space noise, and the trainer loop."""

from .gae import compute_gae
from .noise import (
    SIGMA_MAX,
    SIGMA_MIN,
    NoiseState,
    adapt_noise,
    apply_perturbation,
    sample_perturbation,
)
from .trainer import (
    METRICS_HEADER,
    AgentNets,
    PpoConfig,
    RolloutBuffer,
    Trainer,
    clipped_surrogate,
    default_reward_search_grid,
    run_ppo_update,
)

__all__ = [
    "compute_gae",
    "NoiseState",
    "adapt_noise",
    "apply_perturbation",
    "sample_perturbation",
    "SIGMA_MIN",
    "SIGMA_MAX",
    "PpoConfig",
    "AgentNets",
    "RolloutBuffer",
    "Trainer",
    "clipped_surrogate",
    "default_reward_search_grid",
    "run_ppo_update",
    "METRICS_HEADER",
]
