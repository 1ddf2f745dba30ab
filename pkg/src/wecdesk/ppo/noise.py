"""Parameter-space exploration noise with adaptive scale."""

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError

SIGMA_MIN = 1e-6
SIGMA_MAX = 1.0


@dataclass(frozen=True)
class NoiseState:
    """Scale of the Gaussian perturbation applied to actor parameters."""

    sigma: float = 0.05
    target_action_distance: float = 0.1
    adaptation_factor: float = 1.01

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError("noise sigma must be positive")
        if self.adaptation_factor <= 1.0:
            raise ConfigError("adaptation factor must exceed 1")


def adapt_noise(state, measured_action_distance):
    """Grow sigma while the policy barely moves, shrink it otherwise.

    Ties go to shrink, and sigma stays inside [SIGMA_MIN, SIGMA_MAX].
    """
    if measured_action_distance < 0:
        raise ConfigError("action distance must be >= 0")
    if measured_action_distance < state.target_action_distance:
        sigma = state.sigma * state.adaptation_factor
    else:
        sigma = state.sigma / state.adaptation_factor
    return replace(state, sigma=min(max(sigma, SIGMA_MIN), SIGMA_MAX))


def sample_perturbation(arrays, sigma, rng):
    """Gaussian offsets, one per parameter array."""
    return {
        name: sigma * rng.standard_normal(np.shape(a)) for name, a in arrays.items()
    }


def apply_perturbation(arrays, offsets):
    return {name: arrays[name] + offsets[name] for name in arrays}
