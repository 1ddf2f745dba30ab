"""Generalized advantage estimation."""

import numpy as np


def compute_gae(rewards, values, bootstrap_value, dones, gamma, lam):
    """Advantages and value targets by backward recursion.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    Arrays are (steps,) or (steps, envs); ``bootstrap_value`` is V of the
    state after the last step (scalar or (envs,)). A done flag at step t
    blocks both the bootstrap and the advantage recursion across t.
    Returns raw (unnormalized) advantages and returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=float)
    next_adv = np.zeros_like(next_value)
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        advantages[t] = next_adv
        next_value = values[t]
    return advantages, advantages + values
