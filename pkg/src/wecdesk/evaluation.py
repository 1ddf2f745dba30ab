"""Deterministic policy evaluation and paired SD/RL comparisons.

Every comparison in a cell runs the learned policy and the spring-damper
baseline through the same environment class on the same wave seeds, so the
only difference between the two episodes is the controller.
"""

from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, ObsNormalizer, WecEnv, sd_actions
from .errors import ConfigError
from .fa import ModelConfig, no_grad
from .fa.checkpoint import load_checkpoint

N_AGENTS = 3


def _episode_stats(info, reward_sum, yaw_sq, steps, elapsed):
    energy = info["energy"]["extracted_per_leg"]
    return {
        "mean_rewards": reward_sum / max(steps, 1),
        "leg_powers": energy / max(elapsed, 1e-12),
        "yaw_rms": float(np.sqrt(yaw_sq / max(steps, 1))),
        "diverged": bool(info["diverged"]),
        "steps": steps,
    }


def run_rl_episode(env, agents, segment_len, seed, obs_clip=100.0):
    """One episode under the clean policy means (no sampling, no noise)."""
    obs = env.reset(seed)
    mems = [a.actor.initial_memory(1, fill="zeros") for a in agents]
    reward_sum = np.zeros(N_AGENTS)
    yaw_sq = 0.0
    steps = 0
    done = False
    with no_grad():
        while not done:
            if steps % segment_len == 0 and steps > 0:
                mems = [a.actor.trim_memory(m) for a, m in zip(agents, mems)]
            acts = np.empty(N_AGENTS)
            obs = np.clip(obs, -obs_clip, obs_clip)
            for i, agent in enumerate(agents):
                xa = obs[i][None, None, :]
                feats, mems[i] = agent.actor.forward(xa, mems[i], trim=False)
                acts[i] = agent.policy(feats).data[0, 0, 0]
            obs, rewards, done, info = env.step(np.clip(acts, -1.0, 1.0))
            reward_sum += rewards
            yaw_sq += info["yaw_rms"] ** 2
            steps += 1
    return _episode_stats(info, reward_sum, yaw_sq, steps, env.time)


def run_sd_episode(env, sd_params, force_limit, seed):
    """The spring-damper baseline through the same environment interface."""
    env.reset(seed)
    ext = np.zeros(N_AGENTS)
    extvel = np.zeros(N_AGENTS)
    reward_sum = np.zeros(N_AGENTS)
    yaw_sq = 0.0
    steps = 0
    done = False
    while not done:
        acts = sd_actions(ext, extvel, sd_params, force_limit)
        _, rewards, done, info = env.step(acts)
        ext, extvel = info["extension"], info["extension_velocity"]
        reward_sum += rewards
        yaw_sq += info["yaw_rms"] ** 2
        steps += 1
    return _episode_stats(info, reward_sum, yaw_sq, steps, env.time)


@dataclass
class PolicyBundle:
    """A trained policy reloaded from a checkpoint."""

    agents: list
    model_config: ModelConfig
    normalizer: ObsNormalizer
    config: dict  # training-time config echo

    @property
    def segment_len(self):
        return int(self.config["ppo"]["segment_len"])


def load_policy_bundle(path):
    """Rebuild the three agents from a training checkpoint."""
    from .ppo.trainer import AgentNets

    config, arrays = load_checkpoint(path)
    if "model" not in config or "norm.mean" not in arrays:
        raise ConfigError(f"{path} is not a training checkpoint")
    model_cfg = ModelConfig(**config["model"])
    mean = arrays["norm.mean"]
    std = arrays["norm.std"]
    normalizer = ObsNormalizer(mean, std)
    obs_dim = mean.shape[0]
    agents = []
    for i in range(N_AGENTS):
        agent = AgentNets(obs_dim, model_cfg, np.random.default_rng(0))
        prefix = f"agent{i}."
        agent.load_state_arrays(
            {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        )
        agents.append(agent)
    return PolicyBundle(agents, model_cfg, normalizer, config)


@dataclass(frozen=True)
class EvalCell:
    """One point of the evaluation grid."""

    tp: float
    hs: float = 2.0
    angle_deg: float = 0.0
    mode: str = "irregular"
    episodes: int = 10
    seed_base: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


@dataclass
class CellResult:
    tp: float
    hs: float
    angle_deg: float
    mode: str
    episodes: int
    sd_mean_power: float
    rl_mean_power: float
    gain_pct: float
    gain_std: float
    yaw_rms_sd: float
    yaw_rms_rl: float
    yaw_reduction_pct: float
    rl_power_var: float
    sd_power_var: float


def _cell_env(plant, cell, duration, base_env, normalizer, reward_cfg):
    cfg = EnvConfig(
        tp=cell.tp,
        hs=cell.hs,
        mode=cell.mode,
        angle_deg=cell.angle_deg,
        control_dt=base_env.control_dt,
        substeps=base_env.substeps,
        episode_duration=duration,
        preview_horizon=base_env.preview_horizon,
        preview_samples=base_env.preview_samples,
        n_components=base_env.n_components,
    )
    return WecEnv(plant, cfg, reward_cfg, normalizer=normalizer)


def evaluate_cell(
    plant,
    cell,
    base_env,
    reward_cfg,
    bundle,
    sd_params,
    duration,
    rl_controller=None,
):
    """Paired SD/RL episodes on identical wave seeds; returns a CellResult.

    ``rl_controller`` overrides the learned policy with a callable
    (env, seed) -> stats; passing the SD runner itself turns the comparison
    into a self-test whose gain must vanish.
    """
    rl_powers, sd_powers, gains = [], [], []
    rl_yaws, sd_yaws = [], []
    for k in range(cell.episodes):
        seed = cell.seed_base + k
        env = _cell_env(plant, cell, duration, base_env, bundle.normalizer, reward_cfg)
        if rl_controller is None:
            rl = run_rl_episode(env, bundle.agents, bundle.segment_len, seed)
        else:
            rl = rl_controller(env, seed)
        env = _cell_env(plant, cell, duration, base_env, bundle.normalizer, reward_cfg)
        sd = run_sd_episode(env, sd_params, plant.force_limit, seed)
        rl_total = float(np.sum(rl["leg_powers"]))
        sd_total = float(np.sum(sd["leg_powers"]))
        rl_powers.append(rl_total)
        sd_powers.append(sd_total)
        gains.append(100.0 * (rl_total - sd_total) / abs(sd_total))
        rl_yaws.append(rl["yaw_rms"])
        sd_yaws.append(sd["yaw_rms"])
    rl_mean = float(np.mean(rl_powers))
    sd_mean = float(np.mean(sd_powers))
    yaw_sd = float(np.mean(sd_yaws))
    yaw_rl = float(np.mean(rl_yaws))
    return CellResult(
        tp=cell.tp,
        hs=cell.hs,
        angle_deg=cell.angle_deg,
        mode=cell.mode,
        episodes=cell.episodes,
        sd_mean_power=sd_mean,
        rl_mean_power=rl_mean,
        gain_pct=100.0 * (rl_mean - sd_mean) / abs(sd_mean),
        gain_std=float(np.std(gains)),
        yaw_rms_sd=yaw_sd,
        yaw_rms_rl=yaw_rl,
        yaw_reduction_pct=100.0 * (yaw_sd - yaw_rl) / max(yaw_sd, 1e-12),
        rl_power_var=float(np.var(rl_powers)),
        sd_power_var=float(np.var(sd_powers)),
    )
