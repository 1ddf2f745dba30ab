"""Multi-agent PPO with clipped surrogate, GAE, and parameter-space noise.

Each of the three agents owns an independent actor (backbone + Gaussian head)
and critic (backbone + value head). Rollouts are collected with a perturbed
copy of each actor (theta + eps, refreshed every episode round) while
log-probs and values are recorded under the clean parameters, so the PPO
ratio starts at exactly 1. Recurrent and attention backbones are trained by
truncated BPTT over fixed segments whose starting memory is snapshotted
during collection; collection steps one control interval at a time without
evicting memory inside a segment, which makes the stepwise pass numerically
identical to the whole-segment pass used in updates.

Training advances in episode rounds: all environments reset together, so
memory resets stay synchronized and checkpoints written at round boundaries
capture the complete run state (parameters, optimizer moments, RNG streams,
seed counters). Resuming from such a checkpoint continues bit-identically.
"""

import os
from dataclasses import dataclass

import numpy as np

from ..env import EnvConfig, VectorEnv, WecEnv
from ..errors import ConfigError
from ..evaluation import run_rl_episode, run_sd_episode
from ..fa import (
    Adam,
    GaussianPolicyHead,
    ModelConfig,
    Tensor,
    ValueHead,
    clip_grad_norm,
    clone_memory,
    make_backbone,
    no_grad,
)
from ..fa import tensor as T
from ..fa.checkpoint import (
    array_to_rng_state,
    load_checkpoint,
    rng_state_to_array,
    save_checkpoint,
)
from .gae import compute_gae
from .noise import (
    NoiseState,
    adapt_noise,
    apply_perturbation,
    sample_perturbation,
)

N_AGENTS = 3

# observations and scaled rewards are clamped before entering the learner:
# in the steps before a divergence is detected the plant can report values
# that are finite yet large enough to overflow the squared losses or blow
# up the Gaussian log-density. Observations are normalized (roughly unit
# scale), so healthy data sits far below both bounds.
OBS_CLIP = 100.0
REWARD_CLIP = 1e6

METRICS_HEADER = "step,agent,mean_reward,mean_power,yaw_rms,sd_power,gain_pct,sigma"


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    lr_floor: float = 1e-6
    gae_lambda: float = 0.95
    discount_gamma: float = 0.99
    epochs_per_update: int = 4
    minibatch_size: int = 256
    segment_len: int = 32
    rollout_length: int = 128
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 16
    total_steps: int = 0
    reward_scale: float = None  # default (1 - gamma), applied before GAE
    init_action_std: float = 0.5
    noise_sigma: float = 0.05
    noise_target_distance: float = 0.1
    noise_adaptation: float = 1.01
    eval_episodes: int = 1
    eval_duration: float = None  # seconds; None uses the episode duration
    checkpoint_every: int = 1  # episode rounds between eval + checkpoint

    def __post_init__(self):
        if self.clip_epsilon <= 0:
            raise ConfigError("clip_epsilon must be positive")
        for name in ("gae_lambda", "discount_gamma"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.segment_len < 1 or self.minibatch_size % self.segment_len:
            raise ConfigError("minibatch_size must be a multiple of segment_len")
        if self.rollout_length % self.segment_len:
            raise ConfigError("rollout_length must be a multiple of segment_len")
        if self.n_envs < 1:
            raise ConfigError("n_envs must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.reward_scale is None:
            self.reward_scale = 1.0 - self.discount_gamma
        if self.reward_scale <= 0:
            raise ConfigError("reward_scale must be positive")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_reward_search_grid():
    """Small stand-in sweep over (eta_front, eta_back, alpha): 8 cells."""
    cells = []
    for eta_front in (-0.6, 0.0):
        for eta_back in (0.4, 0.8):
            for alpha in (0.2, 1.0):
                cells.append(
                    {"eta_front": eta_front, "eta_back": eta_back, "alpha": alpha}
                )
    return cells


class AgentNets:
    """Actor and critic for one agent, with their optimizers."""

    def __init__(self, obs_dim, model_cfg, rng, lr=3e-4, init_action_std=0.5):
        self.actor = make_backbone(obs_dim, model_cfg, rng)
        self.policy = GaussianPolicyHead(
            self.actor.feature_dim, 1, rng, init_std=init_action_std
        )
        self.critic = make_backbone(obs_dim, model_cfg, rng)
        self.value = ValueHead(self.critic.feature_dim, rng)
        self.opt_actor = Adam(self.actor_named(), lr=lr)
        self.opt_critic = Adam(self.critic_named(), lr=lr)

    def actor_named(self):
        pairs = [("actor." + n, p) for n, p in self.actor.named_parameters()]
        pairs += [("policy." + n, p) for n, p in self.policy.named_parameters()]
        return pairs

    def critic_named(self):
        pairs = [("critic." + n, p) for n, p in self.critic.named_parameters()]
        pairs += [("value." + n, p) for n, p in self.value.named_parameters()]
        return pairs

    def actor_arrays(self):
        return {n: p.data.copy() for n, p in self.actor_named()}

    def load_actor_arrays(self, arrays):
        for n, p in self.actor_named():
            p.data = np.asarray(arrays[n], dtype=float).copy()

    def state_arrays(self):
        out = {n: p.data.copy() for n, p in self.actor_named()}
        out.update({n: p.data.copy() for n, p in self.critic_named()})
        out.update(self.opt_actor.state_arrays(prefix="opt_actor."))
        out.update(self.opt_critic.state_arrays(prefix="opt_critic."))
        return out

    def load_state_arrays(self, arrays):
        for n, p in self.actor_named() + self.critic_named():
            if n not in arrays:
                raise ConfigError(f"checkpoint missing parameter {n}")
            p.data = np.asarray(arrays[n], dtype=float).copy()
        self.opt_actor.load_state_arrays(arrays, prefix="opt_actor.")
        self.opt_critic.load_state_arrays(arrays, prefix="opt_critic.")

    def zero_grads(self):
        for _, p in self.actor_named() + self.critic_named():
            p.grad = None


@dataclass
class RolloutBuffer:
    """One agent's slice of a collected rollout.

    Time-major arrays of shape (steps, envs); ``valid`` masks out steps that
    cannot be re-evaluated from the segment-start memory snapshots (the tail
    of a segment interrupted by a divergence restart). ``actor_memories`` and
    ``critic_memories`` hold one snapshot per segment, taken before the
    segment's first step.
    """

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    valid: np.ndarray
    bootstrap_values: np.ndarray
    actor_memories: list
    critic_memories: list
    segment_len: int
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @property
    def n_steps(self):
        return self.observations.shape[0]

    @property
    def n_envs(self):
        return self.observations.shape[1]

    def segment_index(self):
        """(segment, env) pairs addressing every stored segment."""
        n_segments = self.n_steps // self.segment_len
        return [(s, e) for s in range(n_segments) for e in range(self.n_envs)]


def _gather_memory(memory, env_indices):
    """Select environment rows of a memory snapshot for a minibatch."""
    out = []
    for item in memory:
        if isinstance(item, tuple):
            out.append(tuple(a[env_indices] for a in item))
        else:
            out.append(item[env_indices])
    return out


def clipped_surrogate(ratio, advantages, clip_epsilon):
    """Per-step clipped-surrogate losses (negated objective).

    The pessimistic minimum alone is unbounded above when the advantage is
    negative and the ratio large, so each loss is additionally capped at
    (1 + clip_epsilon) * |advantage|: a sample whose ratio has already left
    the trust band cannot dominate the minibatch. At ratio 1 neither clip is
    active and the gradient is the plain policy-gradient estimator.
    """
    unclipped = ratio * advantages
    clipped = T.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    raw = -T.minimum(unclipped, clipped)
    cap = Tensor((1.0 + clip_epsilon) * np.abs(advantages.data))
    return T.minimum(T.maximum(raw, -1.0 * cap), cap)


class Trainer:
    """Owns the three agents, the environment vector, and the run state."""

    def __init__(
        self,
        plant_params,
        env_config,
        reward_config,
        model_config,
        ppo_config,
        sd_params,
        seed=0,
        out_dir=None,
        normalizer=None,
    ):
        self.plant = plant_params
        self.env_cfg = env_config
        self.reward_cfg = reward_config
        self.model_cfg = model_config
        self.cfg = ppo_config
        self.sd_params = sd_params
        self.seed = int(seed)
        self.out_dir = out_dir

        episode_steps = env_config.n_steps
        if episode_steps % ppo_config.rollout_length:
            raise ConfigError(
                "episode steps must be a multiple of rollout_length so memory "
                f"resets align with rollout boundaries "
                f"({episode_steps} % {ppo_config.rollout_length} != 0)"
            )

        if normalizer is None:
            from ..env import collect_observation_normalizer

            normalizer = collect_observation_normalizer(
                plant_params,
                env_config,
                sd_params,
                episodes=10,
                base_seed=self.seed + 900_000,
            )
        self.normalizer = normalizer

        self.envs = VectorEnv(
            [
                WecEnv(plant_params, env_config, reward_config, normalizer=normalizer)
                for _ in range(ppo_config.n_envs)
            ]
        )
        obs_dim = env_config.obs_size
        rng_init = np.random.default_rng(self.seed)
        self.agents = [
            AgentNets(
                obs_dim,
                model_config,
                rng_init,
                lr=ppo_config.learning_rate,
                init_action_std=ppo_config.init_action_std,
            )
            for _ in range(N_AGENTS)
        ]
        # behavior-policy copies; parameters overwritten before first use
        self.perturbed = [
            AgentNets(obs_dim, model_config, np.random.default_rng(self.seed + 50 + i))
            for i in range(N_AGENTS)
        ]
        self.noise = NoiseState(
            sigma=ppo_config.noise_sigma,
            target_action_distance=ppo_config.noise_target_distance,
            adaptation_factor=ppo_config.noise_adaptation,
        )
        self.rng_actions = np.random.default_rng(self.seed + 1)
        self.rng_noise = np.random.default_rng(self.seed + 2)
        self.steps_done = 0
        self.update_count = 0
        self.round_index = 0
        self.episode_seed_counter = 0
        self._offsets = None
        self._sd_eval_cache = {}

    # -- seeds and schedules -------------------------------------------------

    def _next_episode_seed(self):
        seed = self.seed + 1_000_000 + self.episode_seed_counter
        self.episode_seed_counter += 1
        return seed

    def eval_seeds(self):
        return [self.seed + 7_000_000 + k for k in range(self.cfg.eval_episodes)]

    def current_lr(self):
        if self.cfg.total_steps <= 0:
            return self.cfg.learning_rate
        frac = 1.0 - self.steps_done / self.cfg.total_steps
        return max(self.cfg.learning_rate * frac, self.cfg.lr_floor)

    # -- behavior policy -----------------------------------------------------

    def refresh_perturbations(self):
        """Draw a new eps per agent (episode-round cadence)."""
        self._offsets = [
            sample_perturbation(a.actor_arrays(), self.noise.sigma, self.rng_noise)
            for a in self.agents
        ]
        self.rebuild_perturbed()

    def rebuild_perturbed(self):
        """Re-apply the current eps to the current clean parameters."""
        for agent, pert, off in zip(self.agents, self.perturbed, self._offsets):
            pert.load_actor_arrays(apply_perturbation(agent.actor_arrays(), off))

    # -- rollout collection ----------------------------------------------------

    def start_episode_round(self):
        seeds = [self._next_episode_seed() for _ in range(self.cfg.n_envs)]
        obs = self.envs.reset(seeds)
        b = self.cfg.n_envs
        self._actor_mem = [a.actor.initial_memory(b, fill="zeros") for a in self.agents]
        self._pert_mem = [p.actor.initial_memory(b, fill="zeros") for p in self.perturbed]
        self._critic_mem = [a.critic.initial_memory(b, fill="zeros") for a in self.agents]
        self.refresh_perturbations()
        return obs

    def collect_rollouts(self, obs):
        """Advance every environment rollout_length steps.

        Returns (buffers per agent, last observation, mean action distance
        between clean and perturbed policy means).
        """
        cfg = self.cfg
        steps, b = cfg.rollout_length, cfg.n_envs
        obs_dim = self.env_cfg.obs_size
        buf_obs = np.empty((N_AGENTS, steps, b, obs_dim))
        buf_act = np.empty((N_AGENTS, steps, b, 1))
        buf_logp = np.empty((N_AGENTS, steps, b))
        buf_val = np.empty((N_AGENTS, steps, b))
        buf_rew = np.empty((N_AGENTS, steps, b))
        buf_done = np.zeros((steps, b))
        buf_valid = np.ones((steps, b))
        actor_snaps = [[] for _ in range(N_AGENTS)]
        critic_snaps = [[] for _ in range(N_AGENTS)]
        dist_sq = 0.0
        dist_n = 0

        for t in range(steps):
            obs = np.clip(obs, -OBS_CLIP, OBS_CLIP)
            if t % cfg.segment_len == 0:
                for i, agent in enumerate(self.agents):
                    if t > 0:
                        self._actor_mem[i] = agent.actor.trim_memory(self._actor_mem[i])
                        self._pert_mem[i] = self.perturbed[i].actor.trim_memory(
                            self._pert_mem[i]
                        )
                        self._critic_mem[i] = agent.critic.trim_memory(
                            self._critic_mem[i]
                        )
                    actor_snaps[i].append(clone_memory(self._actor_mem[i]))
                    critic_snaps[i].append(clone_memory(self._critic_mem[i]))

            actions = np.empty((b, N_AGENTS))
            with no_grad():
                for i, (agent, pert) in enumerate(zip(self.agents, self.perturbed)):
                    xa = obs[:, i, :][:, None, :]
                    feats, self._actor_mem[i] = agent.actor.forward(
                        xa, self._actor_mem[i], trim=False
                    )
                    mean_clean = agent.policy(feats).data[:, 0, :]
                    pfeats, self._pert_mem[i] = pert.actor.forward(
                        xa, self._pert_mem[i], trim=False
                    )
                    mean_pert = pert.policy(pfeats).data[:, 0, :]
                    cfeats, self._critic_mem[i] = agent.critic.forward(
                        xa, self._critic_mem[i], trim=False
                    )
                    values = agent.value(cfeats).data[:, 0]

                    act = pert.policy.sample(mean_pert, self.rng_actions)
                    logp = agent.policy.log_prob(Tensor(mean_clean), act).data

                    buf_obs[i, t] = obs[:, i, :]
                    buf_act[i, t] = act
                    buf_logp[i, t] = logp
                    buf_val[i, t] = values
                    actions[:, i] = act[:, 0]
                    dist_sq += float(np.sum((mean_pert - mean_clean) ** 2))
                    dist_n += b

            next_obs, rewards, dones, infos = self.envs.step(actions)
            for i in range(N_AGENTS):
                buf_rew[i, t] = np.clip(
                    rewards[:, i] * cfg.reward_scale, -REWARD_CLIP, REWARD_CLIP
                )
            buf_done[t] = dones.astype(float)

            for e in range(b):
                if dones[e] and infos[e]["diverged"]:
                    # restart this worker on a fresh draw; its memory restarts
                    # too, so the rest of the segment cannot be re-evaluated
                    seg_end = (t // cfg.segment_len + 1) * cfg.segment_len
                    if t + 1 < seg_end:
                        buf_valid[t + 1 : seg_end, e] = 0.0
                    next_obs[e] = self.envs.envs[e].reset(self._next_episode_seed())
                    for i in range(N_AGENTS):
                        _zero_env_rows(self._actor_mem[i], e)
                        _zero_env_rows(self._pert_mem[i], e)
                        _zero_env_rows(self._critic_mem[i], e)
            obs = next_obs

        buffers = []
        obs = np.clip(obs, -OBS_CLIP, OBS_CLIP)
        with no_grad():
            for i, agent in enumerate(self.agents):
                self._actor_mem[i] = agent.actor.trim_memory(self._actor_mem[i])
                self._pert_mem[i] = self.perturbed[i].actor.trim_memory(self._pert_mem[i])
                self._critic_mem[i] = agent.critic.trim_memory(self._critic_mem[i])
                xa = obs[:, i, :][:, None, :]
                cfeats, _ = agent.critic.forward(
                    xa, self._critic_mem[i], trim=False
                )
                bootstrap = agent.value(cfeats).data[:, 0]
                buffers.append(
                    RolloutBuffer(
                        observations=buf_obs[i],
                        actions=buf_act[i],
                        log_probs=buf_logp[i],
                        values=buf_val[i],
                        rewards=buf_rew[i],
                        dones=buf_done.copy(),
                        valid=buf_valid.copy(),
                        bootstrap_values=bootstrap,
                        actor_memories=actor_snaps[i],
                        critic_memories=critic_snaps[i],
                        segment_len=cfg.segment_len,
                    )
                )
        distance = float(np.sqrt(dist_sq / max(dist_n, 1)))
        return buffers, obs, distance

    # -- optimization ----------------------------------------------------------

    def compute_advantages(self, buffers):
        for buf in buffers:
            buf.advantages, buf.returns = compute_gae(
                buf.rewards,
                buf.values,
                buf.bootstrap_values,
                buf.dones,
                self.cfg.discount_gamma,
                self.cfg.gae_lambda,
            )

    def ppo_update(self, buffers, lr=None, agents=None):
        """Clipped-surrogate update over stored segments.

        ``agents`` restricts the update to a subset of agent indices; each
        agent's update consumes its own RNG stream, so updating one agent
        never touches another's parameters or randomness.
        """
        lr = self.cfg.learning_rate if lr is None else lr
        stats = run_ppo_update(
            self.agents,
            buffers,
            self.cfg,
            lr,
            shuffle_seed=self.seed + 3,
            update_count=self.update_count,
            agent_ids=agents,
        )
        if not stats["aborted"]:
            self.update_count += 1
        return stats

    # -- evaluation -------------------------------------------------------------

    def _eval_env(self):
        cfg = self.env_cfg
        if self.cfg.eval_duration is not None:
            cfg = EnvConfig(
                tp=cfg.tp,
                hs=cfg.hs,
                mode=cfg.mode,
                angle_deg=cfg.angle_deg,
                control_dt=cfg.control_dt,
                substeps=cfg.substeps,
                episode_duration=self.cfg.eval_duration,
                preview_horizon=cfg.preview_horizon,
                preview_samples=cfg.preview_samples,
                n_components=cfg.n_components,
            )
        return WecEnv(self.plant, cfg, self.reward_cfg, normalizer=self.normalizer)

    def run_policy_episode(self, seed):
        """Deterministic episode with clean actors and mean actions."""
        return run_rl_episode(
            self._eval_env(), self.agents, self.cfg.segment_len, seed,
            obs_clip=OBS_CLIP,
        )

    def run_sd_episode(self, seed):
        """Spring-damper baseline through the same environment interface."""
        return run_sd_episode(
            self._eval_env(), self.sd_params, self.plant.force_limit, seed
        )

    def evaluate(self):
        """Paired deterministic evaluation against the SD baseline."""
        rl = []
        for seed in self.eval_seeds():
            rl.append(self.run_policy_episode(seed))
            if seed not in self._sd_eval_cache:
                self._sd_eval_cache[seed] = self.run_sd_episode(seed)
        sd = [self._sd_eval_cache[s] for s in self.eval_seeds()]
        rows = []
        for i in range(N_AGENTS):
            rl_power = np.mean([r["leg_powers"][i] for r in rl])
            sd_power = np.mean([s["leg_powers"][i] for s in sd])
            gain = 100.0 * (rl_power - sd_power) / abs(sd_power) if sd_power else 0.0
            rows.append(
                {
                    "step": self.steps_done,
                    "agent": i,
                    "mean_reward": float(np.mean([r["mean_rewards"][i] for r in rl])),
                    "mean_power": float(rl_power),
                    "yaw_rms": float(np.mean([r["yaw_rms"] for r in rl])),
                    "sd_power": float(sd_power),
                    "gain_pct": float(gain),
                    "sigma": self.noise.sigma,
                }
            )
        return rows

    # -- persistence ------------------------------------------------------------

    def config_echo(self):
        return {
            "seed": self.seed,
            "plant": self.plant.name,
            "env": {
                "tp": self.env_cfg.tp,
                "hs": self.env_cfg.hs,
                "mode": self.env_cfg.mode,
                "angle_deg": self.env_cfg.angle_deg,
                "control_dt": self.env_cfg.control_dt,
                "substeps": self.env_cfg.substeps,
                "episode_duration": self.env_cfg.episode_duration,
                "preview_horizon": self.env_cfg.preview_horizon,
                "preview_samples": self.env_cfg.preview_samples,
                "n_components": self.env_cfg.n_components,
            },
            "reward": {
                "eta_per_agent": list(map(float, self.reward_cfg.eta_per_agent)),
                "alpha": self.reward_cfg.alpha,
                "yaw_scale": self.reward_cfg.yaw_scale,
                "power_scale": self.reward_cfg.power_scale,
            },
            "model": self.model_cfg.to_dict(),
            "ppo": self.cfg.to_dict(),
            "sd": {
                "spring_k": list(map(float, self.sd_params.spring_k)),
                "damping_c": list(map(float, self.sd_params.damping_c)),
            },
        }

    def save_checkpoint(self, path):
        arrays = {}
        for i, agent in enumerate(self.agents):
            for name, arr in agent.state_arrays().items():
                arrays[f"agent{i}.{name}"] = arr
        arrays["trainer.counters"] = np.array(
            [
                float(self.steps_done),
                float(self.update_count),
                float(self.round_index),
                float(self.episode_seed_counter),
            ]
        )
        arrays["trainer.noise_sigma"] = np.array([self.noise.sigma])
        arrays["rng.actions"] = rng_state_to_array(self.rng_actions)
        arrays["rng.noise"] = rng_state_to_array(self.rng_noise)
        arrays["norm.mean"] = self.normalizer.mean
        arrays["norm.std"] = self.normalizer.std
        save_checkpoint(path, self.config_echo(), arrays)

    def load_checkpoint(self, path):
        config, arrays = load_checkpoint(path)
        mine = self.config_echo()
        diffs = _dict_diff(mine, config)
        if diffs:
            raise ConfigError(
                "checkpoint was written under a different configuration: "
                + "; ".join(diffs)
            )
        for i, agent in enumerate(self.agents):
            prefix = f"agent{i}."
            agent.load_state_arrays(
                {
                    k[len(prefix):]: v
                    for k, v in arrays.items()
                    if k.startswith(prefix)
                }
            )
        counters = arrays["trainer.counters"]
        self.steps_done = int(counters[0])
        self.update_count = int(counters[1])
        self.round_index = int(counters[2])
        self.episode_seed_counter = int(counters[3])
        self.noise = NoiseState(
            sigma=float(arrays["trainer.noise_sigma"][0]),
            target_action_distance=self.cfg.noise_target_distance,
            adaptation_factor=self.cfg.noise_adaptation,
        )
        array_to_rng_state(self.rng_actions, arrays["rng.actions"])
        array_to_rng_state(self.rng_noise, arrays["rng.noise"])
        self.normalizer.mean = arrays["norm.mean"]
        self.normalizer.std = arrays["norm.std"]

    def _write_metrics(self, rows):
        if self.out_dir is None:
            return
        path = os.path.join(self.out_dir, "metrics.csv")
        fresh = not os.path.exists(path)
        with open(path, "a", encoding="utf-8") as fh:
            if fresh:
                fh.write(METRICS_HEADER + "\n")
            for r in rows:
                fh.write(
                    ",".join(
                        [
                            str(r["step"]),
                            str(r["agent"]),
                            repr(r["mean_reward"]),
                            repr(r["mean_power"]),
                            repr(r["yaw_rms"]),
                            repr(r["sd_power"]),
                            repr(r["gain_pct"]),
                            repr(r["sigma"]),
                        ]
                    )
                    + "\n"
                )

    def _checkpoint_path(self):
        return os.path.join(self.out_dir, "checkpoint.bin")

    # -- main loop ----------------------------------------------------------------

    def train(self, resume_from=None, max_rounds=None):
        """Run episode rounds until total_steps; returns the metrics rows.

        ``resume_from`` restores a previous run's checkpoint and continues it
        bit-identically. ``max_rounds`` stops early after that many episode
        rounds (the checkpoint still lets a later call resume the schedule).
        """
        if self.out_dir is not None:
            os.makedirs(self.out_dir, exist_ok=True)
        if resume_from is not None:
            self.load_checkpoint(resume_from)
        elif self.out_dir is not None:
            self.save_checkpoint(self._checkpoint_path())
            self._ensure_metrics_header()

        all_rows = []
        rounds_run = 0
        episode_steps = self.env_cfg.n_steps
        rollouts_per_round = episode_steps // self.cfg.rollout_length
        while self.steps_done < self.cfg.total_steps:
            if max_rounds is not None and rounds_run >= max_rounds:
                break
            obs = self.start_episode_round()
            distances = []
            for _ in range(rollouts_per_round):
                buffers, obs, distance = self.collect_rollouts(obs)
                distances.append(distance)
                self.compute_advantages(buffers)
                self.ppo_update(buffers, lr=self.current_lr())
                self.steps_done += self.cfg.n_envs * self.cfg.rollout_length
                self.rebuild_perturbed()
            self.noise = adapt_noise(self.noise, float(np.mean(distances)))
            self.round_index += 1
            rounds_run += 1
            if (
                self.round_index % self.cfg.checkpoint_every == 0
                or self.steps_done >= self.cfg.total_steps
            ):
                rows = self.evaluate()
                all_rows.extend(rows)
                self._write_metrics(rows)
                if self.out_dir is not None:
                    self.save_checkpoint(self._checkpoint_path())
        if self.out_dir is not None:
            self.save_checkpoint(self._checkpoint_path())
        return all_rows

    def _ensure_metrics_header(self):
        if self.out_dir is None:
            return
        path = os.path.join(self.out_dir, "metrics.csv")
        if not os.path.exists(path):
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(METRICS_HEADER + "\n")


def run_ppo_update(
    agents, buffers, cfg, lr, shuffle_seed=0, update_count=0, agent_ids=None
):
    """Apply one PPO update to each listed agent from its rollout buffer.

    Minibatches are whole segments re-run from their stored memory
    snapshots. A non-finite loss or gradient aborts the whole update and
    restores every listed agent's parameters and optimizer moments.
    """
    agent_ids = list(range(len(agents))) if agent_ids is None else list(agent_ids)
    snapshot = {i: agents[i].state_arrays() for i in agent_ids}
    stats = {
        "aborted": False,
        "actor_loss": 0.0,
        "value_loss": 0.0,
        "clip_fraction": 0.0,
    }
    n_terms = 0
    for i in agent_ids:
        agent, buf = agents[i], buffers[i]
        mask = buf.valid
        flat = buf.advantages[mask > 0]
        adv_norm = (buf.advantages - flat.mean()) / (flat.std() + 1e-8)
        segs = buf.segment_index()
        seg_per_mb = max(cfg.minibatch_size // cfg.segment_len, 1)
        shuffle_rng = np.random.default_rng((shuffle_seed, update_count, i))
        for _ in range(cfg.epochs_per_update):
            order = shuffle_rng.permutation(len(segs))
            for lo in range(0, len(order), seg_per_mb):
                picks = [segs[j] for j in order[lo : lo + seg_per_mb]]
                ok = _update_minibatch(agent, buf, adv_norm, picks, cfg, lr, stats)
                n_terms += 1
                if not ok:
                    for j in agent_ids:
                        agents[j].load_state_arrays(snapshot[j])
                    stats["aborted"] = True
                    return stats
    for key in ("actor_loss", "value_loss", "clip_fraction"):
        stats[key] /= max(n_terms, 1)
    return stats


def _update_minibatch(agent, buf, adv_norm, picks, cfg, lr, stats):
    sl = buf.segment_len
    rows_obs, rows_act, rows_logp = [], [], []
    rows_adv, rows_ret, rows_mask = [], [], []
    actor_mems, critic_mems = [], []
    by_segment = {}
    for s, e in picks:
        by_segment.setdefault(s, []).append(e)
    for s in sorted(by_segment):
        envs = np.array(sorted(by_segment[s]))
        t0 = s * sl
        rows_obs.append(buf.observations[t0 : t0 + sl, envs].swapaxes(0, 1))
        rows_act.append(buf.actions[t0 : t0 + sl, envs].swapaxes(0, 1))
        rows_logp.append(buf.log_probs[t0 : t0 + sl, envs].swapaxes(0, 1))
        rows_adv.append(adv_norm[t0 : t0 + sl, envs].swapaxes(0, 1))
        rows_ret.append(buf.returns[t0 : t0 + sl, envs].swapaxes(0, 1))
        rows_mask.append(buf.valid[t0 : t0 + sl, envs].swapaxes(0, 1))
        actor_mems.append(_gather_memory(buf.actor_memories[s], envs))
        critic_mems.append(_gather_memory(buf.critic_memories[s], envs))

    obs = np.concatenate(rows_obs, axis=0)
    act = np.concatenate(rows_act, axis=0)
    logp_old = np.concatenate(rows_logp, axis=0)
    adv = np.concatenate(rows_adv, axis=0)
    ret = np.concatenate(rows_ret, axis=0)
    mask = np.concatenate(rows_mask, axis=0)
    actor_mem = _concat_memories(actor_mems)
    critic_mem = _concat_memories(critic_mems)
    denom = float(mask.sum())
    if denom == 0.0:
        return True
    mask_t = Tensor(mask)

    feats, _ = agent.actor.forward(obs, actor_mem)
    mean = agent.policy(feats)
    logp_new = agent.policy.log_prob(mean, act)
    # masked steps are forced to ratio 1 so an unusable log-prob recorded
    # around a divergence restart cannot overflow the exponential
    ratio = ((logp_new - Tensor(logp_old)) * mask_t).exp()
    losses = clipped_surrogate(ratio, Tensor(adv), cfg.clip_epsilon)
    actor_loss = (losses * mask_t).sum() * (1.0 / denom)
    if cfg.entropy_coef:
        actor_loss = actor_loss - cfg.entropy_coef * agent.policy.entropy()

    cfeats, _ = agent.critic.forward(obs, critic_mem)
    v = agent.value(cfeats)
    verr = v - Tensor(ret)
    value_loss = (verr * verr * mask_t).sum() * (cfg.value_coef / denom)

    a_val, v_val = actor_loss.item(), value_loss.item()
    if not (np.isfinite(a_val) and np.isfinite(v_val)):
        return False

    agent.zero_grads()
    actor_loss.backward()
    value_loss.backward()
    if not _grads_finite(agent):
        return False
    clip_grad_norm([p for _, p in agent.actor_named()], cfg.max_grad_norm)
    clip_grad_norm([p for _, p in agent.critic_named()], cfg.max_grad_norm)
    agent.opt_actor.step(lr=lr)
    agent.opt_critic.step(lr=lr)

    stats["actor_loss"] += a_val
    stats["value_loss"] += v_val
    moved = np.abs(ratio.data - 1.0) > cfg.clip_epsilon
    stats["clip_fraction"] += float((moved * mask).sum() / denom)
    return True


def _zero_env_rows(memory, env_index):
    for item in memory:
        if isinstance(item, tuple):
            for a in item:
                a[env_index] = 0.0
        else:
            item[env_index] = 0.0


def _concat_memories(memories):
    """Merge per-segment memory selections into one batched memory."""
    if not memories:
        return []
    first = memories[0]
    out = []
    for block in range(len(first)):
        items = [m[block] for m in memories]
        if isinstance(first[block], tuple):
            out.append(
                tuple(
                    np.concatenate([it[j] for it in items], axis=0)
                    for j in range(len(first[block]))
                )
            )
        else:
            out.append(np.concatenate(items, axis=0))
    return out


def _grads_finite(agent):
    for _, p in agent.actor_named() + agent.critic_named():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return False
    return True


def _dict_diff(a, b, prefix=""):
    """Keys whose values differ between nested dicts, rendered as strings."""
    diffs = []
    for key in sorted(set(a) | set(b)):
        ka = a.get(key, "<missing>")
        kb = b.get(key, "<missing>")
        name = f"{prefix}{key}"
        if isinstance(ka, dict) and isinstance(kb, dict):
            diffs.extend(_dict_diff(ka, kb, prefix=name + "."))
        elif ka != kb:
            diffs.append(f"{name}: {ka!r} != {kb!r}")
    return diffs
