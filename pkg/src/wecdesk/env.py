"""Multi-agent control environment around the three-tether plant.

Three agents, one per mooring leg, each commanding a scalar generator force
in [-1, 1] (scaled by the plant force limit). One control step holds the
forces over ``substeps`` physics steps. Rewards combine shared captured
power with a squared yaw penalty.

Observation layout per agent, before normalization (default 38 values):

    [0:6]    pose (surge, sway, heave, roll, pitch, yaw)
    [6:12]   velocity
    [12:18]  acceleration
    [18]     yaw (repeated as a dedicated sensor channel)
    [19:22]  tether extensions, own leg first
    [22:25]  tether extension rates, own leg first
    [25:35]  wave elevation and rate at the buoy position, at each preview
             offset (eta_0, rate_0, eta_1, rate_1, ...)
    [35:38]  own-leg one-hot
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels, plant as _plant
from .errors import ConfigError, LifecycleError
from .fa.checkpoint import load_checkpoint, save_checkpoint
from .waves import (
    WaveComponentSet, dispersion_wavenumber, make_wave_set, wave_fields_at,
)

WAVE_MODES = ("regular", "irregular", "spread")
# long-form name accepted for the long-crested random sea
WAVE_MODE_ALIASES = {"unidirectional-irregular": "irregular"}


@dataclass
class EnvConfig:
    """Episode and timing configuration."""

    tp: float = 9.0
    hs: float = 2.0
    mode: str = "irregular"
    angle_deg: float = 0.0
    control_dt: float = 0.2
    substeps: int = 4
    episode_duration: float = 2000.0
    preview_horizon: float = 10.0
    preview_samples: int = 5
    n_components: int = 64

    def __post_init__(self):
        self.mode = WAVE_MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in WAVE_MODES:
            raise ConfigError(f"unknown wave mode {self.mode!r}")
        if self.hs < 0:
            raise ConfigError("hs must be >= 0")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        expected = self.substeps * _plant.PHYSICS_DT
        if abs(self.control_dt - expected) > 1e-12:
            raise ConfigError(
                f"control_dt {self.control_dt} != substeps x physics dt {expected}"
            )
        steps = self.episode_duration / self.control_dt
        if abs(steps - round(steps)) > 1e-9 or steps < 1:
            raise ConfigError("episode_duration must be a whole number of control steps")
        if self.preview_samples < 1 or self.preview_horizon < 0:
            raise ConfigError("preview settings must be positive")

    @property
    def n_steps(self):
        return int(round(self.episode_duration / self.control_dt))

    @property
    def preview_offsets(self):
        if self.preview_samples == 1:
            return np.array([0.0])
        return np.linspace(0.0, self.preview_horizon, self.preview_samples)

    @property
    def obs_size(self):
        return 18 + 1 + 6 + 2 * self.preview_samples + 3


@dataclass
class RewardConfig:
    """Team-reward shaping constants."""

    eta_per_agent: np.ndarray
    alpha: float = 1.0
    yaw_scale: float = 0.1
    power_scale: float = 1.0

    def __post_init__(self):
        self.eta_per_agent = np.asarray(self.eta_per_agent, dtype=float).reshape(3)
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.yaw_scale <= 0 or self.power_scale <= 0:
            raise ConfigError("yaw_scale and power_scale must be positive")


def compute_reward(powers, yaw_rms, cfg, agent):
    """Per-agent reward from raw leg powers (W) and yaw RMS (rad).

    Own and teammate power are normalized by power_scale, combined with the
    agent's team coefficient, then blended with the squared yaw penalty by
    alpha. alpha = 1 is the pure power-sharing reward.
    """
    if agent not in (0, 1, 2):
        raise ConfigError(f"agent index {agent} out of range")
    powers = np.asarray(powers, dtype=float)
    p_own = powers[agent] / cfg.power_scale
    p_others = (powers.sum() - powers[agent]) / cfg.power_scale
    p_reward = p_own + cfg.eta_per_agent[agent] * p_others
    yaw_term = -((yaw_rms / cfg.yaw_scale) ** 2)
    if cfg.alpha == 1.0:
        return float(p_reward)
    return float(cfg.alpha * p_reward + (1.0 - cfg.alpha) * yaw_term)


def front_leg_index(plant_params, angle_deg):
    """Index of the leg whose anchor faces the incoming waves.

    Waves travel toward ``angle_deg``; they arrive from the opposite
    bearing, so the front leg is the one whose anchor bearing is closest to
    propagation + 180 degrees.
    """
    arrival = np.radians(angle_deg) + np.pi
    anchors = plant_params.anchor_positions
    bearings = np.arctan2(anchors[:, 1], anchors[:, 0])
    diff = np.angle(np.exp(1j * (bearings - arrival)))
    return int(np.argmin(np.abs(diff)))


def make_reward_config(
    plant_params,
    angle_deg,
    power_scale,
    alpha=1.0,
    eta_back=0.8,
    eta_front=-0.6,
    yaw_scale=0.1,
):
    """Reward config with the front leg identified from the wave heading."""
    eta = np.full(3, eta_back)
    eta[front_leg_index(plant_params, angle_deg)] = eta_front
    return RewardConfig(
        eta_per_agent=eta, alpha=alpha, yaw_scale=yaw_scale, power_scale=power_scale
    )


@dataclass
class ObsNormalizer:
    """Frozen per-dimension affine normalizer."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise ConfigError("normalizer mean/std shapes differ")
        if np.any(self.std <= 0):
            raise ConfigError("normalizer std must be positive")

    @classmethod
    def identity(cls, size):
        return cls(mean=np.zeros(size), std=np.ones(size))

    def apply(self, raw):
        return (raw - self.mean) / self.std

    def save(self, path):
        save_checkpoint(
            path, {"kind": "obs_normalizer", "size": int(self.mean.size)},
            {"mean": self.mean, "std": self.std},
        )

    @classmethod
    def load(cls, path):
        config, arrays = load_checkpoint(path)
        if config.get("kind") != "obs_normalizer":
            raise ConfigError(f"{path} is not an observation normalizer")
        return cls(mean=arrays["mean"], std=arrays["std"])


EPISODE_LOG_HEADER = "t,P1,P2,P3,Pm,yaw,r1,r2,r3,a1,a2,a3"


def write_episode_log(path, rows):
    """Write the per-step episode trace CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EPISODE_LOG_HEADER + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


class WecEnv:
    """Single three-agent episode environment."""

    def __init__(self, plant_params, env_config, reward_config, normalizer=None,
                 keep_log=False):
        self.plant = plant_params
        self.config = env_config
        self.reward_config = reward_config
        self.normalizer = normalizer or ObsNormalizer.identity(env_config.obs_size)
        if self.normalizer.mean.size != env_config.obs_size:
            raise ConfigError(
                f"normalizer size {self.normalizer.mean.size} != obs size "
                f"{env_config.obs_size}"
            )
        self.keep_log = keep_log
        # exact time bookkeeping on a millisecond grid
        self._dt_ms = int(round(env_config.control_dt * 1000.0))
        if abs(self._dt_ms / 1000.0 - env_config.control_dt) > 1e-12:
            raise ConfigError("control_dt must be a whole number of milliseconds")
        self.wave_set = None
        self._done = True
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed):
        """Start a fresh episode: new wave draw, plant at rest, t = 0."""
        cfg = self.config
        if cfg.hs == 0.0:
            # calm sea: one zero-amplitude component keeps the field code uniform
            omega = np.array([2.0 * np.pi / cfg.tp])
            self.wave_set = WaveComponentSet(
                amplitude=np.zeros(1), omega=omega,
                wavenumber=dispersion_wavenumber(omega),
                direction=np.array([np.radians(cfg.angle_deg)]),
                phase=np.zeros(1), seed=seed,
            )
        else:
            self.wave_set = make_wave_set(
                tp=cfg.tp, hs=cfg.hs, mode=cfg.mode, angle_deg=cfg.angle_deg,
                seed=seed, n_components=cfg.n_components,
            )
        self._wave_arrays = _plant._wave_arrays(self.wave_set)
        self._q = np.zeros(6)
        self._v = np.zeros(6)
        self._a = np.zeros(6)
        p = self.plant
        ext, jac = _plant._leg_geometry(
            self._q, p.anchor_positions, p.attachment_points, p.rest_lengths
        )
        self._ext = ext
        self._extvel = jac @ self._v
        self._step_count = 0
        self._done = False
        self._started = True
        self._diverged = False
        self._energy_exc = 0.0
        self._energy_damp = 0.0
        self._energy_legs = np.zeros(3)
        self._log_rows = []
        self._last_obs = self._observations()
        return self._last_obs

    @property
    def time(self):
        """Elapsed episode time in seconds, exact on the millisecond grid."""
        return (self._step_count * self._dt_ms) / 1000.0

    @property
    def done(self):
        return self._done

    @property
    def diverged(self):
        return self._diverged

    # -- observation assembly ------------------------------------------------

    def _observations(self):
        cfg = self.config
        eta, rate, _, _ = wave_fields_at(
            self.wave_set, float(self._q[0]), float(self._q[1]),
            self.time + cfg.preview_offsets,
        )
        preview = np.empty(2 * cfg.preview_samples)
        preview[0::2] = eta
        preview[1::2] = rate
        shared = np.concatenate(
            [self._q, self._v, self._a, [self._q[5]]]
        )
        obs = np.empty((3, cfg.obs_size))
        for agent in range(3):
            order = [agent, (agent + 1) % 3, (agent + 2) % 3]
            onehot = np.zeros(3)
            onehot[agent] = 1.0
            raw = np.concatenate(
                [shared, self._ext[order], self._extvel[order], preview, onehot]
            )
            obs[agent] = self.normalizer.apply(raw)
        return obs

    # -- stepping -----------------------------------------------------------

    def step(self, actions):
        """Apply three scaled force commands for one control interval."""
        if not self._started:
            raise LifecycleError("step() before reset()")
        if self._done:
            raise LifecycleError("step() after episode end; call reset()")
        actions = np.clip(np.asarray(actions, dtype=float).reshape(3), -1.0, 1.0)
        generator_forces = actions * self.plant.force_limit
        applied = -generator_forces

        p = self.plant
        q, v, a, _, ext, extvel, extracted, w_exc, w_damp, yaw_sq, ok = (
            kernels.run_control_step(
                self._q, self._v, self.time, _plant.PHYSICS_DT,
                self.config.substeps,
                p.inverse_mass, p.hydrostatic_stiffness, p.linear_damping,
                p.excitation_gain, p.anchor_positions, p.attachment_points,
                p.rest_lengths, p.locked_dofs, p.force_limit,
                *self._wave_arrays, applied,
            )
        )
        self._step_count += 1

        if ok:
            self._q, self._v, self._a = q, v, a
            self._ext, self._extvel = ext, extvel
            powers = extracted / self.config.control_dt
            yaw_rms = float(np.sqrt(yaw_sq / self.config.substeps))
            rewards = np.array(
                [
                    compute_reward(powers, yaw_rms, self.reward_config, agent)
                    for agent in range(3)
                ]
            )
            new_obs = self._observations()
            ok = bool(
                np.all(np.isfinite(new_obs)) and np.all(np.isfinite(rewards))
            )

        if not ok:
            # truncate: keep the last healthy observation, zero the rewards
            self._done = True
            self._diverged = True
            info = self._info(np.zeros(3), 0.0, applied)
            return self._last_obs, np.zeros(3), True, info

        self._energy_exc += w_exc
        self._energy_damp += w_damp
        self._energy_legs += extracted
        if self._step_count >= self.config.n_steps:
            self._done = True
        self._last_obs = new_obs
        info = self._info(powers, yaw_rms, applied)
        if self.keep_log:
            self._log_rows.append(
                [self.time, *powers, powers.mean(), yaw_rms, *rewards, *actions]
            )
        return self._last_obs, rewards, self._done, info

    def _info(self, powers, yaw_rms, applied):
        return {
            "t": self.time,
            "powers": powers.copy(),
            "mean_power": float(powers.mean()),
            "yaw_rms": yaw_rms,
            "pose": self._q.copy(),
            "velocity": self._v.copy(),
            "acceleration": self._a.copy(),
            "extension": self._ext.copy(),
            "extension_velocity": self._extvel.copy(),
            "held_forces": applied.copy(),
            "diverged": self._diverged,
            "energy": {
                "excitation": self._energy_exc,
                "damping": self._energy_damp,
                "extracted_per_leg": self._energy_legs.copy(),
                "extracted_total": float(self._energy_legs.sum()),
            },
        }

    def write_log(self, path):
        if not self.keep_log:
            raise ConfigError("episode logging was not enabled")
        write_episode_log(path, self._log_rows)


class VectorEnv:
    """A batch of independent environments stepped together."""

    def __init__(self, envs):
        if not envs:
            raise ConfigError("need at least one environment")
        self.envs = list(envs)

    def __len__(self):
        return len(self.envs)

    def reset(self, seeds):
        if len(seeds) != len(self.envs):
            raise ConfigError("one seed per environment required")
        return np.stack([e.reset(s) for e, s in zip(self.envs, seeds)])

    def step(self, actions):
        actions = np.asarray(actions, dtype=float)
        obs, rewards, dones, infos = [], [], [], []
        for env, act in zip(self.envs, actions):
            o, r, d, i = env.step(act)
            obs.append(o)
            rewards.append(r)
            dones.append(d)
            infos.append(i)
        return np.stack(obs), np.stack(rewards), np.array(dones), infos


def sd_actions(extension, extension_velocity, sd_params, force_limit):
    """Action triple reproducing a spring-damper law through the env
    interface: generator force k*e + c*v, normalized and clamped."""
    gen = (
        np.asarray(sd_params.spring_k) * extension
        + np.asarray(sd_params.damping_c) * extension_velocity
    )
    return np.clip(gen / force_limit, -1.0, 1.0)


def collect_observation_normalizer(
    plant_params, env_config, sd_params, episodes=10, base_seed=0
):
    """Frozen observation statistics from spring-damper warmup episodes.

    Pools raw observations of all three agents across the warmup and
    freezes their per-dimension mean and standard deviation. The trailing
    one-hot block is left untouched (mean 0, std 1).
    """
    count = 0
    total = np.zeros(env_config.obs_size)
    total_sq = np.zeros(env_config.obs_size)
    env = WecEnv(
        plant_params, env_config,
        RewardConfig(eta_per_agent=np.zeros(3), power_scale=1.0),
        normalizer=None,
    )
    for episode in range(episodes):
        obs = env.reset(base_seed + episode)
        ext = np.zeros(3)
        extvel = np.zeros(3)
        done = False
        while not done:
            for row in obs:
                total += row
                total_sq += row * row
                count += 1
            acts = sd_actions(ext, extvel, sd_params, plant_params.force_limit)
            obs, _, done, info = env.step(acts)
            ext = info["extension"]
            extvel = info["extension_velocity"]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.sqrt(var)
    # leave the one-hot block and any constant channel unnormalized
    mean[-3:] = 0.0
    std[-3:] = 1.0
    std[std < 1e-8] = 1.0
    return ObsNormalizer(mean=mean, std=std)
