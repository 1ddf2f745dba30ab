"""Run configuration: INI files with [waves] [plant] [reward] [model] [ppo].

A run config fully determines a training run apart from the seed and output
directory. Every key has a default, so an empty file (or no file) is valid.
Environment variables named WECDESK_<SECTION>_<KEY> override file values,
e.g. WECDESK_PPO_TOTAL_STEPS=200000.
"""

import configparser
import os

from .env import EnvConfig, make_reward_config
from .errors import ConfigError
from .fa import ModelConfig
from .plant import load_plant_params
from .ppo import PpoConfig

ENV_PREFIX = "WECDESK_"

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _float(text):
    return float(text)


def _int(text):
    return int(text)


def _bool(text):
    low = str(text).strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text):
    return str(text).strip()


def _opt_float(text):
    text = str(text).strip()
    return None if text == "" else float(text)


# (default, converter) per key; section order mirrors the file layout
SCHEMA = {
    "waves": {
        "tp": (9.0, _float),
        "hs": (2.0, _float),
        "mode": ("irregular", _str),
        "angle_deg": (0.0, _float),
        "n_components": (64, _int),
        "episode_duration": (2000.0, _float),
        "control_dt": (0.2, _float),
        "substeps": (4, _int),
        "preview_horizon": (10.0, _float),
        "preview_samples": (5, _int),
    },
    "plant": {
        "name": ("desk6dof-v1", _str),
    },
    "reward": {
        "alpha": (1.0, _float),
        "eta_front": (-0.6, _float),
        "eta_back": (0.8, _float),
        "power_scale": (1e4, _float),
        "yaw_scale": (0.1, _float),
    },
    "model": {
        "kind": ("stable", _str),
        "d_model": (64, _int),
        "n_heads": (4, _int),
        "d_ff": (128, _int),
        "n_layers": (3, _int),
        "memory_len": (32, _int),
        "gate_bias_init": (2.0, _float),
        "share_gate_params": (False, _bool),
        "outer_gate_only": (False, _bool),
    },
    "ppo": {
        "clip_epsilon": (0.2, _float),
        "learning_rate": (3e-4, _float),
        "lr_floor": (1e-6, _float),
        "gae_lambda": (0.95, _float),
        "discount_gamma": (0.99, _float),
        "epochs_per_update": (4, _int),
        "minibatch_size": (256, _int),
        "segment_len": (32, _int),
        "rollout_length": (128, _int),
        "entropy_coef": (0.0, _float),
        "value_coef": (0.5, _float),
        "max_grad_norm": (0.5, _float),
        "n_envs": (16, _int),
        "total_steps": (100_000, _int),
        "reward_scale": (None, _opt_float),
        "init_action_std": (0.5, _float),
        "noise_sigma": (0.05, _float),
        "noise_target_distance": (0.1, _float),
        "noise_adaptation": (1.01, _float),
        "eval_episodes": (1, _int),
        "eval_duration": (None, _opt_float),
        "checkpoint_every": (1, _int),
    },
}


def default_run_config():
    return {
        section: {key: spec[0] for key, spec in keys.items()}
        for section, keys in SCHEMA.items()
    }


def _apply(cfg, section, key, raw, origin):
    if section not in SCHEMA:
        raise ConfigError(f"{origin}: unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key '{key}' in section [{section}]")
    converter = SCHEMA[section][key][1]
    try:
        cfg[section][key] = converter(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            f"{origin}: bad value for [{section}] {key}: {raw!r} ({exc})"
        ) from exc


def load_run_config(path=None, environ=None):
    """Defaults, overlaid with the INI file, overlaid with env vars."""
    cfg = default_run_config()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(cfg, section.lower(), key.lower(), raw, path)
    environ = os.environ if environ is None else environ
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        parts = rest.split("_", 1)
        if len(parts) != 2:
            continue
        section = parts[0].lower()
        if section not in SCHEMA:
            continue  # other WECDESK_ vars (e.g. backend selection) are not ours
        key = parts[1].lower()
        _apply(cfg, section, key, raw, f"environment variable {name}")
    return cfg


def write_run_config(path, cfg):
    """Emit a config dict back to INI (used for run manifests)."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in cfg.items():
        parser[section] = {
            k: ("" if v is None else str(v)) for k, v in keys.items()
        }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def build_components(cfg):
    """Instantiate the typed configs a Trainer needs from a run config."""
    w = cfg["waves"]
    plant = load_plant_params(cfg["plant"]["name"])
    env_config = EnvConfig(
        tp=w["tp"],
        hs=w["hs"],
        mode=w["mode"],
        angle_deg=w["angle_deg"],
        control_dt=w["control_dt"],
        substeps=w["substeps"],
        episode_duration=w["episode_duration"],
        preview_horizon=w["preview_horizon"],
        preview_samples=w["preview_samples"],
        n_components=w["n_components"],
    )
    r = cfg["reward"]
    reward_config = make_reward_config(
        plant,
        w["angle_deg"],
        power_scale=r["power_scale"],
        alpha=r["alpha"],
        eta_back=r["eta_back"],
        eta_front=r["eta_front"],
        yaw_scale=r["yaw_scale"],
    )
    m = cfg["model"]
    model_config = ModelConfig(
        kind=m["kind"],
        d_model=m["d_model"],
        n_heads=m["n_heads"],
        d_ff=m["d_ff"],
        n_layers=m["n_layers"],
        memory_len=m["memory_len"],
        gate_bias_init=m["gate_bias_init"],
        share_gate_params=m["share_gate_params"],
        outer_gate_only=m["outer_gate_only"],
    )
    ppo_config = PpoConfig(**cfg["ppo"])
    return plant, env_config, reward_config, model_config, ppo_config
