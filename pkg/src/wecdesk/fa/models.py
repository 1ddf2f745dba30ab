"""Sequence feature extractors with one shared interface, plus output heads.

Every backbone maps an observation sequence (batch, time, obs_dim) to a
feature sequence (batch, time, feature_dim) and threads an opaque memory
object through calls. Memory contents are plain numpy arrays, so nothing
upstream of the current call is ever differentiated through.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from . import tensor as T
from .tensor import Tensor
from .modules import (
    BLOCK_VARIANTS,
    Linear,
    LstmCell,
    Module,
    TransformerBlock,
)

BACKBONE_KINDS = ("fcn", "lstm") + BLOCK_VARIANTS


@dataclass
class ModelConfig:
    kind: str = "stable"
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_layers: int = 3
    memory_len: int = 32
    gate_bias_init: float = 2.0
    share_gate_params: bool = False
    outer_gate_only: bool = False

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(
                f"unknown backbone kind {self.kind!r}, expected one of {BACKBONE_KINDS}"
            )
        if self.d_model <= 0 or self.n_layers <= 0:
            raise ConfigError("d_model and n_layers must be positive")
        if self.memory_len < 0:
            raise ConfigError("memory_len must be >= 0")

    def to_dict(self):
        return {
            "kind": self.kind,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "n_layers": self.n_layers,
            "memory_len": self.memory_len,
            "gate_bias_init": self.gate_bias_init,
            "share_gate_params": self.share_gate_params,
            "outer_gate_only": self.outer_gate_only,
        }


class FcnBackbone(Module):
    """Stateless stack of affine + tanh layers."""

    def __init__(self, obs_dim, config, rng):
        self.feature_dim = config.d_model
        dims = [obs_dim] + [config.d_model] * config.n_layers
        self.layers = [
            Linear(dims[i], dims[i + 1], rng) for i in range(config.n_layers)
        ]

    def initial_memory(self, batch_size, fill="empty"):
        return []

    def trim_memory(self, memory):
        return []

    def forward(self, obs, memory, mask_memory=False, trim=True):
        h = obs if isinstance(obs, Tensor) else Tensor(obs)
        for layer in self.layers:
            h = layer(h).tanh()
        return h, []

    __call__ = forward


class LstmBackbone(Module):
    """Stacked LSTM unrolled over the time axis."""

    def __init__(self, obs_dim, config, rng):
        self.feature_dim = config.d_model
        self.cells = []
        in_dim = obs_dim
        for _ in range(config.n_layers):
            self.cells.append(LstmCell(in_dim, config.d_model, rng))
            in_dim = config.d_model

    def initial_memory(self, batch_size, fill="empty"):
        d = self.feature_dim
        return [
            (np.zeros((batch_size, d)), np.zeros((batch_size, d)))
            for _ in self.cells
        ]

    def trim_memory(self, memory):
        return [(h.copy(), c.copy()) for h, c in memory]

    def forward(self, obs, memory, mask_memory=False, trim=True):
        x = obs if isinstance(obs, Tensor) else Tensor(obs)
        b, t, _ = x.shape
        hidden = [Tensor(h) for h, _ in memory]
        cell = [Tensor(c) for _, c in memory]
        step_features = []
        for step in range(t):
            layer_in = x[:, step, :]
            for i, lstm in enumerate(self.cells):
                hidden[i], cell[i] = lstm(layer_in, hidden[i], cell[i])
                layer_in = hidden[i]
            step_features.append(layer_in)
        features = T.stack(step_features, axis=1)
        new_memory = [
            (h.data.copy(), c.data.copy()) for h, c in zip(hidden, cell)
        ]
        return features, new_memory

    __call__ = forward


class TransformerBackbone(Module):
    """Embedding plus a stack of attention blocks with rolling memory."""

    def __init__(self, obs_dim, config, rng):
        self.feature_dim = config.d_model
        self.memory_len = config.memory_len
        self.embed = Linear(obs_dim, config.d_model, rng)
        self.blocks = [
            TransformerBlock(
                config.kind,
                config.d_model,
                config.n_heads,
                config.d_ff,
                rng,
                gate_bias_init=config.gate_bias_init,
                share_gate_params=config.share_gate_params,
                outer_gate_only=config.outer_gate_only,
            )
            for _ in range(config.n_layers)
        ]

    def initial_memory(self, batch_size, fill="empty"):
        """Fresh memory: ``empty`` starts with no rows, ``zeros`` with a full
        window of zero rows (fixed-width memory so batches stay rectangular)."""
        rows = self.memory_len if fill == "zeros" else 0
        return [
            np.zeros((batch_size, rows, self.feature_dim)) for _ in self.blocks
        ]

    def trim_memory(self, memory):
        """Evict everything but the trailing memory window."""
        keep = self.memory_len
        return [
            (m[:, m.shape[1] - keep :] if keep and m.shape[1] > keep else
             (m[:, :0] if not keep else m)).copy()
            for m in memory
        ]

    def forward(self, obs, memory, mask_memory=False, trim=True):
        """``trim=False`` lets memory grow past its window; callers doing
        stepwise rollout within a training segment use that and trim at the
        segment boundary, so stepwise and whole-segment evaluation see the
        same attention context."""
        h = obs if isinstance(obs, Tensor) else Tensor(obs)
        h = self.embed(h)
        new_memory = []
        for block, mem in zip(self.blocks, memory):
            h, feed = block(h, Tensor(mem), mask_memory=mask_memory)
            rolled = np.concatenate([mem, feed.data], axis=1)
            if trim:
                keep = self.memory_len
                rolled = rolled[:, max(0, rolled.shape[1] - keep) :] if keep else rolled[:, :0]
            new_memory.append(rolled.copy())
        return h, new_memory

    __call__ = forward


def make_backbone(obs_dim, config, rng):
    if config.kind == "fcn":
        return FcnBackbone(obs_dim, config, rng)
    if config.kind == "lstm":
        return LstmBackbone(obs_dim, config, rng)
    return TransformerBackbone(obs_dim, config, rng)


def clone_memory(memory):
    """Deep-copy a backbone memory object (list of arrays or (h, c) pairs)."""
    out = []
    for item in memory:
        if isinstance(item, tuple):
            out.append(tuple(a.copy() for a in item))
        else:
            out.append(item.copy())
    return out


LOG_2PI = math.log(2.0 * math.pi)


class GaussianPolicyHead(Module):
    """Diagonal Gaussian action head: mean from features, global log-std."""

    def __init__(self, feature_dim, action_dim, rng, init_std=0.5):
        self.action_dim = action_dim
        self.mean_proj = Linear(feature_dim, action_dim, rng, gain=0.01)
        self.log_std = Tensor(
            np.full(action_dim, math.log(init_std)), requires_grad=True
        )

    def forward(self, features):
        return self.mean_proj(features)

    __call__ = forward

    def log_prob(self, mean, actions):
        """Log density of actions (same shape as mean), summed over the
        action axis."""
        actions = actions if isinstance(actions, Tensor) else Tensor(actions)
        inv_std = (-self.log_std).exp()
        z = (actions - mean) * inv_std
        per_dim = z * z * -0.5 - self.log_std - 0.5 * LOG_2PI
        return per_dim.sum(axis=-1)

    def entropy(self):
        """Entropy of the current action distribution (scalar Tensor)."""
        return self.log_std.sum() + 0.5 * self.action_dim * (LOG_2PI + 1.0)

    def sample(self, mean_values, rng):
        """Draw actions for numpy mean values; no graph is built."""
        std = np.exp(self.log_std.data)
        return mean_values + std * rng.standard_normal(mean_values.shape)


class ValueHead(Module):
    """Scalar state-value head."""

    def __init__(self, feature_dim, rng):
        self.proj = Linear(feature_dim, 1, rng, gain=1.0)

    def forward(self, features):
        out = self.proj(features)
        return out.reshape(out.shape[:-1])

    __call__ = forward
