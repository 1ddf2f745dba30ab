"""Neural building blocks on top of the autodiff engine.

All parameters are float64 Tensors with orthogonal weight init and zero
biases, except gate biases which start at a configurable positive value so
gated blocks open near the identity map.
"""

import numpy as np

from ..errors import ConfigError
from . import tensor as T
from .tensor import Tensor


def orthogonal(rng, shape, gain=1.0):
    """Orthogonal weight matrix via QR of a Gaussian draw."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Module:
    """Base with parameter discovery by attribute walk."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self):
        """Name -> ndarray view of every parameter, for checkpointing."""
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {missing[:3]}...")
        for name, p in own.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"parameter {name} shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()

    def copy_from(self, other):
        self.load_state_arrays(other.state_arrays())


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, gain=1.0, bias=True):
        self.weight = Tensor(orthogonal(rng, (in_dim, out_dim), gain), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def forward(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    __call__ = forward


class LayerNorm(Module):
    """Normalization over the last axis with trainable scale and shift."""

    def __init__(self, dim, eps=1e-5):
        self.scale = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = (var + self.eps) ** -0.5
        return centered * inv * self.scale + self.shift

    __call__ = forward


class GruGate(Module):
    """Gated residual combiner.

    Combines a stream value x with a sublayer output y:

        r = sigmoid(Wr y + Ur x)
        z = sigmoid(Wz y + Uz x - b)
        c = tanh(Wg y + Ug (r * x))
        out = (1 - z) * x + z * c

    A positive bias b drives z toward zero, so a freshly initialized gate
    passes x through nearly unchanged. The update and candidate matrices
    start at zero so the update preactivation is exactly -b and the
    candidate exactly 0; each gate then deviates from the identity by the
    factor sigmoid(-b) and nothing more, which keeps whole stacks of gated
    blocks near-identity instead of leaking through preactivation tails.
    Reset matrices start orthogonal; they only act once the candidate
    matrices move away from zero.
    """

    def __init__(self, dim, rng, bias_init=2.0):
        def zero():
            return Tensor(np.zeros((dim, dim)), requires_grad=True)

        def ortho():
            return Tensor(orthogonal(rng, (dim, dim)), requires_grad=True)

        self.reset_from_update = ortho()
        self.reset_from_stream = ortho()
        self.gate_from_update = zero()
        self.gate_from_stream = zero()
        self.cand_from_update = zero()
        self.cand_from_stream = zero()
        self.gate_bias = Tensor(np.full(dim, float(bias_init)), requires_grad=True)

    def forward(self, stream, update):
        r = (update @ self.reset_from_update + stream @ self.reset_from_stream).sigmoid()
        z = (
            update @ self.gate_from_update
            + stream @ self.gate_from_stream
            - self.gate_bias
        ).sigmoid()
        c = (update @ self.cand_from_update + (r * stream) @ self.cand_from_stream).tanh()
        return (1.0 - z) * stream + z * c

    __call__ = forward


def sinusoid_table(n_positions, dim):
    """Fixed sinusoidal embeddings of relative distances 0..n_positions-1."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    inv_freq = 1.0 / (10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim))
    angles = pos * inv_freq[None, :]
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dim - dim // 2])
    return table


class RelativeMultiHeadAttention(Module):
    """Causal multi-head attention over (memory + current) with relative
    position scores.

    Queries come from the current slice only; keys and values cover the
    stored memory rows followed by the current slice. Scores combine a
    content term and a distance term, each with its own learned global bias,
    scaled by 1/sqrt(head_dim).
    """

    def __init__(self, d_model, n_heads, rng):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.query_proj = Linear(d_model, d_model, rng, bias=False)
        self.key_proj = Linear(d_model, d_model, rng, bias=False)
        self.value_proj = Linear(d_model, d_model, rng, bias=False)
        self.out_proj = Linear(d_model, d_model, rng, bias=False)
        self.distance_proj = Linear(d_model, d_model, rng, bias=False)
        self.content_bias = Tensor(np.zeros((n_heads, self.head_dim)), requires_grad=True)
        self.distance_bias = Tensor(np.zeros((n_heads, self.head_dim)), requires_grad=True)
        self.last_weights = None

    def _split_heads(self, x, length):
        # (B, L, D) -> (B, H, L, head_dim)
        b = x.shape[0]
        return x.reshape(b, length, self.n_heads, self.head_dim).transpose((0, 2, 1, 3))

    def forward(self, current, context, mask_memory=False):
        """current: (B, T, D) queries; context: (B, S, D) keys/values with
        the first S-T rows being memory."""
        b, t, d = current.shape
        s = context.shape[1]
        mem_len = s - t

        q = self._split_heads(self.query_proj(current), t)
        k = self._split_heads(self.key_proj(context), s)
        v = self._split_heads(self.value_proj(context), s)

        # distance embeddings for every possible query-key offset
        table = Tensor(sinusoid_table(s, d))
        rel = self.distance_proj(table)  # (S, D)
        rel = rel.reshape(s, self.n_heads, self.head_dim).transpose((1, 0, 2))

        u = self.content_bias.reshape(1, self.n_heads, 1, self.head_dim)
        w = self.distance_bias.reshape(1, self.n_heads, 1, self.head_dim)

        content = (q + u) @ k.swapaxes(-1, -2)  # (B, H, T, S)

        # score against every distance, then gather the (query, key) layout
        by_distance = (q + w) @ rel.swapaxes(-1, -2)  # (B, H, T, S_dist)
        query_abs = mem_len + np.arange(t)[:, None]  # (T, 1)
        key_abs = np.arange(s)[None, :]  # (1, S)
        distance = query_abs - key_abs  # (T, S)
        allowed = distance >= 0
        if mask_memory:
            allowed = allowed & (key_abs >= mem_len)
        t_index = np.broadcast_to(np.arange(t)[:, None], (t, s))
        gathered = by_distance[
            (slice(None), slice(None), t_index, np.maximum(distance, 0))
        ]

        scores = (content + gathered) * (1.0 / np.sqrt(self.head_dim))
        scores = T.where(allowed, scores, Tensor(np.float64(-1e30)))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data.copy()

        mixed = weights @ v  # (B, H, T, head_dim)
        merged = mixed.transpose((0, 2, 1, 3)).reshape(b, t, d)
        return self.out_proj(merged)

    __call__ = forward


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng):
        self.expand = Linear(d_model, d_ff, rng)
        self.contract = Linear(d_ff, d_model, rng)

    def forward(self, x):
        return self.contract(self.expand(x).relu())

    __call__ = forward


BLOCK_VARIANTS = ("plain", "identity", "gated", "stable")


class TransformerBlock(Module):
    """One attention + feedforward block in one of four wirings.

    plain     post-norm residual block; memory stores the raw input stream.
    identity  pre-norm with ReLU on each sublayer output before the
              residual add; memory stores the normalized slice.
    gated     identity wiring with gated residual combiners in place of
              both adds.
    stable    gated wiring plus an outer gate combining the block input
              with the ReLU of the block result. outer_gate_only downgrades
              the two inner gates back to plain residual adds.
    """

    def __init__(
        self,
        variant,
        d_model,
        n_heads,
        d_ff,
        rng,
        gate_bias_init=2.0,
        share_gate_params=False,
        outer_gate_only=False,
    ):
        if variant not in BLOCK_VARIANTS:
            raise ConfigError(f"unknown block variant {variant!r}")
        self.variant = variant
        self.attention = RelativeMultiHeadAttention(d_model, n_heads, rng)
        self.feedforward = FeedForward(d_model, d_ff, rng)
        self.norm_attn = LayerNorm(d_model)
        self.norm_ff = LayerNorm(d_model)
        self.gate_attn = None
        self.gate_ff = None
        self.gate_block = None
        inner_gates = variant == "gated" or (variant == "stable" and not outer_gate_only)
        if inner_gates:
            self.gate_attn = GruGate(d_model, rng, bias_init=gate_bias_init)
            self.gate_ff = (
                self.gate_attn
                if share_gate_params
                else GruGate(d_model, rng, bias_init=gate_bias_init)
            )
        if variant == "stable":
            if share_gate_params and inner_gates:
                self.gate_block = self.gate_attn
            else:
                self.gate_block = GruGate(d_model, rng, bias_init=gate_bias_init)

    def named_parameters(self, prefix=""):
        # shared gates alias the same object; emit each parameter once
        seen = set()
        for name, p in super().named_parameters(prefix=prefix):
            if id(p) in seen:
                continue
            seen.add(id(p))
            yield name, p

    def forward(self, x, memory, mask_memory=False):
        """x: (B, T, D); memory: (B, M, D) constant. Returns
        (output, memory_feed) where memory_feed is what this block
        contributes to the rolling memory."""
        if self.variant == "plain":
            kv = T.concat([memory, x], axis=1) if memory.shape[1] else x
            attended = self.attention(x, kv, mask_memory=mask_memory)
            h = self.norm_attn(x + attended)
            out = self.norm_ff(h + self.feedforward(h))
            return out, x

        normed = self.norm_attn(x)
        kv = T.concat([memory, normed], axis=1) if memory.shape[1] else normed
        attn_update = self.attention(normed, kv, mask_memory=mask_memory).relu()
        if self.gate_attn is not None:
            stream = self.gate_attn(x, attn_update)
        else:
            stream = x + attn_update
        ff_update = self.feedforward(self.norm_ff(stream)).relu()
        if self.gate_ff is not None:
            out = self.gate_ff(stream, ff_update)
        else:
            out = stream + ff_update
        if self.variant == "stable":
            out = self.gate_block(x, out.relu())
        return out, normed

    __call__ = forward


class LstmCell(Module):
    """Standard LSTM cell, gate order (input, forget, candidate, output)."""

    def __init__(self, in_dim, hidden_dim, rng):
        self.hidden_dim = hidden_dim
        self.input_weights = Tensor(
            orthogonal(rng, (in_dim, 4 * hidden_dim)), requires_grad=True
        )
        self.state_weights = Tensor(
            orthogonal(rng, (hidden_dim, 4 * hidden_dim)), requires_grad=True
        )
        self.gate_biases = Tensor(np.zeros(4 * hidden_dim), requires_grad=True)

    def forward(self, x, hidden, cell):
        n = self.hidden_dim
        pre = x @ self.input_weights + hidden @ self.state_weights + self.gate_biases
        in_gate = pre[:, 0:n].sigmoid()
        forget_gate = pre[:, n : 2 * n].sigmoid()
        candidate = pre[:, 2 * n : 3 * n].tanh()
        out_gate = pre[:, 3 * n : 4 * n].sigmoid()
        new_cell = forget_gate * cell + in_gate * candidate
        new_hidden = out_gate * new_cell.tanh()
        return new_hidden, new_cell

    __call__ = forward
