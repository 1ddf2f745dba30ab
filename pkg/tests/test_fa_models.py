"""Model-level gradient, determinism, and persistence tests."""

import numpy as np
import pytest

from fd_oracle import check_param_grads

from wecdesk.errors import CheckpointError, ConfigError
from wecdesk.fa.tensor import Tensor
from wecdesk.fa.models import (
    BACKBONE_KINDS,
    GaussianPolicyHead,
    ModelConfig,
    ValueHead,
    make_backbone,
)
from wecdesk.fa.checkpoint import (
    array_to_rng_state,
    load_checkpoint,
    rng_state_to_array,
    save_checkpoint,
)
from wecdesk.fa.optim import Adam, clip_grad_norm, global_grad_norm


def _small_config(kind):
    return ModelConfig(
        kind=kind, d_model=8, n_heads=2, d_ff=12, n_layers=2, memory_len=6,
        gate_bias_init=0.8,
    )


def _perturb(model, rng, scale=0.25):
    for p in model.parameters():
        p.data = p.data + rng.normal(size=p.data.shape) * scale


@pytest.mark.parametrize("kind", BACKBONE_KINDS)
def test_every_backbone_matches_finite_differences(kind):
    """Central-difference check on every parameter of every approximator."""
    rng = np.random.default_rng(1)
    model = make_backbone(5, _small_config(kind), rng)
    _perturb(model, rng)
    obs = Tensor(rng.normal(size=(2, 4, 5)))
    memory = model.initial_memory(2)

    def loss():
        feats, _ = model(obs, memory)
        return (feats ** 2).sum() * 0.5

    loss().backward()
    worst = check_param_grads(loss, model.parameters(), tol=1e-4)
    assert worst < 1e-4


def test_full_stable_stack_gradient_check():
    """Depth-2, width-8 stack of the gated-with-outer-gate variant,
    including heads, against finite differences."""
    rng = np.random.default_rng(2)
    cfg = ModelConfig(kind="stable", d_model=8, n_heads=2, d_ff=12,
                      n_layers=2, memory_len=4, gate_bias_init=0.8)
    model = make_backbone(6, cfg, rng)
    policy = GaussianPolicyHead(8, 1, rng)
    value = ValueHead(8, rng)
    _perturb(model, rng)
    _perturb(policy, rng)
    _perturb(value, rng)

    obs = Tensor(rng.normal(size=(2, 3, 6)))
    actions = rng.normal(size=(2, 3, 1))
    # memory from a previous segment so attention sees stored rows
    with_memory = model.initial_memory(2)
    _, with_memory = model(Tensor(rng.normal(size=(2, 3, 6))), with_memory)

    def loss():
        feats, _ = model(obs, with_memory)
        lp = policy.log_prob(policy(feats), actions)
        val = value(feats)
        return lp.sum() + (val ** 2).sum() + policy.entropy()

    loss().backward()
    params = model.parameters() + policy.parameters() + value.parameters()
    worst = check_param_grads(loss, params, tol=1e-4)
    assert worst < 1e-4


@pytest.mark.parametrize("kind", BACKBONE_KINDS)
def test_identical_seed_identical_outputs(kind):
    obs = np.random.default_rng(9).normal(size=(2, 5, 4))
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(77)
        model = make_backbone(4, _small_config(kind), rng)
        feats, _ = model(obs, model.initial_memory(2))
        outs.append(feats.data)
    assert np.array_equal(outs[0], outs[1])


def test_all_backbones_are_shape_interchangeable():
    """Same inputs and config widths, identically shaped outputs."""
    rng = np.random.default_rng(3)
    obs = rng.normal(size=(3, 7, 5))
    shapes = set()
    for kind in BACKBONE_KINDS:
        model = make_backbone(5, _small_config(kind), rng)
        feats, memory = model(obs, model.initial_memory(3))
        shapes.add(feats.shape)
        # a second call with the returned memory must also work
        feats2, _ = model(obs, memory)
        assert feats2.shape == feats.shape
    assert shapes == {(3, 7, 8)}


def test_transformer_rejects_bad_config():
    with pytest.raises(ConfigError):
        ModelConfig(kind="quantum")
    with pytest.raises(ConfigError):
        ModelConfig(memory_len=-1)
    with pytest.raises(ConfigError):
        make_backbone(4, ModelConfig(kind="stable", d_model=6, n_heads=4), np.random.default_rng(0))


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(4)
    model = make_backbone(5, _small_config("stable"), rng)
    _perturb(model, rng)
    path = tmp_path / "model.ckpt"
    config = {"kind": "stable", "note": "round trip"}
    save_checkpoint(path, config, model.state_arrays())

    loaded_cfg, arrays = load_checkpoint(path)
    assert loaded_cfg == config
    original = model.state_arrays()
    assert set(arrays) == set(original)
    for name in original:
        assert np.array_equal(arrays[name], original[name]), name

    # loading into a fresh model reproduces outputs bitwise
    clone = make_backbone(5, _small_config("stable"), np.random.default_rng(5))
    clone.load_state_arrays(arrays)
    obs = rng.normal(size=(2, 3, 5))
    a, _ = model(obs, model.initial_memory(2))
    b, _ = clone(obs, clone.initial_memory(2))
    assert np.array_equal(a.data, b.data)

    # a second save of identical content is byte-identical
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, config, model.state_arrays())
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, {"v": 1}, {"w": np.arange(6.0).reshape(2, 3)})
    blob = bytearray(path.read_bytes())
    blob[30] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="integrity"):
        load_checkpoint(path)

    bad_magic = tmp_path / "m.ckpt"
    bad_magic.write_bytes(b"NOTAFILE" + bytes(16))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad_magic)

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_rng_state_survives_float64_round_trip():
    rng = np.random.default_rng(123)
    rng.standard_normal(17)  # advance off the seed point
    snapshot = rng_state_to_array(rng)
    expected = rng.standard_normal(8)

    fresh = np.random.default_rng(0)
    array_to_rng_state(fresh, snapshot)
    assert np.array_equal(fresh.standard_normal(8), expected)


def test_policy_head_log_prob_matches_closed_form():
    rng = np.random.default_rng(6)
    head = GaussianPolicyHead(4, 2, rng, init_std=0.7)
    feats = Tensor(rng.normal(size=(3, 5, 4)))
    mean = head(feats)
    actions = rng.normal(size=(3, 5, 2))
    lp = head.log_prob(mean, actions).data

    std = np.exp(head.log_std.data)
    z = (actions - mean.data) / std
    expected = (-0.5 * z * z - np.log(std) - 0.5 * np.log(2 * np.pi)).sum(axis=-1)
    assert np.max(np.abs(lp - expected)) < 1e-12

    # entropy of a diagonal Gaussian in closed form
    ent = float(head.entropy().data)
    expected_ent = float(np.sum(np.log(std) + 0.5 * np.log(2 * np.pi * np.e)))
    assert abs(ent - expected_ent) < 1e-12


def test_adam_minimizes_quadratic_and_clips():
    rng = np.random.default_rng(7)
    target = rng.normal(size=(4,))
    w = Tensor(np.zeros(4), requires_grad=True)
    opt = Adam([("w", w)], lr=0.05)
    for _ in range(400):
        w.grad = None
        loss = ((w - Tensor(target)) ** 2).sum()
        loss.backward()
        opt.step()
    assert np.max(np.abs(w.data - target)) < 1e-3

    w.grad = np.full(4, 10.0)
    norm = clip_grad_norm([w], 1.0)
    assert norm == pytest.approx(20.0)
    assert global_grad_norm([w]) == pytest.approx(1.0, rel=1e-9)


def test_adam_state_round_trip_resumes_identically(tmp_path):
    rng = np.random.default_rng(8)
    target = rng.normal(size=(3,))

    def run(steps, opt, w):
        for _ in range(steps):
            w.grad = None
            (((w - Tensor(target)) ** 2).sum()).backward()
            opt.step()

    w1 = Tensor(np.zeros(3), requires_grad=True)
    opt1 = Adam([("w", w1)], lr=0.03)
    run(10, opt1, w1)
    saved = {"w": w1.data.copy()}
    saved.update(opt1.state_arrays())
    run(5, opt1, w1)

    w2 = Tensor(saved["w"].copy(), requires_grad=True)
    opt2 = Adam([("w", w2)], lr=0.03)
    opt2.load_state_arrays(saved)
    run(5, opt2, w2)
    assert np.array_equal(w1.data, w2.data)
