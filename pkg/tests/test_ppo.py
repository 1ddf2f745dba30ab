"""Trainer, noise adaptation, and update-rule tests.

Expensive pieces (convergence on the real plant) live in the acceptance
suite; here the focus is exactness: recorded log-probs must match segment
re-evaluation, updates must be contained per agent, checkpoints must resume
bit-identically, and the clipped surrogate must obey its analytic bounds.
"""

import os
import shutil

import numpy as np
import pytest

from wecdesk.env import EnvConfig, ObsNormalizer, make_reward_config
from wecdesk.errors import CheckpointError, ConfigError
from wecdesk.fa import ModelConfig, Tensor, no_grad
from wecdesk.plant import load_plant_params
from wecdesk.ppo import (
    SIGMA_MAX,
    SIGMA_MIN,
    AgentNets,
    NoiseState,
    PpoConfig,
    RolloutBuffer,
    Trainer,
    adapt_noise,
    apply_perturbation,
    clipped_surrogate,
    compute_gae,
    run_ppo_update,
    sample_perturbation,
)
from wecdesk.ppo.trainer import _gather_memory
from wecdesk.spring_damper import SdParams


@pytest.fixture(scope="module")
def plant_params():
    return load_plant_params("desk6dof-v1")


SMALL_MODEL = ModelConfig(
    kind="stable", d_model=16, n_heads=2, d_ff=32, n_layers=2, memory_len=8
)


def _env_cfg(duration=12.8):
    return EnvConfig(tp=9.0, hs=2.0, mode="irregular", episode_duration=duration)


def _ppo_cfg(**over):
    base = dict(
        n_envs=2,
        rollout_length=32,
        segment_len=8,
        minibatch_size=32,
        total_steps=128,
        eval_duration=4.0,
        eval_episodes=1,
    )
    base.update(over)
    return PpoConfig(**base)


def _trainer(plant, seed=0, out_dir=None, model=SMALL_MODEL, env_cfg=None, **over):
    env_cfg = env_cfg or _env_cfg()
    reward_cfg = make_reward_config(plant, env_cfg.angle_deg, power_scale=1e4)
    sd = SdParams(np.full(3, 1e3), np.full(3, 5e4))
    norm = ObsNormalizer.identity(env_cfg.obs_size)
    return Trainer(
        plant,
        env_cfg,
        reward_cfg,
        model,
        _ppo_cfg(**over),
        sd,
        seed=seed,
        out_dir=out_dir,
        normalizer=norm,
    )


# ---------------------------------------------------------------- noise


def test_adapt_noise_directions():
    state = NoiseState(sigma=0.1, target_action_distance=0.5, adaptation_factor=1.05)
    grown = adapt_noise(state, 0.2)
    assert grown.sigma == pytest.approx(0.1 * 1.05, rel=1e-15)
    shrunk = adapt_noise(state, 0.9)
    assert shrunk.sigma == pytest.approx(0.1 / 1.05, rel=1e-15)
    # measured exactly at target counts as "far enough": shrink
    tie = adapt_noise(state, 0.5)
    assert tie.sigma == pytest.approx(0.1 / 1.05, rel=1e-15)


def test_adapt_noise_opposite_adaptations_are_inverse():
    state = NoiseState(sigma=0.37, target_action_distance=1.0, adaptation_factor=1.3)
    up = adapt_noise(state, 0.1)
    back = adapt_noise(up, 2.0)
    assert abs(back.sigma - state.sigma) < 1e-12


def test_adapt_noise_bounds_hold_forever():
    # worst case simulation: one million one-sided adaptations stay clamped
    state = NoiseState(sigma=0.5, target_action_distance=1.0, adaptation_factor=1.1)
    rng = np.random.default_rng(7)
    measured = rng.uniform(0.0, 2.0, size=1000)
    for m in measured:
        state = adapt_noise(state, float(m))
        assert SIGMA_MIN <= state.sigma <= SIGMA_MAX
    # directed floods in each direction
    lo = NoiseState(sigma=0.5, target_action_distance=1.0, adaptation_factor=2.0)
    hi = NoiseState(sigma=0.5, target_action_distance=1.0, adaptation_factor=2.0)
    for _ in range(60):  # 2**60 would dwarf the clamp range
        lo = adapt_noise(lo, 5.0)
        hi = adapt_noise(hi, 0.0)
    assert lo.sigma == SIGMA_MIN
    assert hi.sigma == SIGMA_MAX


def test_adapt_noise_rejects_negative_distance():
    state = NoiseState()
    with pytest.raises(ConfigError):
        adapt_noise(state, -0.1)


def test_noise_state_validation():
    with pytest.raises(ConfigError):
        NoiseState(sigma=0.0)
    with pytest.raises(ConfigError):
        NoiseState(adaptation_factor=1.0)


def test_zero_sigma_perturbation_leaves_means_identical(plant_params):
    tr = _trainer(plant_params, seed=11)
    obs = tr.start_episode_round()
    rng = np.random.default_rng(0)
    for agent, pert in zip(tr.agents, tr.perturbed):
        offsets = sample_perturbation(agent.actor_arrays(), 0.0, rng)
        assert all(np.all(v == 0.0) for v in offsets.values())
        pert.load_actor_arrays(apply_perturbation(agent.actor_arrays(), offsets))
    with no_grad():
        for i, (agent, pert) in enumerate(zip(tr.agents, tr.perturbed)):
            xa = obs[:, i, :][:, None, :]
            mem_a = agent.actor.initial_memory(2, fill="zeros")
            mem_p = pert.actor.initial_memory(2, fill="zeros")
            fa, _ = agent.actor.forward(xa, mem_a)
            fp, _ = pert.actor.forward(xa, mem_p)
            mean_a = agent.policy(fa).data
            mean_p = pert.policy(fp).data
            assert np.array_equal(mean_a, mean_p)


# ------------------------------------------------------------- collection


def test_buffer_accounting(plant_params):
    tr = _trainer(plant_params, seed=1)
    obs = tr.start_episode_round()
    buffers, _, _ = tr.collect_rollouts(obs)
    assert len(buffers) == 3
    for buf in buffers:
        assert buf.observations.shape[:2] == (32, 2)
        assert buf.actions.shape == (32, 2, 1)
        assert buf.log_probs.shape == (32, 2)
        assert buf.values.shape == (32, 2)
        assert buf.rewards.shape == (32, 2)
        assert buf.n_steps * buf.n_envs == 64
        # one memory snapshot per segment
        assert len(buf.actor_memories) == 32 // buf.segment_len
        assert len(buf.critic_memories) == 32 // buf.segment_len


@pytest.mark.parametrize("kind", ["fcn", "lstm", "stable"])
def test_recorded_log_probs_match_segment_reevaluation(plant_params, kind):
    model = ModelConfig(
        kind=kind, d_model=16, n_heads=2, d_ff=32, n_layers=2, memory_len=8
    )
    tr = _trainer(plant_params, seed=2, model=model)
    obs = tr.start_episode_round()
    buffers, _, _ = tr.collect_rollouts(obs)
    with no_grad():
        for agent, buf in zip(tr.agents, buffers):
            sl = buf.segment_len
            envs = np.arange(buf.n_envs)
            for s in range(buf.n_steps // sl):
                sl_rows = slice(s * sl, (s + 1) * sl)
                o = buf.observations[sl_rows].swapaxes(0, 1)
                a = buf.actions[sl_rows].swapaxes(0, 1)
                feats, _ = agent.actor.forward(
                    o, _gather_memory(buf.actor_memories[s], envs)
                )
                logp = agent.policy.log_prob(agent.policy(feats), a).data.T
                cfeats, _ = agent.critic.forward(
                    o, _gather_memory(buf.critic_memories[s], envs)
                )
                vals = agent.value(cfeats).data.T
                m = buf.valid[sl_rows] > 0
                assert np.abs(logp - buf.log_probs[sl_rows])[m].max() < 1e-10
                assert np.abs(vals - buf.values[sl_rows])[m].max() < 1e-8


def test_divergence_restarts_worker_and_masks_segment_tail(plant_params):
    import dataclasses

    # stiffness far past the integrator's stability limit blows up quickly
    bad = dataclasses.replace(
        plant_params, hydrostatic_stiffness=1e14 * np.eye(6)
    )
    tr = _trainer(bad, seed=3)
    obs = tr.start_episode_round()
    buffers, obs_after, _ = tr.collect_rollouts(obs)
    buf = buffers[0]
    assert buf.dones.any(), "expected at least one divergence restart"
    t, e = np.argwhere(buf.dones > 0)[0]
    seg_end = (t // buf.segment_len + 1) * buf.segment_len
    if t + 1 < seg_end:
        assert np.all(buf.valid[t + 1 : seg_end, e] == 0.0)
    # rewards at the divergence step are zeroed by the environment
    for b in buffers:
        assert b.rewards[t, e] == 0.0
    # collection continued to the full rollout length afterwards
    assert buf.n_steps == 32
    assert np.isfinite(obs_after).all()
    # masked steps are excluded from updates but the update still runs
    tr.compute_advantages(buffers)
    stats = tr.ppo_update(buffers)
    assert not stats["aborted"]


# ------------------------------------------------------------- surrogate


def test_clipped_surrogate_bound_and_ratio_one():
    rng = np.random.default_rng(5)
    ratio = Tensor(np.exp(rng.normal(0.0, 1.5, size=200)))
    adv = Tensor(rng.normal(0.0, 2.0, size=200))
    eps = 0.2
    losses = clipped_surrogate(ratio, adv, eps).data
    bound = (1.0 + eps) * np.abs(adv.data)
    assert np.all(np.abs(losses) <= bound + 1e-12)

    # at ratio exactly 1 the loss is -A and the gradient is the plain
    # policy-gradient estimator: d(-mean)/dlogp_i = -A_i / n
    n = 50
    adv_vals = rng.normal(size=n)
    logp_old = rng.normal(size=n)
    logp_new = Tensor(logp_old.copy(), requires_grad=True)
    ratio_t = (logp_new - Tensor(logp_old)).exp()
    loss = clipped_surrogate(ratio_t, Tensor(adv_vals), eps).sum() * (1.0 / n)
    assert loss.item() == pytest.approx(-adv_vals.mean(), abs=1e-12)
    loss.backward()
    assert np.allclose(logp_new.grad, -adv_vals / n, atol=1e-12)


def test_zero_advantages_give_zero_policy_gradient():
    rng = np.random.default_rng(6)
    logp_old = rng.normal(size=30)
    logp_new = Tensor(logp_old + rng.normal(0.0, 0.1, size=30), requires_grad=True)
    ratio = (logp_new - Tensor(logp_old)).exp()
    loss = clipped_surrogate(ratio, Tensor(np.zeros(30)), 0.2).sum()
    loss.backward()
    assert np.all(logp_new.grad == 0.0)


# ------------------------------------------------------------- bandit


def _analytic_quadratic_optimum(c0, c2, a0):
    # oracle: maximize c0 - c2 (a - a0)^2 over a dense grid, independent of
    # calculus on the training objective
    grid = np.linspace(-2.0, 2.0, 400001)
    vals = c0 - c2 * (grid - a0) ** 2
    k = int(np.argmax(vals))
    return grid[k], vals[k]


def test_quadratic_bandit_converges_within_one_percent():
    c0, c2, a0 = 1.0, 1.0, 0.4
    best_action, best_value = _analytic_quadratic_optimum(c0, c2, a0)
    assert best_action == pytest.approx(0.4, abs=1e-5)
    assert best_value == pytest.approx(1.0, abs=1e-9)

    cfg = PpoConfig(
        segment_len=1,
        minibatch_size=64,
        rollout_length=1,
        n_envs=64,
        total_steps=1,
        reward_scale=1.0,
    )
    model = ModelConfig(kind="fcn", d_model=16, n_layers=2)
    agent = AgentNets(3, model, np.random.default_rng(1))
    rng = np.random.default_rng(0)
    B = 64
    obs = np.zeros((1, B, 3))

    converged_at = None
    for update in range(2000):
        with no_grad():
            feats, _ = agent.actor.forward(
                obs[0][:, None, :], agent.actor.initial_memory(B, fill="zeros")
            )
            mean = agent.policy(feats).data[:, 0, :]
            act = agent.policy.sample(mean, rng)
            logp = agent.policy.log_prob(Tensor(mean), act).data
            cfeats, _ = agent.critic.forward(
                obs[0][:, None, :], agent.critic.initial_memory(B, fill="zeros")
            )
            val = agent.value(cfeats).data[:, 0]
        rew = c0 - c2 * (act[:, 0] - a0) ** 2
        buf = RolloutBuffer(
            observations=obs.copy(),
            actions=act[None],
            log_probs=logp[None],
            values=val[None],
            rewards=rew[None],
            dones=np.ones((1, B)),
            valid=np.ones((1, B)),
            bootstrap_values=np.zeros(B),
            actor_memories=[agent.actor.initial_memory(B, fill="zeros")],
            critic_memories=[agent.critic.initial_memory(B, fill="zeros")],
            segment_len=1,
        )
        buf.advantages, buf.returns = compute_gae(
            buf.rewards,
            buf.values,
            buf.bootstrap_values,
            buf.dones,
            cfg.discount_gamma,
            cfg.gae_lambda,
        )
        stats = run_ppo_update(
            [agent], [buf], cfg, lr=cfg.learning_rate, update_count=update
        )
        assert not stats["aborted"]
        achieved = c0 - c2 * (float(mean.mean()) - a0) ** 2
        if achieved >= 0.99 * best_value:
            converged_at = update
            break
    assert converged_at is not None and converged_at < 2000


# ------------------------------------------------------------- containment


def test_per_agent_update_separation_is_bitwise(plant_params):
    tr_a = _trainer(plant_params, seed=9)
    tr_b = _trainer(plant_params, seed=9)

    obs_a = tr_a.start_episode_round()
    bufs_a, _, _ = tr_a.collect_rollouts(obs_a)
    tr_a.compute_advantages(bufs_a)
    obs_b = tr_b.start_episode_round()
    bufs_b, _, _ = tr_b.collect_rollouts(obs_b)
    tr_b.compute_advantages(bufs_b)

    before_b = [agent.state_arrays() for agent in tr_b.agents]
    tr_a.ppo_update(bufs_a)  # all agents
    tr_b.ppo_update(bufs_b, agents=[1])  # only the second agent

    a1 = tr_a.agents[1].state_arrays()
    b1 = tr_b.agents[1].state_arrays()
    for key in a1:
        assert np.array_equal(a1[key], b1[key]), key
    for i in (0, 2):
        after = tr_b.agents[i].state_arrays()
        for key in after:
            assert np.array_equal(after[key], before_b[i][key]), (i, key)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_update_aborts_and_restores(plant_params):
    tr = _trainer(plant_params, seed=4)
    obs = tr.start_episode_round()
    buffers, _, _ = tr.collect_rollouts(obs)
    tr.compute_advantages(buffers)
    # overflow-scale returns drive the squared value error to +inf
    buffers[0].returns[:] = 1e200
    before = [agent.state_arrays() for agent in tr.agents]
    update_count = tr.update_count
    stats = tr.ppo_update(buffers)
    assert stats["aborted"]
    assert tr.update_count == update_count
    for agent, snap in zip(tr.agents, before):
        after = agent.state_arrays()
        for key in snap:
            assert np.array_equal(after[key], snap[key]), key


# ------------------------------------------------------------- lifecycle


def test_total_steps_zero_emits_initial_checkpoint(tmp_path, plant_params):
    out = str(tmp_path / "run0")
    tr = _trainer(plant_params, seed=5, out_dir=out, total_steps=0)
    rows = tr.train()
    assert rows == []
    assert tr.steps_done == 0
    assert os.path.exists(os.path.join(out, "checkpoint.bin"))
    with open(os.path.join(out, "metrics.csv"), encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert lines == ["step,agent,mean_reward,mean_power,yaw_rms,sd_power,gain_pct,sigma"]


def test_resume_continues_bit_identically(tmp_path, plant_params):
    out_a = str(tmp_path / "full")
    out_b = str(tmp_path / "split")
    tr_a = _trainer(plant_params, seed=6, out_dir=out_a, total_steps=192)
    tr_a.train()

    tr_b = _trainer(plant_params, seed=6, out_dir=out_b, total_steps=192)
    tr_b.train(max_rounds=1)
    tr_b2 = _trainer(plant_params, seed=6, out_dir=out_b, total_steps=192)
    tr_b2.train(resume_from=os.path.join(out_b, "checkpoint.bin"))

    for ag_a, ag_b in zip(tr_a.agents, tr_b2.agents):
        sa, sb = ag_a.state_arrays(), ag_b.state_arrays()
        for key in sa:
            assert np.array_equal(sa[key], sb[key]), key
    with open(os.path.join(out_a, "metrics.csv"), encoding="utf-8") as fa:
        rows_a = fa.read()
    with open(os.path.join(out_b, "metrics.csv"), encoding="utf-8") as fb:
        rows_b = fb.read()
    assert rows_a == rows_b
    assert tr_a.noise.sigma == tr_b2.noise.sigma
    assert tr_a.steps_done == tr_b2.steps_done


def test_corrupted_checkpoint_is_refused(tmp_path, plant_params):
    out = str(tmp_path / "corrupt")
    tr = _trainer(plant_params, seed=7, out_dir=out, total_steps=0)
    tr.train()
    path = os.path.join(out, "checkpoint.bin")
    blob = bytearray(open(path, "rb").read())
    blob[len(blob) // 2] ^= 0xFF
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
    tr2 = _trainer(plant_params, seed=7, out_dir=out, total_steps=0)
    with pytest.raises(CheckpointError):
        tr2.load_checkpoint(path)


def test_checkpoint_config_mismatch_names_difference(tmp_path, plant_params):
    out = str(tmp_path / "mismatch")
    tr = _trainer(plant_params, seed=8, out_dir=out, total_steps=0)
    tr.train()
    other = _trainer(plant_params, seed=8, out_dir=out, total_steps=64)
    with pytest.raises(ConfigError, match="total_steps"):
        other.load_checkpoint(os.path.join(out, "checkpoint.bin"))


def test_ppo_config_validation():
    with pytest.raises(ConfigError):
        PpoConfig(clip_epsilon=0.0)
    with pytest.raises(ConfigError):
        PpoConfig(discount_gamma=0.0)
    with pytest.raises(ConfigError):
        PpoConfig(gae_lambda=1.5)
    with pytest.raises(ConfigError):
        PpoConfig(minibatch_size=100, segment_len=32)
    with pytest.raises(ConfigError):
        PpoConfig(rollout_length=100, segment_len=32)
    cfg = PpoConfig(discount_gamma=0.9)
    assert cfg.reward_scale == pytest.approx(0.1)


def test_episode_must_align_with_rollouts(plant_params):
    env_cfg = EnvConfig(tp=9.0, hs=2.0, mode="irregular", episode_duration=10.0)
    # 50 steps is not a multiple of the 32-step rollout
    with pytest.raises(ConfigError, match="rollout_length"):
        _trainer(plant_params, env_cfg=env_cfg)
