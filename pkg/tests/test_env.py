"""Multi-agent environment: rewards, lifecycle, observations, energy accounting."""

import dataclasses

import numpy as np
import pytest

from wecdesk import plant as P
from wecdesk.env import (
    EnvConfig,
    ObsNormalizer,
    RewardConfig,
    VectorEnv,
    WecEnv,
    collect_observation_normalizer,
    compute_reward,
    front_leg_index,
    make_reward_config,
    sd_actions,
    write_episode_log,
    EPISODE_LOG_HEADER,
)
from wecdesk.errors import ConfigError, LifecycleError
from wecdesk.spring_damper import SdParams
from wecdesk.waves import wave_fields_at


@pytest.fixture(scope="module")
def plant_params():
    return P.load_plant_params("desk6dof-v1")


def _cfg(**kw):
    base = dict(tp=9.0, hs=2.0, mode="irregular", episode_duration=20.0)
    base.update(kw)
    return EnvConfig(**base)


def _reward_cfg(**kw):
    base = dict(eta_per_agent=np.array([0.8, 0.8, 0.8]), power_scale=1e4)
    base.update(kw)
    return RewardConfig(**base)


# -- reward arithmetic -------------------------------------------------------


def test_reward_back_leg_team_coefficient():
    cfg = RewardConfig(eta_per_agent=[0.8, 0.8, 0.8], alpha=1.0, power_scale=2.0)
    # each leg produces 2 W so normalized powers are (1, 1, 1)
    r = compute_reward(np.array([2.0, 2.0, 2.0]), 0.5, cfg, 0)
    assert r == pytest.approx(2.6, abs=1e-12)


def test_reward_front_leg_negative_coefficient():
    cfg = RewardConfig(eta_per_agent=[-0.6, 0.8, 0.8], alpha=1.0, power_scale=1.0)
    r = compute_reward(np.array([1.0, 1.0, 1.0]), 0.0, cfg, 0)
    assert r == pytest.approx(-0.2, abs=1e-12)


def test_reward_yaw_penalty_blend():
    # alpha 0.2 with normalized team power 1 and yaw term -4
    cfg = RewardConfig(eta_per_agent=[0.0, 0.0, 0.0], alpha=0.2, yaw_scale=0.1,
                       power_scale=1.0)
    r = compute_reward(np.array([1.0, 0.0, 0.0]), 0.2, cfg, 0)
    assert r == pytest.approx(-3.0, abs=1e-12)


def test_reward_symmetry_between_equal_agents():
    cfg = RewardConfig(eta_per_agent=[0.8, 0.8, -0.6], alpha=0.7, power_scale=3.0)
    powers = np.array([5.0, 5.0, 2.0])
    assert compute_reward(powers, 0.3, cfg, 0) == compute_reward(powers, 0.3, cfg, 1)


def test_reward_alpha_one_ignores_yaw_exactly():
    cfg = RewardConfig(eta_per_agent=[0.8, 0.8, 0.8], alpha=1.0, power_scale=7.0)
    powers = np.array([3.0, -1.0, 2.5])
    calm = compute_reward(powers, 0.0, cfg, 1)
    stormy = compute_reward(powers, 123.456, cfg, 1)
    assert calm == stormy


def test_reward_rejects_bad_agent_and_alpha():
    cfg = _reward_cfg()
    with pytest.raises(ConfigError):
        compute_reward(np.zeros(3), 0.0, cfg, 3)
    with pytest.raises(ConfigError):
        RewardConfig(eta_per_agent=np.zeros(3), alpha=0.0, power_scale=1.0)
    with pytest.raises(ConfigError):
        RewardConfig(eta_per_agent=np.zeros(3), alpha=1.2, power_scale=1.0)


def test_front_leg_tracks_wave_heading(plant_params):
    # waves toward +x arrive from -x: leg 0 (anchor on the -x side) is front
    assert front_leg_index(plant_params, 0.0) == 0
    # waves toward -120 deg arrive from +60 deg: leg 1 anchor sits there
    assert front_leg_index(plant_params, -120.0) == 1
    assert front_leg_index(plant_params, 120.0) == 2
    rc = make_reward_config(plant_params, 0.0, power_scale=1e4)
    assert rc.eta_per_agent[0] == -0.6
    assert rc.eta_per_agent[1] == rc.eta_per_agent[2] == 0.8


# -- config validation -------------------------------------------------------


def test_env_config_validation():
    with pytest.raises(ConfigError):
        _cfg(mode="choppy")
    with pytest.raises(ConfigError):
        _cfg(control_dt=0.3)  # not substeps x physics dt
    with pytest.raises(ConfigError):
        _cfg(episode_duration=20.1)  # not integral in control steps
    longname = _cfg(mode="unidirectional-irregular")
    assert longname.mode == "irregular"
    assert _cfg().obs_size == 38
    offs = _cfg().preview_offsets
    assert np.array_equal(offs, [0.0, 2.5, 5.0, 7.5, 10.0])


# -- lifecycle ---------------------------------------------------------------


def test_reset_is_deterministic(plant_params):
    env_a = WecEnv(plant_params, _cfg(), _reward_cfg())
    env_b = WecEnv(plant_params, _cfg(), _reward_cfg())
    oa = env_a.reset(42)
    ob = env_b.reset(42)
    assert np.array_equal(oa, ob)
    # and stepping with equal actions stays identical
    acts = np.array([0.3, -0.2, 0.1])
    for _ in range(5):
        sa = env_a.step(acts)
        sb = env_b.step(acts)
        assert np.array_equal(sa[0], sb[0])
        assert np.array_equal(sa[1], sb[1])
    assert not np.array_equal(oa, env_a.reset(43))


def test_rest_pose_has_zero_raw_extensions(plant_params):
    env = WecEnv(plant_params, _cfg(), _reward_cfg())
    obs = env.reset(7)
    # identity normalizer: observation entries are the raw values
    for agent in range(3):
        assert np.allclose(obs[agent][19:25], 0.0, atol=1e-12)
        assert np.allclose(obs[agent][0:18], 0.0)


def test_step_before_reset_and_after_done_raise(plant_params):
    env = WecEnv(plant_params, _cfg(episode_duration=0.4), _reward_cfg())
    with pytest.raises(LifecycleError):
        env.step(np.zeros(3))
    env.reset(0)
    env.step(np.zeros(3))
    _, _, done, _ = env.step(np.zeros(3))
    assert done
    with pytest.raises(LifecycleError):
        env.step(np.zeros(3))


def test_full_episode_ends_exactly_at_duration(plant_params):
    cfg = _cfg(episode_duration=2000.0)
    env = WecEnv(plant_params, cfg, _reward_cfg())
    env.reset(1)
    done = False
    steps = 0
    while not done:
        _, _, done, info = env.step(np.zeros(3))
        steps += 1
    assert steps == 10000
    assert env.time == 2000.0  # exact, not approximately
    assert info["t"] == 2000.0


def test_calm_sea_zero_actions_stay_at_rest(plant_params):
    cfg = _cfg(hs=0.0, episode_duration=2.0)
    env = WecEnv(plant_params, cfg, _reward_cfg())
    env.reset(0)
    for _ in range(cfg.n_steps):
        obs, rewards, done, info = env.step(np.zeros(3))
    assert np.allclose(rewards, 0.0, atol=1e-15)
    assert np.allclose(info["pose"], 0.0, atol=1e-15)
    assert np.allclose(info["velocity"], 0.0, atol=1e-15)
    assert info["mean_power"] == 0.0


def test_divergence_truncates_with_flag(plant_params):
    # stiffness far past the integrator stability bound: oscillation grows
    # geometrically once the waves kick the state off exact rest
    unstable = dataclasses.replace(
        plant_params, hydrostatic_stiffness=1e14 * np.eye(6)
    )
    env = WecEnv(unstable, _cfg(episode_duration=100.0), _reward_cfg())
    obs0 = env.reset(0)
    done = False
    steps = 0
    while not done and steps < 500:
        obs, rewards, done, info = env.step(np.array([1.0, 1.0, 1.0]))
        steps += 1
    assert done and steps < 500
    assert info["diverged"]
    assert env.diverged
    assert np.all(np.isfinite(obs))
    assert np.array_equal(rewards, np.zeros(3))
    with pytest.raises(LifecycleError):
        env.step(np.zeros(3))


# -- observations ------------------------------------------------------------


def test_observation_layout_matches_independent_assembly(plant_params):
    cfg = _cfg()
    env = WecEnv(plant_params, cfg, _reward_cfg())
    env.reset(11)
    for _ in range(4):
        obs, _, _, info = env.step(np.array([0.5, -0.3, 0.2]))
    eta, rate, _, _ = wave_fields_at(
        env.wave_set, info["pose"][0], info["pose"][1],
        info["t"] + cfg.preview_offsets,
    )
    for agent in range(3):
        row = obs[agent]
        assert np.array_equal(row[0:6], info["pose"])
        assert np.array_equal(row[6:12], info["velocity"])
        assert np.array_equal(row[12:18], info["acceleration"])
        assert row[18] == info["pose"][5]
        order = [agent, (agent + 1) % 3, (agent + 2) % 3]
        assert np.array_equal(row[19:22], info["extension"][order])
        assert np.array_equal(row[22:25], info["extension_velocity"][order])
        assert np.array_equal(row[25:35:2], eta)
        assert np.array_equal(row[26:35:2], rate)
        onehot = np.zeros(3)
        onehot[agent] = 1.0
        assert np.array_equal(row[35:38], onehot)


def test_spread_field_varies_transverse_to_heading(plant_params):
    # long-crested sea toward +x: equal elevation at equal x regardless of y
    t = np.linspace(0.0, 20.0, 40)
    env_uni = WecEnv(plant_params, _cfg(mode="irregular"), _reward_cfg())
    env_uni.reset(5)
    eta_left, _, _, _ = wave_fields_at(env_uni.wave_set, 0.0, -10.0, t)
    eta_right, _, _, _ = wave_fields_at(env_uni.wave_set, 0.0, 10.0, t)
    assert np.allclose(eta_left, eta_right, atol=1e-12)

    env_spread = WecEnv(plant_params, _cfg(mode="spread"), _reward_cfg())
    env_spread.reset(5)
    eta_left, _, _, _ = wave_fields_at(env_spread.wave_set, 0.0, -10.0, t)
    eta_right, _, _, _ = wave_fields_at(env_spread.wave_set, 0.0, 10.0, t)
    assert np.max(np.abs(eta_left - eta_right)) > 1e-3


def test_action_clamping_and_scaling(plant_params):
    env = WecEnv(plant_params, _cfg(), _reward_cfg())
    env.reset(0)
    _, _, _, info = env.step(np.array([2.0, -3.0, 0.25]))
    lim = plant_params.force_limit
    assert np.array_equal(info["held_forces"], [-lim, lim, -0.25 * lim])


# -- zero-order hold and energy accounting -----------------------------------


def test_hold_and_energy_match_plant_replay(plant_params):
    """Replaying the recorded held forces through the plant module, one
    physics substep at a time, must land on the same state and the same
    cumulative energy ledger."""
    cfg = _cfg(episode_duration=40.0)
    env = WecEnv(plant_params, cfg, _reward_cfg())
    env.reset(9)
    rng = np.random.default_rng(3)
    held = []
    infos = []
    done = False
    while not done:
        _, _, done, info = env.step(rng.uniform(-1.0, 1.0, 3))
        held.append(info["held_forces"])
        infos.append(info)

    # independent replay: plant_step with the same force held over substeps
    state = P.PlantState.rest()
    ledger = P.EnergyLedger()
    for forces in held:
        for _ in range(cfg.substeps):
            state = P.plant_step(state, forces, env.wave_set, plant_params,
                                 dt=P.PHYSICS_DT, ledger=ledger)

    final = infos[-1]
    assert np.allclose(final["pose"], state.pose, rtol=1e-9, atol=1e-12)
    assert np.allclose(final["velocity"], state.velocity, rtol=1e-9, atol=1e-12)
    energy = final["energy"]
    assert energy["excitation"] == pytest.approx(ledger.exc, rel=1e-9)
    assert energy["damping"] == pytest.approx(ledger.damp, rel=1e-9)
    assert np.allclose(energy["extracted_per_leg"], ledger.pto_per_leg, rtol=1e-9)
    assert energy["extracted_total"] == pytest.approx(ledger.pto, rel=1e-9)

    # per-step reported power integrates back to the extracted energy
    powers = np.array([i["powers"] for i in infos])
    assert np.allclose(
        powers.sum(axis=0) * cfg.control_dt, ledger.pto_per_leg, rtol=1e-9
    )


def test_reported_rewards_follow_compute_reward(plant_params):
    rc = make_reward_config(plant_params, 0.0, power_scale=2e4, alpha=0.4)
    env = WecEnv(plant_params, _cfg(), rc)
    env.reset(2)
    for _ in range(10):
        _, rewards, _, info = env.step(np.array([0.4, 0.1, -0.5]))
    expected = [
        compute_reward(info["powers"], info["yaw_rms"], rc, agent)
        for agent in range(3)
    ]
    assert np.array_equal(rewards, expected)


# -- normalizer ---------------------------------------------------------------


def test_normalizer_freezes_and_round_trips(tmp_path, plant_params):
    cfg = _cfg(episode_duration=10.0)
    sd = SdParams(spring_k=0.0, damping_c=5e4)
    norm = collect_observation_normalizer(
        plant_params, cfg, sd, episodes=2, base_seed=0
    )
    # one-hot block untouched, everything else finite with positive std
    assert np.array_equal(norm.mean[-3:], np.zeros(3))
    assert np.array_equal(norm.std[-3:], np.ones(3))
    assert np.all(norm.std > 0)

    path = tmp_path / "norm.bin"
    norm.save(path)
    back = ObsNormalizer.load(path)
    assert np.array_equal(back.mean, norm.mean)
    assert np.array_equal(back.std, norm.std)

    # normalized observations are identical through the roundtrip
    env_a = WecEnv(plant_params, cfg, _reward_cfg(), normalizer=norm)
    env_b = WecEnv(plant_params, cfg, _reward_cfg(), normalizer=back)
    assert np.array_equal(env_a.reset(3), env_b.reset(3))

    # and the warmup statistics roughly standardize warmup-like data
    env = WecEnv(plant_params, cfg, _reward_cfg(), normalizer=norm)
    obs = env.reset(0)
    rows = []
    ext = np.zeros(3)
    extvel = np.zeros(3)
    done = False
    while not done:
        rows.extend(obs)
        obs, _, done, info = env.step(
            sd_actions(ext, extvel, sd, plant_params.force_limit)
        )
        ext, extvel = info["extension"], info["extension_velocity"]
    spread = np.std(np.array(rows), axis=0)
    active = spread > 1e-9
    assert np.all(spread[active] < 10.0)


def test_sd_actions_reproduce_baseline_force_law(plant_params):
    sd = SdParams(spring_k=2e4, damping_c=7e4)
    ext = np.array([0.4, -0.2, 0.05])
    extvel = np.array([-0.1, 0.3, 0.0])
    acts = sd_actions(ext, extvel, sd, plant_params.force_limit)
    gen = sd.spring_k * ext + sd.damping_c * extvel
    applied = -acts * plant_params.force_limit
    assert np.allclose(
        applied, np.clip(-gen, -plant_params.force_limit, plant_params.force_limit),
        atol=1e-9,
    )


# -- vectorization and logging -------------------------------------------------


def test_vector_env_matches_individual_instances(plant_params):
    cfg = _cfg(episode_duration=2.0)
    vec = VectorEnv([WecEnv(plant_params, cfg, _reward_cfg()) for _ in range(3)])
    solo = [WecEnv(plant_params, cfg, _reward_cfg()) for _ in range(3)]
    obs_v = vec.reset([4, 5, 6])
    obs_s = np.stack([e.reset(s) for e, s in zip(solo, [4, 5, 6])])
    assert np.array_equal(obs_v, obs_s)
    acts = np.array([[0.1, 0.2, 0.3], [-0.1, 0.0, 0.5], [0.9, -0.9, 0.0]])
    ov, rv, dv, _ = vec.step(acts)
    for i, env in enumerate(solo):
        o, r, d, _ = env.step(acts[i])
        assert np.array_equal(ov[i], o)
        assert np.array_equal(rv[i], r)
        assert dv[i] == d


def test_episode_log_schema(tmp_path, plant_params):
    cfg = _cfg(episode_duration=1.0)
    env = WecEnv(plant_params, cfg, _reward_cfg(), keep_log=True)
    env.reset(0)
    done = False
    while not done:
        _, _, done, _ = env.step(np.array([0.2, 0.2, 0.2]))
    path = tmp_path / "episode.csv"
    env.write_log(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == EPISODE_LOG_HEADER == "t,P1,P2,P3,Pm,yaw,r1,r2,r3,a1,a2,a3"
    assert len(lines) == 1 + cfg.n_steps
    row = [float(x) for x in lines[1].split(",")]
    assert len(row) == 12
    assert row[0] == cfg.control_dt
    # Pm is the mean of the three leg powers
    assert row[4] == pytest.approx(np.mean(row[1:4]), rel=1e-12)
