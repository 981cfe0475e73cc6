import io
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safecage import env as E
from safecage.env import EnvConfig, LeadMode, VehicleFollowingEnv


def snapshot(state):
    d = {k: v for k, v in vars(state).items() if k != "rng"}
    d["rng"] = state.rng.bit_generator.state
    return d


def make_state(v=20.0, a=0.0, mu=1.0, x_rel=40.0, lead_vel=None):
    s, _ = E.env_reset(EnvConfig(), seed=0)
    s.host_pos, s.host_vel, s.host_acc, s.mu = 0.0, v, a, mu
    s.lead_pos, s.lead_vel = x_rel, v if lead_vel is None else lead_vel
    return s


def test_reset_is_deterministic():
    cfg = EnvConfig()
    a, oa = E.env_reset(cfg, seed=123)
    b, ob = E.env_reset(cfg, seed=123)
    assert snapshot(a) == snapshot(b)
    assert oa == ob
    c, _ = E.env_reset(cfg, seed=124)
    assert snapshot(a) != snapshot(c)


def test_reset_initial_gap_from_headway():
    cfg = EnvConfig(init_th_range=(2, 2), lead_vel_range=(30, 30), host_vel_jitter=(0, 0))
    s, obs = E.env_reset(cfg, seed=5)
    assert s.x_rel == pytest.approx(60.0, abs=1e-12)
    assert obs.th == pytest.approx(2.0) and obs.v_rel == 0.0


@settings(max_examples=100)
@given(st.integers(0, 2**32))
def test_reset_ranges(seed):
    cfg = EnvConfig()
    s, obs = E.env_reset(cfg, seed=seed)
    assert 0.4 <= s.mu <= 1.0
    assert 17.0 <= s.lead_vel <= 40.0
    assert abs(s.host_vel - s.lead_vel) <= 2.0
    assert 1.5 - 1e-12 <= obs.th <= 3.0 + 1e-12
    assert s.lead_pos > s.host_pos


@pytest.mark.parametrize("kwargs", [
    {"dt": 0.0}, {"lead_vel_range": (40, 17)}, {"emergency_acc_range": (-7, -3)},
    {"emergency_acc_range": (-6, -2)}, {"episode_max_steps": 0}, {"mu_range": (0, 1)},
])
def test_invalid_config_rejected(kwargs):
    with pytest.raises(E.ConfigError):
        EnvConfig(**kwargs)


def test_dynamics_zero_input_fixed_point():
    s = make_state(v=20.0, a=0.0)
    E.host_dynamics(s, 0.0, 0.04)
    assert (s.host_vel, s.host_acc) == (20.0, 0.0)


def test_dynamics_full_brake_converges_to_friction_limit():
    s = make_state(v=40.0, mu=1.0)
    for _ in range(int(5 * E.T_LAG / 0.04)):
        E.host_dynamics(s, -1.0, 0.04)
    assert s.host_acc == pytest.approx(-9.81, rel=0.01)
    for _ in range(100):
        E.host_dynamics(s, -1.0, 0.04)
    assert s.host_acc == pytest.approx(-9.81, abs=1e-9)


def test_dynamics_full_throttle_low_friction_clamp():
    s = make_state(v=20.0, mu=0.4)
    for _ in range(200):
        E.host_dynamics(s, 1.0, 0.04)
    assert s.host_acc == pytest.approx(3.924, abs=1e-12)


def test_dynamics_lag_first_step():
    s = make_state(v=20.0, mu=1.0)
    E.host_dynamics(s, 0.5, 0.04)
    # a = 0 + dt/T_LAG * (2.0 - 0)
    assert s.host_acc == pytest.approx(0.4)
    assert s.host_vel == pytest.approx(20.016)


@settings(max_examples=200)
@given(st.floats(0, 45), st.floats(-9.81, 4.0), st.floats(-1, 1))
def test_kinematics_scheme(v, a, p):
    s = make_state(v=v, a=a, mu=1.0)
    pos0 = s.host_pos
    E.host_dynamics(s, p, 0.04)
    # semi-implicit Euler: position advances with the updated velocity
    assert s.host_pos - pos0 == s.host_vel * 0.04
    assert s.host_vel >= 0.0
    assert -9.81 <= s.host_acc <= 4.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 45), st.floats(-9.81, 4.0))
def test_full_braking_stops_in_time(v, a):
    s = make_state(v=v, a=a, mu=1.0)
    bound = v / 9.81 + 5 * E.T_LAG
    steps = 0
    while s.host_vel > 0:
        E.host_dynamics(s, -1.0, 0.04)
        steps += 1
        assert steps * 0.04 <= bound + 1e-9


def test_observation_examples():
    s = make_state(v=20.0, x_rel=40.0)
    obs = E.compute_observation(s)
    assert (obs.v_rel, obs.th) == (0.0, 2.0)
    s = make_state(v=0.0, x_rel=40.0, lead_vel=5.0)
    assert E.compute_observation(s).th == 10.0
    s = make_state(v=25.0, lead_vel=20.0)
    assert E.compute_observation(s).v_rel == 5.0
    norm = E.Observation(20.0, -3.0, 5.0, 25.0).normalized()
    np.testing.assert_allclose(norm, [0.5, -0.5, 0.25, 1.0])


@pytest.mark.parametrize("th,prev,r", [
    (2.0, 2.0, 1.0), (1.5, 1.4, 0.1), (4.0, 3.5, -0.5), (2.25, 3.0, 1.0), (1.5, 1.6, -0.1),
    (3.5, 4.0, -0.05), (0.5, 0.4, -0.05), (0.5, 0.6, -0.5), (2.6, 2.6, -0.1),
])
def test_reward_headway(th, prev, r):
    assert E.reward_headway(th, prev) == r


@pytest.mark.parametrize("r_th,breached,r", [(1.0, False, 1.0), (1.0, True, 0.9), (-0.5, True, -0.6)])
def test_reward_total(r_th, breached, r):
    assert E.reward_total(r_th, breached) == pytest.approx(r, abs=1e-15)


def test_emergency_hazard():
    assert EnvConfig().emergency_hazard == pytest.approx(0.04 / 3600)
    assert EnvConfig().emergency_hazard == pytest.approx(1.111e-5, rel=1e-3)
    assert 300 / 3600 * EnvConfig().emergency_rate_per_hour == pytest.approx(1 / 12)


def test_segment_accelerations_in_range():
    cfg = EnvConfig()
    s, _ = E.env_reset(cfg, seed=9)
    accs = np.empty(10**6)
    for i in range(accs.size):
        E._new_segment(s, cfg)
        accs[i] = s.segment_acc
    assert accs.min() >= -2.0 and accs.max() <= 2.0
    assert abs(accs.mean()) < 0.01


def _lead_only(cfg, seed, hours):
    s, _ = E.env_reset(cfg, seed=seed)
    events = 0
    vmin, vmax = math.inf, -math.inf
    for _ in range(int(hours * 3600 / cfg.dt)):
        was = s.lead_mode
        a = E.lead_policy_naturalistic(s, cfg)
        if s.lead_mode is LeadMode.EMERGENCY_BRAKING and was is not LeadMode.EMERGENCY_BRAKING:
            events += 1
        E._lead_dynamics(s, a, cfg, cfg.lead_vel_range)
        vmin, vmax = min(vmin, s.lead_vel), max(vmax, s.lead_vel)
        if s.lead_mode is LeadMode.NATURALISTIC and s.lead_vel >= cfg.lead_vel_range[0]:
            assert cfg.lead_vel_range[0] <= s.lead_vel <= cfg.lead_vel_range[1]
    return events, vmin, vmax


def test_emergency_rate_over_100_hours():
    # the hazard scales with dt, so a coarser step keeps the hourly rate
    cfg = EnvConfig(dt=0.2)
    events, vmin, vmax = _lead_only(cfg, seed=2024, hours=100)
    assert 70 <= events <= 130
    assert vmin >= 0.0 and vmax <= 40.0


def test_lead_trace_independent_of_host():
    cfg = EnvConfig(episode_max_steps=2000, emergency_rate_per_hour=60)
    traces = []
    for pedal in (0.0, -0.3):
        env = VehicleFollowingEnv(cfg)
        env.reset(seed=77)
        tr = []
        while True:
            res = env.step(pedal)
            tr.append((env.state.lead_pos, env.state.lead_vel))
            if res.done:
                break
        traces.append(tr)
    n = min(map(len, traces))
    assert n > 100
    assert traces[0][:n] == traces[1][:n]


def test_step_determinism():
    cfg = EnvConfig(episode_max_steps=500)
    rng = np.random.default_rng(0)
    pedals = rng.uniform(-1, 1, 500)
    runs = []
    for _ in range(2):
        s, _ = E.env_reset(cfg, seed=3)
        rows = []
        for p in pedals:
            s, res = E.env_step(s, cfg, p, cage_enabled=True)
            rows.append((s.host_pos, s.host_vel, s.lead_pos, res.reward_total))
            if res.done:
                break
        runs.append(rows)
    assert runs[0] == runs[1]


def test_cage_disabled_passes_pedal_through():
    cfg = EnvConfig(init_th_range=(0.6, 0.6))
    s, _ = E.env_reset(cfg, seed=1)
    s, res = E.env_step(s, cfg, 0.7, cage_enabled=False)
    assert res.pedal_executed == 0.7
    assert res.verdict.breached  # the cage would have intervened
    assert "cage_breach" not in res.events
    assert res.reward_total == res.reward_th


def test_cage_enabled_overrides_and_penalises():
    cfg = EnvConfig(init_th_range=(0.6, 0.6))
    s, _ = E.env_reset(cfg, seed=1)
    s, res = E.env_step(s, cfg, 0.7, cage_enabled=True)
    assert res.pedal_executed == -res.verdict.b_final < 0
    assert "cage_breach" in res.events
    assert res.reward_total == pytest.approx(res.reward_th - 0.1)


def test_collision_terminates():
    cfg = EnvConfig()
    s, _ = E.env_reset(cfg, seed=4)
    while True:
        s, res = E.env_step(s, cfg, 1.0, cage_enabled=False)
        if res.done:
            break
    assert res.collision and s.x_rel <= 0
    with pytest.raises(E.EpisodeDoneError):
        E.env_step(s, cfg, 0.0, cage_enabled=False)


def test_timeout_terminates_without_collision():
    cfg = EnvConfig(episode_max_steps=7500)
    env = VehicleFollowingEnv(cfg)
    obs = env.reset(seed=11)
    n = 0
    while True:
        # simple gap keeper with the cage on top
        s = env.state
        acc = 0.15 * (s.x_rel - 2.0 * s.host_vel) - 0.8 * s.v_rel
        pedal = max(min(acc / 4.0 if acc >= 0 else acc / (s.mu * 9.81), 1.0), -1.0)
        res = env.step(pedal, cage_enabled=True)
        n += 1
        if res.done:
            break
    assert n == 7500 and not res.collision


def test_adversarial_lead_respects_bounds():
    cfg = EnvConfig(episode_max_steps=3000)
    env = VehicleFollowingEnv(cfg)
    env.reset(seed=3, adversarial=True)
    rng = np.random.default_rng(0)
    for _ in range(3000):
        res = env.step(-1.0, lead_acc=rng.uniform(-20, 20))
        s = env.state
        assert 17.0 <= s.lead_vel <= 40.0
        assert -6.0 - 1e-9 <= s.lead_acc <= 2.0 + 1e-9
        if res.done:
            break
    with pytest.raises(ValueError):
        env2 = VehicleFollowingEnv(cfg)
        env2.reset(seed=3, adversarial=True)
        env2.step(0.0)


def test_trace_writer_columns():
    buf = io.StringIO()
    env = VehicleFollowingEnv(EnvConfig(episode_max_steps=5), trace=buf)
    env.reset(seed=0)
    for _ in range(5):
        env.step(0.0, cage_enabled=True)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == list(E.TRACE_COLUMNS)
    assert len(lines) == 6
    assert all(len(l.split(",")) == len(E.TRACE_COLUMNS) for l in lines)


def test_invalid_pedal_rejected():
    s, _ = E.env_reset(EnvConfig(), seed=0)
    with pytest.raises(ValueError):
        E.env_step(s, EnvConfig(), 1.5, cage_enabled=False)
