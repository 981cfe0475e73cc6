"""Two-vehicle longitudinal highway environment.

The host follows a scripted (or externally driven) lead vehicle on a
straight single lane. Host dynamics are a point mass with a first-order
actuator lag and friction-limited braking. All randomness is drawn from a
single generator seeded at reset, and the lead's behavior never depends on
what the host does, so two policies evaluated on the same seed face the
same lead trace.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import IO

import numpy as np

from safecage import cage

G = 9.81
A_ENG = 4.0
T_LAG = 0.2

BREACH_PENALTY = -0.1
REWARD_BAND = 0.25
REWARD_NEAR = 1.0

TRACE_COLUMNS = (
    "t", "host_vel", "lead_vel", "x_rel", "th", "ttc", "pedal_agent",
    "pedal_executed", "b_th", "b_ttc", "r_th", "r_total", "breach", "collision",
)


class ConfigError(ValueError):
    pass


class EpisodeDoneError(RuntimeError):
    """Raised when stepping an episode that has already terminated."""


class LeadMode(str, Enum):
    NATURALISTIC = "naturalistic"
    EMERGENCY_BRAKING = "emergency_braking"
    ADVERSARIAL_EXTERNAL = "adversarial_external"


def _pair(name: str, value) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a [lo, hi] pair, got {value!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name}: range must be finite and ordered, got [{lo}, {hi}]")
    return lo, hi


@dataclass
class EnvConfig:
    dt: float = 0.04
    episode_max_steps: int = 7500
    lead_vel_range: tuple[float, float] = (17.0, 40.0)
    lead_acc_range: tuple[float, float] = (-2.0, 2.0)
    emergency_acc_range: tuple[float, float] = (-6.0, -3.0)
    emergency_rate_per_hour: float = 1.0
    emergency_floor_vel: float = 12.0
    segment_duration_range: tuple[float, float] = (2.0, 10.0)
    mu_range: tuple[float, float] = (0.4, 1.0)
    target_th: float = 2.0
    init_th_range: tuple[float, float] = (1.5, 3.0)
    host_vel_jitter: tuple[float, float] = (-2.0, 2.0)
    adversary_acc_bounds: tuple[float, float] = (-6.0, 2.0)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            if f.name.endswith("_range") or f.name in ("host_vel_jitter", "adversary_acc_bounds"):
                setattr(self, f.name, _pair(f.name, getattr(self, f.name)))
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.episode_max_steps) != self.episode_max_steps or self.episode_max_steps < 1:
            raise ConfigError(f"episode_max_steps must be a positive integer, got {self.episode_max_steps}")
        self.episode_max_steps = int(self.episode_max_steps)
        lo, hi = self.emergency_acc_range
        if lo < -6.0 or hi > -3.0:
            raise ConfigError(f"emergency_acc_range must lie within [-6, -3], got [{lo}, {hi}]")
        if self.mu_range[0] <= 0:
            raise ConfigError("mu_range must be positive")
        if self.lead_vel_range[0] < 0:
            raise ConfigError("lead_vel_range must be non-negative")
        if self.init_th_range[0] < 0:
            raise ConfigError("init_th_range must be non-negative")
        if self.segment_duration_range[0] <= 0:
            raise ConfigError("segment_duration_range must be positive")
        if self.emergency_rate_per_hour < 0:
            raise ConfigError("emergency_rate_per_hour must be non-negative")
        if self.target_th <= 0:
            raise ConfigError("target_th must be positive")
        self.seed = int(self.seed)

    @property
    def emergency_hazard(self) -> float:
        """Per-step probability of triggering an emergency brake."""
        return self.dt / 3600.0 * self.emergency_rate_per_hour


@dataclass
class Observation:
    v: float
    v_dot: float
    v_rel: float
    th: float

    def normalized(self) -> np.ndarray:
        return np.array(
            [self.v / 40.0, self.v_dot / 6.0, self.v_rel / 20.0, min(self.th, cage.TH_SENTINEL) / 10.0]
        )


@dataclass
class SimState:
    t: float
    host_pos: float
    host_vel: float
    host_acc: float
    lead_pos: float
    lead_vel: float
    lead_acc: float
    mu: float
    rng: np.random.Generator
    episode_step: int = 0
    lead_mode: LeadMode = LeadMode.NATURALISTIC
    # lead script bookkeeping
    segment_left: float = 0.0
    segment_acc: float = 0.0
    steps_to_emergency: int = 0
    emergency_target: float = 0.0
    emergency_acc: float = 0.0
    th_prev: float = 0.0
    collided: bool = False
    done: bool = False

    @property
    def x_rel(self) -> float:
        return self.lead_pos - self.host_pos

    @property
    def v_rel(self) -> float:
        return self.host_vel - self.lead_vel


@dataclass
class StepResult:
    observation: Observation
    reward_th: float
    reward_total: float
    collision: bool
    done: bool
    events: list[str] = field(default_factory=list)
    verdict: cage.CageVerdict | None = None
    pedal_agent: float = 0.0
    pedal_executed: float = 0.0


def reward_headway(th: float, th_prev: float, target: float = 2.0) -> float:
    err = abs(th - target)
    if err <= REWARD_BAND:
        return REWARD_NEAR
    toward = (th - th_prev) * (target - th_prev) > 0
    if err <= 1.0:
        return 0.1 if toward else -0.1
    return -0.05 if toward else -0.5


def reward_total(r_th: float, breached: bool) -> float:
    return r_th + (BREACH_PENALTY if breached else 0.0)


def compute_observation(state: SimState) -> Observation:
    th = cage.time_headway(max(state.x_rel, 0.0), state.host_vel)
    return Observation(v=state.host_vel, v_dot=state.host_acc, v_rel=state.v_rel, th=th)


def host_dynamics(state: SimState, pedal: float, dt: float) -> SimState:
    """Advance the host one Euler step (in place) and return the state."""
    a_max = state.mu * G
    a_cmd = pedal * A_ENG if pedal >= 0 else pedal * a_max
    acc = state.host_acc + dt * (a_cmd - state.host_acc) / T_LAG
    acc = min(max(acc, -a_max), min(A_ENG, a_max))
    vel = max(state.host_vel + acc * dt, 0.0)
    state.host_acc = acc
    state.host_vel = vel
    state.host_pos += vel * dt
    return state


def _new_segment(state: SimState, cfg: EnvConfig) -> None:
    rng = state.rng
    state.segment_left = rng.uniform(*cfg.segment_duration_range)
    if state.lead_vel < cfg.lead_vel_range[0]:
        # recovering from an emergency below the normal band
        hi = cfg.lead_acc_range[1]
        state.segment_acc = rng.uniform(0.5 * hi, hi) if hi > 0 else 0.0
    else:
        state.segment_acc = rng.uniform(*cfg.lead_acc_range)


def _draw_emergency_delay(state: SimState, cfg: EnvConfig) -> None:
    p = cfg.emergency_hazard
    # geometric waiting time == per-step Bernoulli hazard with probability p
    state.steps_to_emergency = int(state.rng.geometric(p)) if p > 0 else -1


def lead_policy_naturalistic(state: SimState, cfg: EnvConfig) -> float:
    """Lead acceleration for the coming step; updates the lead script in place."""
    if state.lead_mode is LeadMode.EMERGENCY_BRAKING:
        if state.lead_vel <= state.emergency_target or state.lead_vel <= 0.0:
            state.lead_mode = LeadMode.NATURALISTIC
            _draw_emergency_delay(state, cfg)
            _new_segment(state, cfg)
        else:
            return state.emergency_acc
    if state.steps_to_emergency > 0:
        state.steps_to_emergency -= 1
        if state.steps_to_emergency == 0:
            rng = state.rng
            state.lead_mode = LeadMode.EMERGENCY_BRAKING
            floor = min(cfg.emergency_floor_vel, state.lead_vel)
            state.emergency_target = rng.uniform(floor, state.lead_vel)
            state.emergency_acc = rng.uniform(*cfg.emergency_acc_range)
            return state.emergency_acc
    state.segment_left -= cfg.dt
    if state.segment_left <= 0:
        _new_segment(state, cfg)
    return state.segment_acc


def _lead_dynamics(state: SimState, acc: float, cfg: EnvConfig, vel_range) -> None:
    lo, hi = vel_range
    vel = state.lead_vel + acc * cfg.dt
    if state.lead_mode is LeadMode.EMERGENCY_BRAKING:
        vel = max(vel, 0.0)
    elif state.lead_vel < lo:
        vel = min(max(vel, state.lead_vel), hi)
    else:
        vel = min(max(vel, lo), hi)
    state.lead_acc = (vel - state.lead_vel) / cfg.dt
    state.lead_vel = vel
    state.lead_pos += vel * cfg.dt


def env_reset(config: EnvConfig, seed: int | None = None, adversarial: bool = False) -> tuple[SimState, Observation]:
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    lead_vel = rng.uniform(*config.lead_vel_range)
    mu = rng.uniform(*config.mu_range)
    th0 = rng.uniform(*config.init_th_range)
    host_vel = max(lead_vel + rng.uniform(*config.host_vel_jitter), 0.0)
    state = SimState(
        t=0.0,
        host_pos=0.0,
        host_vel=host_vel,
        host_acc=0.0,
        lead_pos=th0 * host_vel,
        lead_vel=lead_vel,
        lead_acc=0.0,
        mu=mu,
        rng=rng,
        lead_mode=LeadMode.ADVERSARIAL_EXTERNAL if adversarial else LeadMode.NATURALISTIC,
    )
    if not adversarial:
        _draw_emergency_delay(state, config)
        _new_segment(state, config)
    obs = compute_observation(state)
    state.th_prev = obs.th
    return state, obs


def env_step(
    state: SimState,
    config: EnvConfig,
    pedal: float,
    cage_enabled: bool,
    lead_acc: float | None = None,
) -> tuple[SimState, StepResult]:
    """Advance one control period. Mutates and returns ``state``."""
    if state.done:
        raise EpisodeDoneError("episode already terminated; call env_reset")
    pedal = float(pedal)
    if not abs(pedal) <= 1.0:
        raise ValueError(f"pedal must lie in [-1, 1], got {pedal}")
    verdict = cage.arbitrate(state.x_rel, state.host_vel, state.v_rel, pedal)
    executed = verdict.executed_pedal if cage_enabled else pedal
    breached = cage_enabled and verdict.breached
    events = []
    if state.lead_mode is LeadMode.ADVERSARIAL_EXTERNAL:
        if lead_acc is None:
            raise ValueError("adversarial lead requires lead_acc")
        lo, hi = config.adversary_acc_bounds
        _lead_dynamics(state, min(max(float(lead_acc), lo), hi), config, config.lead_vel_range)
    else:
        was_emergency = state.lead_mode is LeadMode.EMERGENCY_BRAKING
        acc = lead_policy_naturalistic(state, config)
        if state.lead_mode is LeadMode.EMERGENCY_BRAKING and not was_emergency:
            events.append("emergency_brake_start")
        _lead_dynamics(state, acc, config, config.lead_vel_range)
    host_dynamics(state, executed, config.dt)
    state.t = (state.episode_step + 1) * config.dt
    state.episode_step += 1

    collision = state.x_rel <= 0.0
    obs = compute_observation(state)
    r_th = reward_headway(obs.th, state.th_prev, config.target_th)
    state.th_prev = obs.th
    if breached:
        events.append("cage_breach")
    done = collision or state.episode_step >= config.episode_max_steps
    state.collided = collision
    state.done = done
    return state, StepResult(
        observation=obs,
        reward_th=r_th,
        reward_total=reward_total(r_th, breached),
        collision=collision,
        done=done,
        events=events,
        verdict=verdict,
        pedal_agent=pedal,
        pedal_executed=executed,
    )


class TraceWriter:
    """Per-step comma-separated trace of an episode."""

    def __init__(self, stream: IO[str]):
        self._w = csv.writer(stream, lineterminator="\n")
        self._w.writerow(TRACE_COLUMNS)

    def write(self, state: SimState, res: StepResult) -> None:
        v = res.verdict
        self._w.writerow([
            f"{state.t:.2f}", repr(float(state.host_vel)), repr(float(state.lead_vel)), repr(float(state.x_rel)),
            repr(float(res.observation.th)), repr(float(v.ttc)), repr(float(res.pedal_agent)), repr(float(res.pedal_executed)),
            repr(float(v.b_th)), repr(float(v.b_ttc)), repr(float(res.reward_th)), repr(float(res.reward_total)),
            int("cage_breach" in res.events), int(res.collision),
        ])


class VehicleFollowingEnv:
    """Stateful convenience wrapper around :func:`env_reset` / :func:`env_step`."""

    def __init__(self, config: EnvConfig | None = None, trace: IO[str] | None = None):
        self.config = config or EnvConfig()
        self.state: SimState | None = None
        self._trace = TraceWriter(trace) if trace is not None else None

    def reset(self, seed: int | None = None, adversarial: bool = False) -> Observation:
        self.state, obs = env_reset(self.config, seed, adversarial=adversarial)
        return obs

    def step(self, pedal: float, cage_enabled: bool = False, lead_acc: float | None = None) -> StepResult:
        if self.state is None:
            raise EpisodeDoneError("reset() must be called before step()")
        _, res = env_step(self.state, self.config, pedal, cage_enabled, lead_acc)
        if self._trace is not None:
            self._trace.write(self.state, res)
        return res
