"""A2C adversarial lead vehicle.

The adversary drives the lead vehicle's acceleration and is rewarded for
shrinking the frozen host policy's time headway. The host runs without
safety cages and is never updated.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from safecage import nn
from safecage.ddpg import load_actor
from safecage.env import ConfigError, EnvConfig, VehicleFollowingEnv

VEL_RANGES = {"high": (17.0, 40.0), "low": (12.0, 30.0)}
REWARD_CAP = 100.0
LOG_STD_BOUNDS = (-5.0, 1.0)
ADVERSARY_LOG_COLUMNS = ("episode", "min_th", "collisions", "return")


def adversary_reward(th: float) -> float:
    if th <= 0.0:
        return REWARD_CAP
    return min(1.0 / th, REWARD_CAP)


@dataclass
class AdversaryConfig:
    vel_range: tuple[float, float] = VEL_RANGES["high"]
    acc_bounds: tuple[float, float] = (-6.0, 2.0)
    episodes: int = 2500
    episode_steps: int = 1500
    n_step: int = 16
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    lr: float = 3e-4
    gamma: float = 0.99
    hidden: int = 64
    grad_clip: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if isinstance(self.vel_range, str):
            if self.vel_range not in VEL_RANGES:
                raise ConfigError(f"vel_range must be one of {sorted(VEL_RANGES)} or a pair")
            self.vel_range = VEL_RANGES[self.vel_range]
        self.vel_range = tuple(float(v) for v in self.vel_range)
        self.acc_bounds = tuple(float(v) for v in self.acc_bounds)
        for name in ("vel_range", "acc_bounds"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must be ordered, got {getattr(self, name)}")
        for name in ("episodes", "episode_steps", "n_step", "hidden"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive integer")
            setattr(self, name, int(getattr(self, name)))
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.lr <= 0 or self.grad_clip <= 0 or self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("lr and grad_clip must be positive; coefficients non-negative")
        self.seed = int(self.seed)

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            lead_vel_range=self.vel_range,
            adversary_acc_bounds=self.acc_bounds,
            episode_max_steps=self.episode_steps,
            init_th_range=(1.5, 3.0),
        )


def adversary_network(cfg: AdversaryConfig) -> nn.Network:
    # shared trunk; fused linear head emits [mean, log_std, value]
    spec = nn.NetworkSpec(4, (nn.Dense(cfg.hidden), nn.Dense(cfg.hidden)), 3, "linear")
    return nn.Network(spec)


def adversary_observation(state) -> np.ndarray:
    return np.array([state.lead_vel / 40.0, state.host_vel / 40.0, state.x_rel / 100.0, state.v_rel / 20.0])


def squash(u, bounds):
    lo, hi = bounds
    return lo + 0.5 * (np.tanh(u) + 1.0) * (hi - lo)


def _head(out):
    mean = out[..., 0]
    log_std = np.clip(out[..., 1], *LOG_STD_BOUNDS)
    return mean, log_std, out[..., 2]


def adversary_act(net: nn.Network, params: nn.ParameterSet, obs: np.ndarray, rng: np.random.Generator,
                  bounds=(-6.0, 2.0)):
    """Sample a lead acceleration. Returns ``(acc, pre_squash_sample, value)``."""
    out, _, _ = net.forward(params, obs.reshape(1, -1))
    mean, log_std, value = _head(out[0])
    u = mean + math.exp(log_std) * rng.standard_normal()
    return float(squash(u, bounds)), float(u), float(value)


@dataclass
class AdversaryTrajectory:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)   # pre-squash samples
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def append(self, obs, action, reward, value) -> None:
        if not 0.0 < reward <= REWARD_CAP:
            raise ValueError(f"adversary reward out of range: {reward}")
        self.obs.append(obs)
        self.actions.append(action)
        self.rewards.append(reward)
        self.values.append(value)

    def __len__(self) -> int:
        return len(self.rewards)

    def clear(self) -> None:
        self.obs.clear()
        self.actions.clear()
        self.rewards.clear()
        self.values.clear()


def nstep_returns(rewards, bootstrap: float, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = bootstrap
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def a2c_update(net: nn.Network, params: nn.ParameterSet, traj: AdversaryTrajectory, bootstrap_value: float,
               cfg: AdversaryConfig) -> dict[str, float]:
    """One clipped optimizer step on a complete n-step segment.

    ``bootstrap_value`` is V(s_n) for the state after the segment, or 0 if
    the episode terminated there.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    x = np.asarray(traj.obs)
    u = np.asarray(traj.actions)
    out, _, cache = net.forward(params, x)
    mean, log_std, value = _head(out)
    returns = nstep_returns(traj.rewards, bootstrap_value, cfg.gamma)
    adv = returns - value
    std = np.exp(log_std)
    z = (u - mean) / std
    logp = -0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi)
    entropy = log_std + 0.5 * math.log(2.0 * math.pi * math.e)
    n = len(u)
    policy_loss = -float(np.mean(adv * logp))
    value_loss = float(np.mean((returns - value) ** 2))
    ent = float(np.mean(entropy))
    if not all(math.isfinite(v) for v in (policy_loss, value_loss, ent)):
        raise nn.NonFiniteError("non-finite A2C loss")
    # advantages are treated as constants in the policy term
    d = np.zeros_like(out)
    d[:, 0] = -adv * (z / std) / n
    raw_log_std = out[:, 1]
    inside = (raw_log_std > LOG_STD_BOUNDS[0]) & (raw_log_std < LOG_STD_BOUNDS[1])
    d[:, 1] = (-adv * (z * z - 1.0) / n - cfg.entropy_coef / n) * inside
    d[:, 2] = cfg.value_coef * (-2.0 * (returns - value)) / n
    net.backward(params, cache, d)
    nn.clip_global_norm(params, cfg.grad_clip)
    nn.optimizer_step(params, cfg.lr)
    return {"policy": policy_loss, "value": value_loss, "entropy": ent}


@dataclass
class AdversaryEpisode:
    episode: int
    min_th: float
    collisions: int
    ret: float


def adversary_train(
    host_checkpoint: str | os.PathLike,
    cfg: AdversaryConfig,
    run_id: int = 0,
    out_dir: str | os.PathLike | None = None,
) -> tuple[nn.ParameterSet, list[AdversaryEpisode]]:
    """Train one adversary against a frozen host (cages disabled)."""
    cfg.validate()
    host_net, host_params, _ = load_actor(host_checkpoint)
    host_snapshot = host_params.copy()
    seq = np.random.SeedSequence([cfg.seed, run_id])
    init_ss, env_ss, act_ss = seq.spawn(3)
    net = adversary_network(cfg)
    params = net.init_params(np.random.default_rng(init_ss))
    env_rng = np.random.default_rng(env_ss)
    act_rng = np.random.default_rng(act_ss)
    env = VehicleFollowingEnv(cfg.env_config())
    traj = AdversaryTrajectory()
    log: list[AdversaryEpisode] = []
    writer = stream = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        stream = open(Path(out_dir) / f"adversary_run{run_id}.csv", "w", newline="")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(ADVERSARY_LOG_COLUMNS)
    try:
        for ep in range(cfg.episodes):
            host_obs = env.reset(int(env_rng.integers(2**63 - 1)), adversarial=True)
            host_state = host_net.initial_state(1)
            obs = adversary_observation(env.state)
            min_th = host_obs.th
            ret = 0.0
            traj.clear()
            while True:
                acc, u, value = adversary_act(net, params, obs, act_rng, cfg.acc_bounds)
                x = host_obs.normalized().reshape(1, 1, -1)
                pedal, host_state, _ = host_net.forward(host_params, x, host_state)
                res = env.step(min(max(float(pedal[0, 0, 0]), -1.0), 1.0), cage_enabled=False, lead_acc=acc)
                host_obs = res.observation
                th = 0.0 if res.collision else host_obs.th
                r = adversary_reward(th)
                traj.append(obs, u, r, value)
                ret += r
                min_th = min(min_th, th)
                obs = adversary_observation(env.state)
                if res.done or len(traj) == cfg.n_step:
                    if res.collision:
                        boot = 0.0
                    else:
                        out, _, _ = net.forward(params, obs.reshape(1, -1))
                        boot = float(out[0, 2])
                    a2c_update(net, params, traj, boot, cfg)
                    traj.clear()
                if res.done:
                    break
            rec = AdversaryEpisode(ep, min_th, int(res.collision), ret)
            log.append(rec)
            if writer is not None:
                writer.writerow([ep, repr(float(min_th)), rec.collisions, repr(float(ret))])
    finally:
        if stream is not None:
            stream.close()
    if not host_params.equals(host_snapshot):
        raise RuntimeError("host parameters were modified during adversarial training")
    if out_dir is not None:
        nn.checkpoint_save(params, Path(out_dir) / f"adversary_run{run_id}.ckpt")
    return params, log
