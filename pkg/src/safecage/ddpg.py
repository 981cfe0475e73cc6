"""DDPG vehicle-following agent with optional safety-cage supervision."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from safecage import nn
from safecage.env import ConfigError, EnvConfig, VehicleFollowingEnv

log = logging.getLogger(__name__)

EPISODE_LOG_COLUMNS = ("episode", "return", "steps", "collisions", "breaches", "min_th", "noise_scale")
NETWORK_NAMES = ("actor", "critic", "actor_target", "critic_target")


class NotReady(Exception):
    """Replay memory cannot yet supply a full consecutive sequence."""


@dataclass
class Hyperparams:
    batch_size: int = 64
    hidden_width: int = 50
    lstm_units: int = 16
    gamma: float = 0.99
    lr_actor: float = 1e-4
    lr_critic: float = 1e-2
    replay_capacity: int = 1_000_000
    tau: float = 1e-3
    noise_scale_init: float = 1.0
    noise_decay: float = 0.997
    grad_clip: float = 0.5
    ou_mu: float = 0.0
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    episodes: int = 5000
    warmup_steps: int = 1000
    update_every: int = 1
    optimizer: str = "adam"
    target_mode: str = "target"
    checkpoint_every: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "hidden_width", "lstm_units", "replay_capacity", "episodes",
                     "update_every", "checkpoint_every"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)!r}")
            setattr(self, name, int(getattr(self, name)))
        if int(self.warmup_steps) != self.warmup_steps or self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be a non-negative integer, got {self.warmup_steps!r}")
        self.warmup_steps = int(self.warmup_steps)
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 < self.noise_decay <= 1.0 or not 0.0 < self.noise_scale_init <= 1.0:
            raise ConfigError("noise_scale_init and noise_decay must lie in (0, 1]")
        for name in ("lr_actor", "lr_critic", "grad_clip", "ou_theta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ou_sigma < 0:
            raise ConfigError(f"ou_sigma must be non-negative, got {self.ou_sigma}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.target_mode not in ("target", "online"):
            raise ConfigError(f"target_mode must be 'target' or 'online', got {self.target_mode!r}")


# ---------------------------------------------------------------- exploration

@dataclass
class OUState:
    x: float = 0.0
    scale: float = 1.0


def ou_step(ou: OUState, theta: float, mu: float, sigma: float, rng: np.random.Generator) -> OUState:
    return OUState(ou.x + theta * (mu - ou.x) + sigma * rng.standard_normal(), ou.scale)


def noise_scale(hp: Hyperparams, episode: int) -> float:
    """Exploration multiplier in force during (0-based) ``episode``."""
    return hp.noise_scale_init * hp.noise_decay ** episode


# ---------------------------------------------------------------- replay

@dataclass
class Transition:
    s: np.ndarray
    a: float
    r: float
    s_next: np.ndarray
    done: bool
    episode_id: int
    step_index: int


@dataclass
class Batch:
    s: np.ndarray        # (T, 4)
    a: np.ndarray        # (T,)
    r: np.ndarray        # (T,)
    s_next: np.ndarray   # (T, 4)
    done: np.ndarray     # (T,) bool, bootstrap cut-off
    episode_id: np.ndarray
    step_index: np.ndarray


class ReplayMemory:
    """Ring buffer of transitions with an episode-segment index.

    Transitions are addressed by a logical insertion counter; the oldest
    ``capacity`` of them are resident. ``_segments`` maps each resident
    episode to its first resident logical index and length.
    """

    def __init__(self, capacity: int, obs_dim: int = 4):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, obs_dim))
        self.s_next = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros(self.capacity)
        self.r = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity, dtype=bool)
        self.episode_id = np.zeros(self.capacity, dtype=np.int64)
        self.step_index = np.zeros(self.capacity, dtype=np.int64)
        self.count = 0
        self._segments: dict[int, list[int]] = {}

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    @property
    def oldest(self) -> int:
        return max(0, self.count - self.capacity)

    def add(self, s, a, r, s_next, done, episode_id, step_index) -> None:
        if self.count >= self.capacity:
            self._evict_oldest()
        i = self.count % self.capacity
        seg = self._segments.get(episode_id)
        if seg is not None:
            last = (seg[0] + seg[1] - 1) % self.capacity
            if seg[0] + seg[1] != self.count or self.step_index[last] + 1 != step_index:
                raise ValueError(f"non-consecutive transition for episode {episode_id}")
            seg[1] += 1
        else:
            self._segments[episode_id] = [self.count, 1]
        self.s[i] = s
        self.s_next[i] = s_next
        self.a[i] = a
        self.r[i] = r
        self.done[i] = done
        self.episode_id[i] = episode_id
        self.step_index[i] = step_index
        self.count += 1

    def push(self, t: Transition) -> None:
        self.add(t.s, t.a, t.r, t.s_next, t.done, t.episode_id, t.step_index)

    def _evict_oldest(self) -> None:
        ep = int(self.episode_id[self.oldest % self.capacity])
        seg = self._segments[ep]
        seg[0] += 1
        seg[1] -= 1
        if seg[1] == 0:
            del self._segments[ep]

    def segments(self) -> dict[int, tuple[int, int]]:
        return {k: (v[0], v[1]) for k, v in self._segments.items()}

    def ready(self, length: int) -> bool:
        return any(n >= length for _, n in self._segments.values())

    def sample_sequence(self, length: int, rng: np.random.Generator) -> Batch:
        if not self.ready(length):
            raise NotReady(f"no resident episode segment of length >= {length}")
        lo, hi = self.oldest, self.count - length  # inclusive candidate start range
        for _ in range(1000):
            start = int(rng.integers(lo, hi + 1))
            if self._valid_start(start, length):
                return self._gather(start, length)
        # rejection keeps failing: pick directly among valid starts
        starts = [s + k for s, n in self._segments.values() for k in range(n - length + 1)]
        return self._gather(starts[int(rng.integers(len(starts)))], length)

    def _valid_start(self, start: int, length: int) -> bool:
        first = start % self.capacity
        last = (start + length - 1) % self.capacity
        return (
            self.episode_id[first] == self.episode_id[last]
            and self.step_index[last] - self.step_index[first] == length - 1
        )

    def _gather(self, start: int, length: int) -> Batch:
        idx = np.arange(start, start + length) % self.capacity
        b = Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx],
                  self.episode_id[idx], self.step_index[idx])
        if not (np.all(b.episode_id == b.episode_id[0]) and np.all(np.diff(b.step_index) == 1)):
            raise AssertionError("sampled sequence is not consecutive within one episode")
        return b


def replay_sample_sequence(memory: ReplayMemory, rng: np.random.Generator, batch_size: int = 64) -> Batch:
    return memory.sample_sequence(batch_size, rng)


# ---------------------------------------------------------------- agent

class DDPGAgent:
    def __init__(self, hp: Hyperparams, variant: str = "deep", seed: int = 0):
        self.hp = hp
        self.variant = variant
        self.actor = nn.Network(nn.actor_spec(variant, hp.hidden_width, hp.lstm_units))
        self.critic = nn.Network(nn.critic_spec(hp.hidden_width))
        rng = np.random.default_rng(seed)
        self.actor_params = self.actor.init_params(rng)
        self.critic_params = self.critic.init_params(rng)
        self.actor_target = self.actor_params.copy()
        self.critic_target = self.critic_params.copy()
        self.memory: ReplayMemory | None = None

    # -- acting
    def initial_state(self):
        return self.actor.initial_state(1)

    def policy(self, obs_norm: np.ndarray, state, params: nn.ParameterSet | None = None):
        params = self.actor_params if params is None else params
        out, state, _ = self.actor.forward(params, np.asarray(obs_norm).reshape(1, 1, -1), state)
        return float(out[0, 0, 0]), state

    def act(self, obs_norm, state, explore: bool, ou: OUState, rng: np.random.Generator | None = None):
        """Returns ``(action, next_state, next_ou)``."""
        a, state = self.policy(obs_norm, state)
        if explore:
            hp = self.hp
            ou = ou_step(ou, hp.ou_theta, hp.ou_mu, hp.ou_sigma, rng)
            a = a + ou.scale * ou.x
        return min(max(a, -1.0), 1.0), state, ou

    # -- learning
    def _q(self, params, s, a):
        x = np.concatenate([s, a.reshape(-1, 1)], axis=1)
        q, _, cache = self.critic.forward(params, x)
        return q[:, 0], cache

    def _pi_seq(self, params, s):
        out, _, cache = self.actor.forward(params, s[:, None, :], self.actor.initial_state(1))
        return out[:, 0, 0], cache

    def targets(self, batch: Batch) -> np.ndarray:
        if self.hp.target_mode == "target":
            actor_p, critic_p = self.actor_target, self.critic_target
        else:
            actor_p, critic_p = self.actor_params, self.critic_params
        a_next, _ = self._pi_seq(actor_p, batch.s_next)
        q_next, _ = self._q(critic_p, batch.s_next, a_next)
        return batch.r + self.hp.gamma * (~batch.done) * q_next

    def critic_update(self, batch: Batch) -> float:
        y = self.targets(batch)
        q, cache = self._q(self.critic_params, batch.s, batch.a)
        diff = q - y
        loss = float(np.mean(diff * diff))
        if not math.isfinite(loss):
            raise nn.NonFiniteError("non-finite critic loss")
        self.critic.backward(self.critic_params, cache, (2.0 / len(diff)) * diff[:, None])
        nn.clip_global_norm(self.critic_params, self.hp.grad_clip)
        nn.optimizer_step(self.critic_params, self.hp.lr_critic, self.hp.optimizer)
        return loss

    def actor_update(self, batch: Batch) -> float:
        a, actor_cache = self._pi_seq(self.actor_params, batch.s)
        q, critic_cache = self._q(self.critic_params, batch.s, a)
        objective = float(np.mean(q))
        if not math.isfinite(objective):
            raise nn.NonFiniteError("non-finite actor objective")
        n = len(q)
        # ascend mean Q: minimise -Q; only the action column of dQ/dinput is used
        _, dx = self.critic.backward(self.critic_params, critic_cache, np.full((n, 1), -1.0 / n))
        self.actor.backward(self.actor_params, actor_cache, dx[:, 4].reshape(n, 1, 1))
        nn.clip_global_norm(self.actor_params, self.hp.grad_clip)
        nn.optimizer_step(self.actor_params, self.hp.lr_actor, self.hp.optimizer)
        return objective

    def soft_update_targets(self) -> None:
        nn.soft_update(self.actor_target, self.actor_params, self.hp.tau)
        nn.soft_update(self.critic_target, self.critic_params, self.hp.tau)

    def update(self, batch: Batch) -> tuple[float, float]:
        loss = self.critic_update(batch)
        obj = self.actor_update(batch)
        self.soft_update_targets()
        return loss, obj

    # -- persistence
    def param_sets(self) -> dict[str, nn.ParameterSet]:
        return {
            "actor": self.actor_params, "critic": self.critic_params,
            "actor_target": self.actor_target, "critic_target": self.critic_target,
        }

    def save(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, params in self.param_sets().items():
            nn.checkpoint_save(params, directory / f"{name}.ckpt")


def load_actor(path: str | os.PathLike, variant: str | None = None, hp: Hyperparams | None = None):
    """Load an actor checkpoint (file, or run/checkpoint directory containing ``actor.ckpt``).

    The variant is inferred from the parameter layout when not given.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "actor.ckpt"
    params = nn.checkpoint_load(path)
    hp = hp or Hyperparams()
    if variant is None:
        variant = "deep" if any(".Wh" in k for k in params.names) else "shallow"
    net = nn.Network(nn.actor_spec(variant, hp.hidden_width, hp.lstm_units))
    net.check_params(params)
    return net, params, variant


# ---------------------------------------------------------------- training

@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    steps: int
    collisions: int
    breaches: int
    min_th: float
    noise_scale: float

    def row(self) -> list[str]:
        return [str(self.episode), repr(float(self.ret)), str(self.steps), str(self.collisions),
                str(self.breaches), repr(float(self.min_th)), repr(float(self.noise_scale))]


def _streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent child streams of one seed, so environment draws stay paired across configurations."""
    names = ("init", "env", "noise", "replay")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def episode_seeds(seed: int, n: int) -> list[int]:
    rng = _streams(seed)["env"]
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=n)]


def train(
    env_config: EnvConfig,
    hp: Hyperparams,
    cage_enabled: bool,
    penalty_enabled: bool,
    variant: str = "deep",
    seed: int = 0,
    out_dir: str | os.PathLike | None = None,
    progress_every: int = 0,
) -> tuple[DDPGAgent, list[EpisodeRecord]]:
    env_config.validate()
    hp.validate()
    if variant not in ("deep", "shallow"):
        raise ConfigError(f"variant must be 'deep' or 'shallow', got {variant!r}")
    streams = _streams(seed)
    agent = DDPGAgent(hp, variant, seed=int(streams["init"].integers(2**63 - 1)))
    memory = ReplayMemory(hp.replay_capacity)
    agent.memory = memory
    env = VehicleFollowingEnv(env_config)
    seeds = episode_seeds(seed, hp.episodes)
    out = Path(out_dir) if out_dir is not None else None
    log_stream = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_stream = open(out / "episodes.csv", "w", newline="")
        writer = csv.writer(log_stream, lineterminator="\n")
        writer.writerow(EPISODE_LOG_COLUMNS)

    records: list[EpisodeRecord] = []
    total_steps = 0
    ep = step = 0
    try:
        for ep in range(hp.episodes):
            obs = env.reset(seeds[ep])
            s = obs.normalized()
            state = agent.initial_state()
            ou = OUState(hp.ou_mu, noise_scale(hp, ep))
            ret = 0.0
            breaches = 0
            min_th = obs.th
            res = None
            for step in range(env_config.episode_max_steps):
                a, state, ou = agent.act(s, state, True, ou, streams["noise"])
                res = env.step(a, cage_enabled)
                r = res.reward_total if penalty_enabled else res.reward_th
                s_next = res.observation.normalized()
                # stored action is the executed one; only collisions cut the bootstrap
                memory.add(s, res.pedal_executed, r, s_next, res.collision, ep, step)
                s = s_next
                ret += r
                breaches += "cage_breach" in res.events
                min_th = min(min_th, res.observation.th)
                total_steps += 1
                if total_steps > hp.warmup_steps and total_steps % hp.update_every == 0 \
                        and memory.ready(hp.batch_size):
                    agent.update(memory.sample_sequence(hp.batch_size, streams["replay"]))
                if res.done:
                    break
            rec = EpisodeRecord(ep, ret, step + 1, int(res.collision), breaches, min_th, ou.scale)
            records.append(rec)
            if log_stream is not None:
                writer.writerow(rec.row())
                log_stream.flush()
            if out is not None and (ep + 1) % hp.checkpoint_every == 0:
                agent.save(out / "checkpoints" / f"ep{ep + 1:05d}")
            if progress_every and (ep + 1) % progress_every == 0:
                recent = records[-progress_every:]
                log.info("episode %d return %.1f collisions %d breaches %d",
                         ep + 1, np.mean([r.ret for r in recent]),
                         sum(r.collisions for r in recent), sum(r.breaches for r in recent))
    except nn.NonFiniteError as exc:
        if out is not None:
            snapshot = {"error": str(exc), "episode": ep, "step": step, "total_steps": total_steps,
                        "hyperparams": asdict(hp)}
            (out / "diagnostic.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
        raise
    finally:
        if log_stream is not None:
            log_stream.close()
    if out is not None:
        agent.save(out / "checkpoints" / "final")
    return agent, records


def read_episode_log(path: str | os.PathLike) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpisodeRecord(int(r["episode"]), float(r["return"]), int(r["steps"]), int(r["collisions"]),
                      int(r["breaches"]), float(r["min_th"]), float(r["noise_scale"]))
        for r in rows
    ]


def episode_log_text(records: list[EpisodeRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPISODE_LOG_COLUMNS)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()


def hyperparams_from_dict(d: dict) -> Hyperparams:
    known = {f.name for f in fields(Hyperparams)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown hyperparameter(s): {sorted(unknown)}")
    return Hyperparams(**d)
