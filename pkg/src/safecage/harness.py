"""Evaluation campaigns: naturalistic batteries and adversarial batteries."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from safecage import cage
from safecage.adversary import AdversaryConfig, adversary_train
from safecage.ddpg import load_actor
from safecage.env import EnvConfig, Observation, SimState, VehicleFollowingEnv

EPISODE_METRIC_COLUMNS = (
    "episode", "seed", "steps", "min_x_rel", "mean_x_rel", "max_v_rel", "mean_v_rel",
    "min_th", "mean_th", "collision",
)
TABLE_ROWS = (
    ("min. x_rel [m]", "min_x_rel", "{:.3f}"),
    ("mean x_rel [m]", "mean_x_rel", "{:.2f}"),
    ("max. v_rel [m/s]", "max_v_rel", "{:.2f}"),
    ("mean v_rel [m/s]", "mean_v_rel", "{:.4f}"),
    ("min. TH [s]", "min_th", "{:.3f}"),
    ("mean TH [s]", "mean_th", "{:.3f}"),
    ("collisions", "collisions", "{:d}"),
)


def config_hash(obj) -> str:
    payload = json.dumps(obj if isinstance(obj, dict) else asdict(obj), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- policies

class Policy:
    """Host controller interface used by the campaigns."""

    def reset(self) -> None:
        pass

    def __call__(self, obs: Observation, state: SimState) -> float:
        raise NotImplementedError


class ActorPolicy(Policy):
    def __init__(self, net, params):
        self.net = net
        self.params = params
        self._state = None

    @classmethod
    def from_checkpoint(cls, path) -> "ActorPolicy":
        net, params, _ = load_actor(path)
        return cls(net, params)

    def reset(self) -> None:
        self._state = self.net.initial_state(1)

    def __call__(self, obs, state):
        out, self._state, _ = self.net.forward(self.params, obs.normalized().reshape(1, 1, -1), self._state)
        return min(max(float(out[0, 0, 0]), -1.0), 1.0)


class FunctionPolicy(Policy):
    def __init__(self, fn: Callable[[Observation, SimState], float]):
        self.fn = fn

    def __call__(self, obs, state):
        return self.fn(obs, state)


def full_gas_policy() -> Policy:
    return FunctionPolicy(lambda obs, state: 1.0)


def rule_follower_policy(target_th: float = 2.0, k_gap: float = 0.15, k_vel: float = 0.8) -> Policy:
    """Gap/speed feedback towards the target headway, with cage braking on top."""

    def fn(obs, st):
        acc = k_gap * (st.x_rel - target_th * st.host_vel) - k_vel * st.v_rel
        pedal = acc / 4.0 if acc >= 0 else acc / (st.mu * 9.81)
        pedal = min(max(pedal, -1.0), 1.0)
        return cage.arbitrate(max(st.x_rel, 0.0), st.host_vel, st.v_rel, pedal).executed_pedal

    return FunctionPolicy(fn)


def as_policy(model) -> Policy:
    if isinstance(model, Policy):
        return model
    return ActorPolicy.from_checkpoint(model)


# ---------------------------------------------------------------- metrics

@dataclass
class EpisodeMetrics:
    min_x_rel: float
    mean_x_rel: float
    max_v_rel: float
    mean_v_rel: float
    min_th: float
    mean_th: float
    collision: bool
    steps: int = 0
    seed: int = 0
    episode: int = 0

    def row(self) -> list:
        return [self.episode, self.seed, self.steps, repr(float(self.min_x_rel)), repr(float(self.mean_x_rel)),
                repr(float(self.max_v_rel)), repr(float(self.mean_v_rel)), repr(float(self.min_th)), repr(float(self.mean_th)),
                int(self.collision)]


def episode_metrics(x_rel, v_rel, th, collision: bool, **extra) -> EpisodeMetrics:
    x = np.maximum(np.asarray(x_rel, dtype=float), 0.0)
    v = np.abs(np.asarray(v_rel, dtype=float))
    th = np.asarray(th, dtype=float)
    if collision:
        x[-1] = 0.0
        th[-1] = 0.0
    return EpisodeMetrics(
        min_x_rel=float(x.min()), mean_x_rel=float(x.mean()),
        max_v_rel=float(v.max()), mean_v_rel=float(v.mean()),
        min_th=float(th.min()), mean_th=float(th.mean()),
        collision=bool(collision), **extra,
    )


@dataclass
class CampaignSummary:
    episodes: list[EpisodeMetrics]
    label: str = ""
    scenario_hash: str = ""
    aggregate: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate(self.episodes)


def aggregate(episodes: list[EpisodeMetrics]) -> dict:
    if not episodes:
        raise ValueError("no episodes to aggregate")
    return {
        "min_x_rel": min(e.min_x_rel for e in episodes),
        "mean_x_rel": float(np.mean([e.mean_x_rel for e in episodes])),
        "max_v_rel": max(e.max_v_rel for e in episodes),
        "mean_v_rel": float(np.mean([e.mean_v_rel for e in episodes])),
        "min_th": min(e.min_th for e in episodes),
        "mean_th": float(np.mean([e.mean_th for e in episodes])),
        "collisions": sum(int(e.collision) for e in episodes),
    }


def scenario_seeds(seed: int, n: int) -> list[int]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE]))
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=n)]


def run_episode(policy: Policy, env: VehicleFollowingEnv, seed: int, cage_enabled: bool = False) -> EpisodeMetrics:
    obs = env.reset(seed)
    policy.reset()
    n = env.config.episode_max_steps
    x_rel = np.empty(n)
    v_rel = np.empty(n)
    th = np.empty(n)
    k = 0
    while True:
        res = env.step(policy(obs, env.state), cage_enabled)
        obs = res.observation
        x_rel[k] = env.state.x_rel
        v_rel[k] = obs.v_rel
        th[k] = obs.th
        k += 1
        if res.done:
            break
    return episode_metrics(x_rel[:k], v_rel[:k], th[:k], res.collision, steps=k, seed=seed)


def run_naturalistic(
    model,
    n_episodes: int = 120,
    episode_steps: int = 7500,
    cage_enabled: bool = False,
    seed: int = 0,
    env_config: EnvConfig | None = None,
    label: str = "",
    out_dir: str | os.PathLike | None = None,
) -> CampaignSummary:
    """Evaluate a policy on a seeded, model-independent scenario suite."""
    policy = as_policy(model)
    base = env_config or EnvConfig()
    cfg = EnvConfig(**{**asdict(base), "episode_max_steps": episode_steps})
    env = VehicleFollowingEnv(cfg)
    seeds = scenario_seeds(seed, n_episodes)
    episodes = []
    for i, s in enumerate(seeds):
        m = run_episode(policy, env, s, cage_enabled)
        m.episode = i
        episodes.append(m)
    summary = CampaignSummary(
        episodes, label=label,
        scenario_hash=config_hash({"env": asdict(cfg), "seed": seed, "n": n_episodes, "cage": cage_enabled}),
    )
    if out_dir is not None:
        write_campaign(summary, out_dir)
    return summary


def campaign_csv(summary: CampaignSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPISODE_METRIC_COLUMNS)
    for e in summary.episodes:
        w.writerow(e.row())
    return buf.getvalue()


def write_campaign(summary: CampaignSummary, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "naturalistic_episodes.csv").write_text(campaign_csv(summary))
    meta = {"label": summary.label, "scenario_hash": summary.scenario_hash, "aggregate": summary.aggregate}
    (out / "naturalistic_summary.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "naturalistic_table.txt").write_text(summarize({summary.label or "model": summary.episodes})["text"])
    return out


def read_campaign(path) -> list[EpisodeMetrics]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpisodeMetrics(
            min_x_rel=float(r["min_x_rel"]), mean_x_rel=float(r["mean_x_rel"]),
            max_v_rel=float(r["max_v_rel"]), mean_v_rel=float(r["mean_v_rel"]),
            min_th=float(r["min_th"]), mean_th=float(r["mean_th"]),
            collision=bool(int(r["collision"])), steps=int(r["steps"]),
            seed=int(r["seed"]), episode=int(r["episode"]),
        )
        for r in rows
    ]


def summarize(logs: dict[str, list[EpisodeMetrics]]) -> dict[str, str]:
    """Render the seven-row metric table, one column per model."""
    if not logs or any(len(v) == 0 for v in logs.values()):
        raise ValueError("summarize needs at least one non-empty episode log")
    aggs = {label: aggregate(eps) for label, eps in logs.items()}
    labels = list(aggs)
    cells = [[fmt.format(aggs[l][key]) for l in labels] for _, key, fmt in TABLE_ROWS]
    head = ["Parameter"] + labels
    widths = [max(len(r[0]) for r in TABLE_ROWS + (("Parameter", "", ""),))]
    widths += [max(len(l), *(len(row[i]) for row in cells)) for i, l in enumerate(labels)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for (name, _, _), row in zip(TABLE_ROWS, cells):
        lines.append("  ".join(v.ljust(w) for v, w in zip([name] + row, widths)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for (name, _, _), row in zip(TABLE_ROWS, cells):
        w.writerow([name] + row)
    return {"text": "\n".join(lines) + "\n", "csv": buf.getvalue(), "aggregates": aggs}


# ---------------------------------------------------------------- adversarial

def moving_average(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window <= 1 or len(x) == 0:
        return x.copy()
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    for i in range(len(x)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


@dataclass
class AdversarialResult:
    min_th: np.ndarray        # (runs, episodes)
    collisions: np.ndarray    # (runs, episodes)
    mean: np.ndarray
    std: np.ndarray
    smoothed_mean: np.ndarray
    smoothed_std: np.ndarray


def run_adversarial(
    model_checkpoint,
    vel_range="high",
    runs: int = 3,
    cfg: AdversaryConfig | None = None,
    run_seeds: list[int] | None = None,
    smoothing: int = 50,
    out_dir=None,
) -> AdversarialResult:
    """Train ``runs`` independent adversaries against one frozen host."""
    cfg = cfg or AdversaryConfig()
    cfg = AdversaryConfig(**{**asdict(cfg), "vel_range": vel_range})
    run_seeds = run_seeds if run_seeds is not None else list(range(runs))
    if len(run_seeds) != runs:
        raise ValueError("run_seeds must have one entry per run")
    mins, cols = [], []
    for rs in run_seeds:
        _, log = adversary_train(model_checkpoint, cfg, run_id=rs, out_dir=out_dir)
        mins.append([e.min_th for e in log])
        cols.append([e.collisions for e in log])
    mins = np.asarray(mins)
    cols = np.asarray(cols)
    mean = mins.mean(axis=0)
    std = mins.std(axis=0)
    res = AdversarialResult(mins, cols, mean, std, moving_average(mean, smoothing), moving_average(std, smoothing))
    if out_dir is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "mean_min_th", "std_min_th", "smoothed_mean", "smoothed_std", "collisions"])
        for i in range(len(mean)):
            w.writerow([i, repr(float(mean[i])), repr(float(std[i])), repr(float(res.smoothed_mean[i])), repr(float(res.smoothed_std[i])),
                        int(cols[:, i].sum())])
        (Path(out_dir) / "adversarial_curve.csv").write_text(buf.getvalue())
    return res
