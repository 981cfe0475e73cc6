"""Command-line entry point: ``safecage <subcommand> ...``.

Exit codes: 0 success, 1 runtime or configuration failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from safecage import __version__, cage
from safecage.config import RunConfig, default_out_root, parse_config
from safecage.env import ConfigError

log = logging.getLogger("safecage")

SUBCOMMANDS = ("train", "eval", "adv-eval", "adversary", "cage-check", "report", "plot")


def _on_off(v: str) -> bool:
    return v == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safecage", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", help="run output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    t = sub.add_parser("train", parents=[common], help="train a DDPG agent")
    t.add_argument("--cage", choices=("on", "off"), default="on")
    t.add_argument("--penalty", choices=("on", "off"), default="on")
    t.add_argument("--variant", choices=("deep", "shallow"), default="deep")
    t.add_argument("--episodes", type=int, help="overrides [ddpg] episodes")
    t.add_argument("--episode-steps", type=int, help="overrides [env] episode_max_steps")

    e = sub.add_parser("eval", parents=[common], help="naturalistic evaluation campaign")
    e.add_argument("--model", required=True, help="actor checkpoint or checkpoint directory")
    e.add_argument("--episodes", type=int)
    e.add_argument("--episode-steps", type=int)
    e.add_argument("--cage", choices=("on", "off"))
    e.add_argument("--label", default="")

    for name in ("adv-eval", "adversary"):
        a = sub.add_parser(name, parents=[common], help="adversarial testing campaign")
        a.add_argument("--model", "--host", dest="model", required=True)
        a.add_argument("--vel-range", choices=("high", "low"), default="high")
        a.add_argument("--runs", type=int)
        a.add_argument("--episodes", type=int, help="overrides [adversary] episodes")
        a.add_argument("--episode-steps", type=int, help="overrides [adversary] episode_steps")

    c = sub.add_parser("cage-check", parents=[common], help="evaluate the safety-cage braking maps")
    c.add_argument("--th", type=float, action="append", default=[])
    c.add_argument("--ttc", type=float, action="append", default=[])
    c.add_argument("--sweep", choices=("th", "ttc"))
    c.add_argument("--start", type=float, default=0.0)
    c.add_argument("--stop", type=float, default=3.0)
    c.add_argument("--num", type=int, default=31)
    c.add_argument("--format", choices=("text", "csv"), default="text")

    r = sub.add_parser("report", parents=[common], help="tabulate naturalistic campaign logs")
    r.add_argument("--logs", required=True, help="directory searched for naturalistic_episodes.csv")

    pl = sub.add_parser("plot", parents=[common], help="render reward or adversarial curves")
    pl.add_argument("--log", action="append", required=True, help="episodes.csv or adversarial_curve.csv")
    pl.add_argument("--window", type=int, default=50)
    return p


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["run.seed"] = args.seed
    cmd = args.command
    if cmd == "train":
        if args.episodes is not None:
            ov["ddpg.episodes"] = args.episodes
        if args.episode_steps is not None:
            ov["env.episode_max_steps"] = args.episode_steps
    elif cmd == "eval":
        if args.episodes is not None:
            ov["campaign.episodes"] = args.episodes
        if args.episode_steps is not None:
            ov["campaign.episode_steps"] = args.episode_steps
        if args.cage is not None:
            ov["campaign.cage_enabled"] = _on_off(args.cage)
    elif cmd in ("adv-eval", "adversary"):
        ov["adversary.vel_range"] = args.vel_range
        if args.runs is not None:
            ov["campaign.adversary_runs"] = args.runs
        if args.episodes is not None:
            ov["adversary.episodes"] = args.episodes
        if args.episode_steps is not None:
            ov["adversary.episode_steps"] = args.episode_steps
    return ov


def _run_dir(args, cfg: RunConfig, tag: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(cfg.run.out_root) if cfg.run.out_root else default_out_root()
    return root / f"{tag}-{cfg.hash()[:10]}-s{cfg.seed}"


def _write_manifest(out: Path, args, cfg: RunConfig, artifacts: list[Path], extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    manifest = {
        "command": args.command,
        "argv": [a for a in sys.argv[1:]],
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": __version__,
        "artifacts": sorted(str(p.relative_to(out)) if p.is_relative_to(out) else str(p) for p in artifacts),
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_train(args, cfg: RunConfig) -> int:
    from safecage.ddpg import train
    from safecage.plots import plot_training

    cage_on, pen_on = _on_off(args.cage), _on_off(args.penalty)
    tag = f"train-{args.variant}-{'sc' if cage_on else 'plain'}{'' if pen_on or not cage_on else '-nopen'}"
    out = _run_dir(args, cfg, tag)
    t0 = time.perf_counter()
    try:
        _, records = train(cfg.env, cfg.ddpg, cage_on, pen_on, args.variant, cfg.seed, out_dir=out,
                           progress_every=10 if args.verbose else 0)
    except BaseException:
        shutil.rmtree(out / "checkpoints", ignore_errors=True)
        raise
    png = plot_training({tag: out / "episodes.csv"}, out / "rewards.png")
    artifacts = [out / "episodes.csv", png, *sorted((out / "checkpoints").rglob("*.ckpt"))]
    _write_manifest(out, args, cfg, artifacts, {
        "cage": cage_on, "penalty": pen_on, "variant": args.variant,
        "elapsed_s": round(time.perf_counter() - t0, 1),
        "training_collisions": sum(r.collisions for r in records),
    })
    print(out)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from safecage.harness import run_naturalistic, summarize

    out = _run_dir(args, cfg, "eval")
    camp = cfg.campaign
    summary = run_naturalistic(
        args.model, n_episodes=camp.episodes, episode_steps=camp.episode_steps,
        cage_enabled=camp.cage_enabled, seed=cfg.seed, env_config=cfg.env,
        label=args.label or Path(args.model).name, out_dir=out,
    )
    _write_manifest(out, args, cfg, sorted(out.glob("naturalistic_*")),
                    {"model": str(args.model), "scenario_hash": summary.scenario_hash})
    print(summarize({summary.label: summary.episodes})["text"], end="")
    return 0


def cmd_adversarial(args, cfg: RunConfig) -> int:
    from safecage.harness import run_adversarial
    from safecage.plots import plot_adversarial

    out = _run_dir(args, cfg, f"adv-{args.vel_range}")
    adv = cfg.adversary
    adv.seed = cfg.seed
    res = run_adversarial(args.model, args.vel_range, runs=cfg.campaign.adversary_runs, cfg=adv,
                          smoothing=cfg.campaign.smoothing, out_dir=out)
    png = plot_adversarial({Path(args.model).name: out / "adversarial_curve.csv"}, out / "min_th.png")
    _write_manifest(out, args, cfg, [*sorted(out.glob("adversar*")), png], {"model": str(args.model)})
    print(f"min TH over all runs: {res.min_th.min():.3f} s, collisions: {int(res.collisions.sum())}")
    return 0


def cmd_cage_check(args, cfg: RunConfig) -> int:
    rows = [("th", *r) for r in cage.sweep_table(args.th, "th")]
    rows += [("ttc", *r) for r in cage.sweep_table(args.ttc, "ttc")]
    if args.sweep:
        rows += [(args.sweep, *r) for r in cage.sweep_table(np.linspace(args.start, args.stop, args.num), args.sweep)]
    if not rows:
        raise ConfigError("cage-check needs --th, --ttc or --sweep")
    if len(rows) == 1 and args.format == "text":
        print(f"{rows[0][2]:g}")
        return 0
    if args.format == "csv":
        print("metric,value,braking,risk")
        for m, x, b, r in rows:
            print(f"{m},{x!r},{b!r},{r}")
    else:
        print(f"{'metric':<6} {'value':>8} {'braking':>8} risk")
        for m, x, b, r in rows:
            print(f"{m:<6} {x:>8.3f} {b:>8.4f} {r}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    from safecage.harness import read_campaign, summarize

    found = sorted(Path(args.logs).rglob("naturalistic_episodes.csv"))
    if not found:
        raise ConfigError(f"no naturalistic_episodes.csv under {args.logs}")
    logs = {}
    for path in found:
        label = path.parent.name
        meta = path.parent / "naturalistic_summary.json"
        if meta.exists():
            label = json.loads(meta.read_text()).get("label") or label
        logs[label] = read_campaign(path)
    table = summarize(logs)
    out = Path(args.out) if args.out else Path(args.logs)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(table["text"])
    (out / "report.csv").write_text(table["csv"])
    print(table["text"], end="")
    return 0


def cmd_plot(args, cfg: RunConfig) -> int:
    from safecage.plots import plot_adversarial, plot_training

    paths = [Path(p) for p in args.log]
    out = Path(args.out) if args.out else paths[0].parent
    out.mkdir(parents=True, exist_ok=True)
    labels = {p.parent.name or p.stem: p for p in paths}
    header = paths[0].read_text().split("\n", 1)[0]
    if header.startswith("episode,mean_min_th"):
        png = plot_adversarial(labels, out / "min_th.png")
    else:
        png = plot_training(labels, out / "rewards.png", window=args.window)
    print(png)
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "adv-eval": cmd_adversarial,
    "adversary": cmd_adversarial,
    "cage-check": cmd_cage_check,
    "report": cmd_report,
    "plot": cmd_plot,
}


def dispatch(args, cfg: RunConfig) -> int:
    handler = HANDLERS.get(args.command)
    if handler is None:
        print(f"unknown subcommand {args.command!r}", file=sys.stderr)
        return 2
    return handler(args, cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = parse_config(args.config, _overrides(args))
        return dispatch(args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
