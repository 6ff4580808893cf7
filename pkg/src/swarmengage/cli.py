"""Command-line front door: train, eval, rollout, plot.

Each subcommand is deterministic given its config and seed, exits 0 on
success, and prints a one-line diagnostic to stderr with a nonzero exit
otherwise. Report-style commands write figures next to their delimited
outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import td3 as td3mod
from .config import apply_overrides, build_scenario, load_config
from .logs import (
    TrajectoryWriter,
    aggregate_metrics,
    read_metrics,
    read_trajectory,
    write_aggregate,
)
from .td3 import evaluate, load_checkpoint, select_action


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    if "config" in names:
        p.add_argument("--config", help="YAML config merged over defaults")
    if "seed" in names:
        p.add_argument("--seed", type=int, help="run seed (default from config)")
    if "steps" in names:
        p.add_argument("--steps", type=int, help="decision-step budget")
    if "episodes" in names:
        p.add_argument("--episodes", type=int, help="evaluation episode count")
    if "checkpoint" in names:
        p.add_argument("--checkpoint", required=True, help="checkpoint file")
    if "scenario" in names:
        p.add_argument("--scenario", help="scenario name (default: first stage)")
    if "out" in names:
        p.add_argument("--out", help="output directory or file")
    if "set" in names:
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                       help="dotted config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmengage",
        description="swarm engagement simulator and TD3 trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run curriculum training")
    _add_common(p, "config", "seed", "steps", "out", "set")

    p = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    _add_common(p, "config", "checkpoint", "scenario", "episodes", "seed",
                "out", "set")

    p = sub.add_parser("rollout", help="log one full episode trajectory")
    _add_common(p, "config", "checkpoint", "scenario", "seed", "out", "set")

    p = sub.add_parser("plot", help="aggregate metrics and render the curve")
    p.add_argument("metrics", help="metrics.csv produced by train")
    _add_common(p, "out")
    p.add_argument("--window", type=int, default=20,
                   help="smoothing window in episodes")
    return parser


def _load_cfg(args) -> dict:
    path = getattr(args, "config", None)
    if path is not None and not os.path.exists(path):
        raise FileNotFoundError(f"config not found: {path}")
    cfg = load_config(path)
    overrides = getattr(args, "set", [])
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _load_ckpt(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except ValueError as exc:
        raise ValueError(f"checkpoint header mismatch: {exc}") from exc


def _scenario_name(cfg: dict, args) -> str:
    return getattr(args, "scenario", None) or cfg["curriculum"]["stages"][0]


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    seed = args.seed if args.seed is not None else int(cfg["run"]["seed"])
    out_dir = args.out or cfg["run"]["out_dir"]
    summary = td3mod.train(cfg, out_dir, seed, total_steps=args.steps)
    print(f"trained {summary['env_steps']} steps, {summary['episodes']} episodes, "
          f"final stage {summary['final_stage']} "
          f"({summary['stage_names'][summary['final_stage']]}); "
          f"metrics: {summary['metrics_path']}; "
          f"checkpoint: {summary['checkpoint_path']}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    state, _ = _load_ckpt(args.checkpoint)
    scenario = build_scenario(cfg, _scenario_name(cfg, args))
    episodes = (args.episodes if args.episodes is not None
                else int(cfg["run"]["eval_episodes"]))
    seed = args.seed if args.seed is not None else int(cfg["run"]["seed"])
    summary = evaluate(state, scenario, episodes, seed)
    line = (f"episodes={summary['episodes']} "
            f"success_rate={summary['success_rate']:.3f} "
            f"mean_return={summary['mean_return']:.3f} "
            f"mean_eliminations={summary['mean_eliminations']:.3f} "
            f"mean_steps={summary['mean_steps']:.2f}")
    print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval_summary.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("episodes,success_rate,mean_return,"
                     "mean_eliminations,mean_steps\n")
            fh.write(f"{summary['episodes']},{summary['success_rate']!r},"
                     f"{summary['mean_return']!r},"
                     f"{summary['mean_eliminations']!r},"
                     f"{summary['mean_steps']!r}\n")
        print(f"summary written to {path}")
    return 0


def cmd_rollout(args) -> int:
    from .environment import EngagementEnv
    from .plots import plot_rollout

    cfg = _load_cfg(args)
    state, _ = _load_ckpt(args.checkpoint)
    name = _scenario_name(cfg, args)
    scenario = build_scenario(cfg, name)
    if scenario.observation_dim != state.obs_dim \
            or scenario.action_dim != state.act_dim:
        raise ValueError("checkpoint does not match scenario dimensions")
    seed = args.seed if args.seed is not None else int(cfg["run"]["seed"])
    out_path = args.out or "rollout.jsonl"
    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    rng = np.random.default_rng(seed)
    env = EngagementEnv(scenario)
    obs = env.reset(rng)
    with TrajectoryWriter(out_path, meta={"scenario": name, "seed": seed}) as w:
        w.on_state(0.0, env.controlled, env.adversarial)
        reason, n_steps, n_elims = None, 0, 0
        while True:
            action = select_action(state, obs, rng, noise_std=0.0)
            result = env.step(action, recorder=w)
            obs = result.observation
            n_steps += 1
            n_elims += len(result.info["events"])
            if result.done:
                reason = result.reason
                break
    _, records = read_trajectory(out_path)
    png_path = os.path.splitext(out_path)[0] + ".png"
    plot_rollout(records, png_path)
    print(f"{reason} after {n_steps} decision steps, {n_elims} eliminations; "
          f"trajectory: {out_path}; figure: {png_path}")
    return 0


def cmd_plot(args) -> int:
    from .plots import plot_training

    if not os.path.exists(args.metrics):
        raise FileNotFoundError(f"metrics not found: {args.metrics}")
    rows = read_metrics(args.metrics)
    agg = aggregate_metrics(rows, window=args.window)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "training_curve.csv")
    png_path = os.path.join(out_dir, "training_curve.png")
    write_aggregate(csv_path, agg)
    plot_training(agg, png_path)
    print(f"{len(agg)} episodes aggregated; curve: {csv_path}; "
          f"figure: {png_path}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval,
            "rollout": cmd_rollout, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
