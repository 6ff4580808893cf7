"""Figure rendering for training curves and engagement snapshots.

Both renderers work from the delimited outputs (the metrics aggregation and
the trajectory log), so figures can be rebuilt from files alone.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .logs import SIDE_CONTROLLED  # noqa: E402


def plot_training(agg_rows: list[dict], out_path: str) -> None:
    """Smoothed return vs environment steps, stage changes marked."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if agg_rows:
        steps = [r["env_steps"] for r in agg_rows]
        raw = [r["return"] for r in agg_rows]
        smooth = [r["return_smoothed"] for r in agg_rows]
        ax.plot(steps, raw, color="tab:blue", alpha=0.25, lw=0.8,
                label="episode return")
        ax.plot(steps, smooth, color="tab:blue", lw=1.8, label="smoothed")
        for r in agg_rows:
            if r["stage_change"]:
                ax.axvline(r["env_steps"], color="tab:red", ls="--", lw=1.0)
        ax.legend(loc="lower right")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("episode return")
    ax.set_title("training progress")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_rollout(records: list[dict], out_path: str) -> None:
    """Top-down engagement picture: paths, final poses, elimination marks."""
    states = [r for r in records if r["kind"] == "state"]
    elims = [r for r in records if r["kind"] == "elimination"]
    fig, ax = plt.subplots(figsize=(7, 7))
    if states:
        paths: dict[int, tuple[int, list, list]] = {}
        for rec in states:
            for aid, side, alive, x, y, *_ in rec["agents"]:
                if not alive:
                    continue
                entry = paths.setdefault(aid, (side, [], []))
                entry[1].append(x)
                entry[2].append(y)
        for side, xs, ys in paths.values():
            color = "tab:blue" if side == SIDE_CONTROLLED else "tab:red"
            ax.plot(xs, ys, color=color, lw=0.6, alpha=0.5)
            ax.plot(xs[-1], ys[-1], "o", color=color, ms=3)
        n_controlled = sum(1 for a in states[0]["agents"]
                           if a[1] == SIDE_CONTROLLED)
        for rec in elims:
            aid = n_controlled + rec["adversary"]
            for s in reversed(states):
                if s["t"] <= rec["t"]:
                    agent = next((a for a in s["agents"] if a[0] == aid), None)
                    if agent is not None:
                        ax.plot(agent[3], agent[4], "x", color="black", ms=8)
                    break
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title("engagement rollout")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
