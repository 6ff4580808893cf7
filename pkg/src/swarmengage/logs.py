"""Structured run outputs: trajectory JSONL, metrics/timing CSV, aggregation.

The trajectory log is line-delimited JSON with a versioned header, one state
record per simulation substep plus decision and elimination records. Episode
metrics are plain CSV; wall-clock goes to a sibling timing file so metrics
stay byte-identical across same-seed runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SwarmState

TRAJECTORY_FORMAT = "swarmengage-trajectory"
TRAJECTORY_VERSION = 1
# per-agent tuple layout inside "state" records
AGENT_FIELDS = ("id", "side", "alive", "x", "y", "theta", "v", "omega")
SIDE_CONTROLLED = 0
SIDE_ADVERSARIAL = 1

METRICS_COLUMNS = ("episode", "stage", "return", "eliminations", "steps",
                   "env_steps")
TIMING_COLUMNS = ("episode", "wall_clock_s")


class TrajectoryWriter:
    """Streams one episode's records to a JSONL file.

    Acts as the recorder consumed by EngagementEnv.step: on_decision is
    called once per decision step before its substeps, on_substep after each
    substep (with that substep's elimination events).
    """

    def __init__(self, path: str, meta: dict | None = None):
        self._fh = open(path, "w", encoding="utf-8")
        header = {"format": TRAJECTORY_FORMAT, "version": TRAJECTORY_VERSION,
                  "agent_fields": list(AGENT_FIELDS), **(meta or {})}
        self._write(header)

    def _write(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")

    @staticmethod
    def _agents(swarm: SwarmState, side: int, offset: int = 0) -> list[list]:
        return [[offset + i, side, int(ok), a.x, a.y, a.theta, a.v, a.omega]
                for i, (a, ok) in enumerate(zip(swarm.agents, swarm.alive))]

    def on_state(self, t: float, controlled: SwarmState,
                 adversarial: SwarmState) -> None:
        agents = (self._agents(controlled, SIDE_CONTROLLED)
                  + self._agents(adversarial, SIDE_ADVERSARIAL,
                                 offset=len(controlled)))
        self._write({"kind": "state", "t": t, "agents": agents})

    def on_decision(self, t: float, step: int, n_group: int,
                    centers: np.ndarray, controls) -> None:
        self._write({
            "kind": "decision", "t": t, "step": step, "n_group": n_group,
            "centers": [[float(x), float(y)] for x, y in centers],
            "controls": [[g.mu_v, g.mu_w, g.var_v, g.var_w] for g in controls],
        })

    def on_substep(self, t: float, controlled: SwarmState,
                   adversarial: SwarmState, events) -> None:
        for e in events:
            self._write({"kind": "elimination", "t": e.time,
                         "adversary": e.adversary_index,
                         "multiplicity": e.multiplicity})
        self.on_state(t, controlled, adversarial)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trajectory(path: str) -> tuple[dict, list[dict]]:
    """Load (header, records) from a trajectory JSONL file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"empty trajectory file: {path}")
    header = json.loads(lines[0])
    if header.get("format") != TRAJECTORY_FORMAT:
        raise ValueError(f"not a trajectory file: {path}")
    return header, [json.loads(line) for line in lines[1:]]


def replay_max_error(records: list[dict]) -> float:
    """Largest deviation of logged motion from the arc-step kinematics.

    For every pair of consecutive state records, each agent alive in both is
    re-advanced from its earlier pose using the later record's speed and turn
    rate (the values that were held over that substep), and compared with the
    logged position. Flocking adversaries move along their post-alignment
    heading instead and are skipped (their logged omega is zero and theta
    jumps discontinuously); unicycle agents must match to rounding error.
    """
    states = [r for r in records if r["kind"] == "state"]
    worst = 0.0
    for prev, cur in zip(states, states[1:]):
        dt = cur["t"] - prev["t"]
        by_id = {a[0]: a for a in prev["agents"]}
        for a in cur["agents"]:
            p = by_id.get(a[0])
            if p is None or not (p[2] and a[2]):
                continue
            _, _, _, x0, y0, th0, _, _ = p
            _, _, _, x1, y1, th1, v1, w1 = a
            if w1 == 0.0 and abs(th1 - th0) > 1e-9:
                continue  # heading jump without turn rate: flocking update
            half = 0.5 * w1 * dt
            chord = v1 * dt * (math.sin(half) / half if abs(half) > 1e-12
                               else 1.0)
            ex = x0 + chord * math.cos(th0 + half) - x1
            ey = y0 + chord * math.sin(th0 + half) - y1
            worst = max(worst, math.hypot(ex, ey))
    return worst


# ---------------------------------------------------------------------------
# Metrics / timing CSV
# ---------------------------------------------------------------------------

@dataclass
class MetricsWriter:
    """Deterministic per-episode metrics plus a sibling wall-clock file."""

    metrics_path: str
    timing_path: str

    def __post_init__(self):
        self._mfh = open(self.metrics_path, "w", newline="", encoding="utf-8")
        self._tfh = open(self.timing_path, "w", newline="", encoding="utf-8")
        self._mcsv = csv.writer(self._mfh)
        self._tcsv = csv.writer(self._tfh)
        self._mcsv.writerow(METRICS_COLUMNS)
        self._tcsv.writerow(TIMING_COLUMNS)

    def write(self, episode: int, stage: int, ret: float, eliminations: int,
              steps: int, env_steps: int, wall_clock_s: float) -> None:
        self._mcsv.writerow([episode, stage, repr(float(ret)), eliminations,
                             steps, env_steps])
        self._tcsv.writerow([episode, repr(float(wall_clock_s))])

    def flush(self) -> None:
        self._mfh.flush()
        self._tfh.flush()

    def close(self) -> None:
        self._mfh.close()
        self._tfh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> list[dict]:
    """Parse metrics.csv rows into typed dicts; raises naming a bad line."""
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(METRICS_COLUMNS):
            raise ValueError(f"unexpected metrics header in {path}: {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "episode": int(row[0]),
                    "stage": int(row[1]),
                    "return": float(row[2]),
                    "eliminations": int(row[3]),
                    "steps": int(row[4]),
                    "env_steps": int(row[5]),
                })
            except (ValueError, IndexError) as exc:
                raise ValueError(
                    f"malformed metrics row at {path}:{lineno}: {row}") from exc
    return rows


def aggregate_metrics(rows: list[dict], window: int = 20) -> list[dict]:
    """Smoothed return vs environment steps with stage markers.

    Each output row carries the trailing moving-average return over up to
    window episodes and a stage_change flag on rows where the stage differs
    from the previous episode's.
    """
    out = []
    returns = []
    prev_stage = None
    for row in rows:
        returns.append(row["return"])
        smooth = float(np.mean(returns[-window:]))
        out.append({
            "env_steps": row["env_steps"],
            "episode": row["episode"],
            "stage": row["stage"],
            "return": row["return"],
            "return_smoothed": smooth,
            "stage_change": int(prev_stage is not None
                                and row["stage"] != prev_stage),
        })
        prev_stage = row["stage"]
    return out


AGGREGATE_COLUMNS = ("env_steps", "episode", "stage", "return",
                     "return_smoothed", "stage_change")


def write_aggregate(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            writer.writerow([r["env_steps"], r["episode"], r["stage"],
                             repr(float(r["return"])),
                             repr(float(r["return_smoothed"])),
                             r["stage_change"]])
