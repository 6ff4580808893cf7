"""Trajectory JSONL and metrics CSV writers, readers, and replay checks."""

import json
import math

import numpy as np
import pytest

from swarmengage.config import apply_overrides, build_scenario, load_config
from swarmengage.dynamics import (
    DEFAULT_LIMITS,
    AgentState,
    ControlInput,
    SwarmState,
    step_agent,
)
from swarmengage.environment import EngagementEnv
from swarmengage.logs import (
    AGENT_FIELDS,
    AGGREGATE_COLUMNS,
    METRICS_COLUMNS,
    SIDE_ADVERSARIAL,
    SIDE_CONTROLLED,
    TRAJECTORY_FORMAT,
    TRAJECTORY_VERSION,
    MetricsWriter,
    TrajectoryWriter,
    aggregate_metrics,
    read_metrics,
    read_trajectory,
    replay_max_error,
    write_aggregate,
)


def _swarm(poses):
    agents = [AgentState(x=x, y=y, theta=t, v=v, omega=w)
              for x, y, t, v, w in poses]
    return SwarmState(agents=agents, alive=[True] * len(agents))


def _small_env(seed):
    cfg = apply_overrides(load_config(None), [
        "scenarios.easy.n_controlled=5",
        "scenarios.easy.n_adversarial=3",
        "grouping.kmeans_n_init=3",
        "scenarios.easy.max_decision_steps=6",
    ])
    env = EngagementEnv(build_scenario(cfg, "easy"))
    rng = np.random.default_rng(seed)
    obs = env.reset(rng)
    return env, rng, obs


def _rollout_to(path, seed):
    env, rng, _ = _small_env(seed)
    with TrajectoryWriter(str(path), meta={"seed": seed}) as w:
        w.on_state(0.0, env.controlled, env.adversarial)
        done = False
        while not done:
            action = rng.uniform(-1.0, 1.0, env.cfg.action_dim)
            result = env.step(action, recorder=w)
            done = result.done
    return read_trajectory(str(path))


def test_header_first_line(tmp_path):
    p = tmp_path / "t.jsonl"
    TrajectoryWriter(str(p), meta={"scenario": "easy", "seed": 3}).close()
    header = json.loads(p.read_text().splitlines()[0])
    assert header["format"] == TRAJECTORY_FORMAT
    assert header["version"] == TRAJECTORY_VERSION
    assert header["agent_fields"] == list(AGENT_FIELDS)
    assert header["scenario"] == "easy" and header["seed"] == 3


def test_state_record_layout(tmp_path):
    p = tmp_path / "t.jsonl"
    ctl = _swarm([(0.0, 1.0, 0.5, 60.0, 0.1), (2.0, 3.0, -0.5, 70.0, 0.0)])
    adv = _swarm([(9.0, 8.0, 3.0, 50.0, 0.0)])
    adv.alive[0] = False
    with TrajectoryWriter(str(p)) as w:
        w.on_state(0.3, ctl, adv)
    _, records = read_trajectory(str(p))
    (rec,) = records
    assert rec["kind"] == "state" and rec["t"] == 0.3
    assert len(rec["agents"]) == 3
    assert rec["agents"][0] == [0, SIDE_CONTROLLED, 1, 0.0, 1.0, 0.5, 60.0, 0.1]
    # adversary ids continue after the controlled block; dead flag preserved
    assert rec["agents"][2][:3] == [2, SIDE_ADVERSARIAL, 0]


def test_decision_and_elimination_records(tmp_path):
    from swarmengage.control import GroupControl
    from swarmengage.environment import EliminationEvent

    p = tmp_path / "t.jsonl"
    ctl = _swarm([(0.0, 0.0, 0.0, 60.0, 0.0)])
    adv = _swarm([(5.0, 0.0, 3.1, 60.0, 0.0)])
    with TrajectoryWriter(str(p)) as w:
        w.on_decision(1.0, 1, 2, np.array([[1.0, 2.0], [3.0, 4.0]]),
                      [GroupControl(0.5, 0.1, 4.0, 0.01)] * 2)
        w.on_substep(1.1, ctl, adv,
                     [EliminationEvent(adversary_index=0, multiplicity=2,
                                       time=1.1)])
    _, records = read_trajectory(str(p))
    assert [r["kind"] for r in records] == ["decision", "elimination", "state"]
    d = records[0]
    assert d["step"] == 1 and d["n_group"] == 2
    assert d["centers"] == [[1.0, 2.0], [3.0, 4.0]]
    assert d["controls"][0] == [0.5, 0.1, 4.0, 0.01]
    e = records[1]
    assert e["adversary"] == 0 and e["multiplicity"] == 2 and e["t"] == 1.1


def test_read_rejects_empty_and_foreign_files(tmp_path):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_trajectory(str(empty))
    foreign = tmp_path / "f.jsonl"
    foreign.write_text('{"format": "something-else"}\n')
    with pytest.raises(ValueError, match="not a trajectory"):
        read_trajectory(str(foreign))


def test_replay_matches_arc_kinematics(tmp_path):
    # hand-built trajectory advanced by the real integrator must replay clean
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p = tmp_path / f"t{seed}.jsonl"
        ctl = _swarm([(rng.uniform(-50, 50), rng.uniform(-50, 50),
                       rng.uniform(-3, 3), rng.uniform(30, 200),
                       rng.uniform(-0.6, 0.6)) for _ in range(4)])
        adv = _swarm([(rng.uniform(100, 200), 0.0, 3.0, 60.0, 0.0)])
        with TrajectoryWriter(str(p)) as w:
            t = 0.0
            w.on_state(t, ctl, adv)
            for _ in range(20):
                controls = [ControlInput(rng.uniform(-30, 30),
                                         rng.uniform(-0.5, 0.5))
                            for _ in ctl.agents]
                ctl.agents = [step_agent(a, c, DEFAULT_LIMITS,
                                         DEFAULT_LIMITS.dt_sim)
                              for a, c in zip(ctl.agents, controls)]
                adv.agents = [step_agent(a, ControlInput(0.0, 0.0),
                                         DEFAULT_LIMITS, DEFAULT_LIMITS.dt_sim)
                              for a in adv.agents]
                t += DEFAULT_LIMITS.dt_sim
                w.on_state(t, ctl, adv)
        _, records = read_trajectory(str(p))
        assert replay_max_error(records) < 1e-9


def test_replay_flags_corrupted_position(tmp_path):
    p = tmp_path / "t.jsonl"
    _, records = _rollout_to(p, seed=0)
    states = [r for r in records if r["kind"] == "state"]
    assert replay_max_error(records) < 1e-9
    states[3]["agents"][0][3] += 5.0
    assert replay_max_error(records) > 1.0


def test_replay_skips_heading_jumps_without_turn_rate(tmp_path):
    # flocking-style update: heading changes while omega stays zero
    p = tmp_path / "t.jsonl"
    a0 = _swarm([(0.0, 0.0, 0.0, 60.0, 0.0)])
    with TrajectoryWriter(str(p)) as w:
        w.on_state(0.0, a0, _swarm([]))
        a1 = _swarm([(6.0 * math.cos(1.0), 6.0 * math.sin(1.0), 1.0,
                      60.0, 0.0)])
        w.on_state(0.1, a1, _swarm([]))
    _, records = read_trajectory(str(p))
    assert replay_max_error(records) == 0.0


def test_env_rollout_replays_and_counts(tmp_path):
    header, records = _rollout_to(tmp_path / "t.jsonl", seed=1)
    assert header["seed"] == 1
    kinds = [r["kind"] for r in records]
    n_decisions = kinds.count("decision")
    n_states = kinds.count("state")
    # one initial state plus substeps_per_decision states per decision step
    assert n_states == 1 + 10 * n_decisions
    assert replay_max_error(records) < 1e-9


def test_same_seed_rollouts_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _rollout_to(p1, seed=4)
    _rollout_to(p2, seed=4)
    assert p1.read_bytes() == p2.read_bytes()
    p3 = tmp_path / "c.jsonl"
    _rollout_to(p3, seed=5)
    assert p1.read_bytes() != p3.read_bytes()


def test_metrics_round_trip(tmp_path):
    mp, tp = tmp_path / "m.csv", tmp_path / "t.csv"
    with MetricsWriter(str(mp), str(tp)) as w:
        w.write(0, 0, -1.2345678901234567, 3, 30, 30, 0.25)
        w.write(1, 1, 6.48, 10, 15, 45, 0.5)
    rows = read_metrics(str(mp))
    assert [r["episode"] for r in rows] == [0, 1]
    assert rows[0]["return"] == -1.2345678901234567
    assert rows[1] == {"episode": 1, "stage": 1, "return": 6.48,
                       "eliminations": 10, "steps": 15, "env_steps": 45}
    # wall clock lives in the sibling file, not in metrics
    assert "0.25" not in mp.read_text()
    assert mp.read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)
    assert tp.read_text().splitlines()[1] == "0,0.25"


def test_metrics_bad_header_rejected(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("episode,other\n0,1\n")
    with pytest.raises(ValueError, match="header"):
        read_metrics(str(p))


def test_metrics_malformed_row_names_location(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(",".join(METRICS_COLUMNS) + "\n"
                 + "0,0,-1.0,2,30,30\n"
                 + "1,0,not-a-number,2,30,60\n")
    with pytest.raises(ValueError, match=rf"{p}:3"):
        read_metrics(str(p))
    p.write_text(",".join(METRICS_COLUMNS) + "\n0,0,-1.0\n")
    with pytest.raises(ValueError, match=rf"{p}:2"):
        read_metrics(str(p))


def _rows(returns, stages=None, steps_per=30):
    stages = stages or [0] * len(returns)
    return [{"episode": i, "stage": s, "return": r, "eliminations": 0,
             "steps": steps_per, "env_steps": steps_per * (i + 1)}
            for i, (r, s) in enumerate(zip(returns, stages))]


def test_aggregate_trailing_window():
    rows = _rows([1.0, 3.0, 5.0, 7.0])
    agg = aggregate_metrics(rows, window=2)
    assert [a["return_smoothed"] for a in agg] == [1.0, 2.0, 4.0, 6.0]
    assert [a["env_steps"] for a in agg] == [30, 60, 90, 120]


def test_aggregate_constant_returns_invariant():
    agg = aggregate_metrics(_rows([2.5] * 50), window=20)
    assert all(a["return_smoothed"] == 2.5 for a in agg)


def test_aggregate_stage_change_flags():
    agg = aggregate_metrics(_rows([0.0] * 6, stages=[0, 0, 1, 1, 1, 2]),
                            window=3)
    assert [a["stage_change"] for a in agg] == [0, 0, 1, 0, 0, 1]


def test_write_aggregate_parses_back(tmp_path):
    p = tmp_path / "agg.csv"
    agg = aggregate_metrics(_rows([1.0, -2.0, 0.125]), window=2)
    write_aggregate(str(p), agg)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(AGGREGATE_COLUMNS)
    assert len(lines) == 4
    last = lines[-1].split(",")
    assert float(last[3]) == 0.125
    assert float(last[4]) == (-2.0 + 0.125) / 2
