"""The engagement MDP: scenarios, action decoding, stepping, rewards, staging.

A decision step decodes the policy action into group control distributions,
clusters the controlled swarm, samples per-agent accelerations, advances both
swarms through the simulation substeps with elimination checks after each,
then refits the mixture observations and scores the step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .control import (
    VICSEK,
    AdversaryBehavior,
    GroupControl,
    assign_groups,
    sample_swarm_controls,
    scripted_adversary_controls,
    vicsek_step,
)
from .dynamics import (
    DEFAULT_LIMITS,
    ZERO_CONTROL,
    AgentState,
    Limits,
    SwarmState,
    step_swarm,
    wrap_angle,
)
from .estimation import GmmParams, build_observation, fit_gmm

SUCCESS = "Success"
BREACH = "Breach"
TIMEOUT = "Timeout"
RUNNING = "Running"

R1 = "R1"
R2 = "R2"


@dataclass(frozen=True)
class InitDistribution:
    """Per-field Normal sampling parameters for initial agent states."""

    mean_x: float = 0.0
    std_x: float = 0.0
    mean_y: float = 0.0
    std_y: float = 0.0
    mean_theta: float = 0.0
    std_theta: float = 0.0
    mean_v: float = 60.0
    std_v: float = 0.0
    mean_omega: float = 0.0
    std_omega: float = 0.0

    def sample(self, n: int, limits: Limits,
               rng: np.random.Generator) -> SwarmState:
        """Draw n agent states; headings wrapped, speeds clamped to limits.

        Fields are drawn x, y, theta, v, omega in agent order; zero stds
        reproduce the means exactly.
        """
        agents = []
        for _ in range(n):
            x = rng.normal(self.mean_x, self.std_x)
            y = rng.normal(self.mean_y, self.std_y)
            theta = wrap_angle(rng.normal(self.mean_theta, self.std_theta))
            v = min(max(rng.normal(self.mean_v, self.std_v), limits.v_min),
                    limits.v_max)
            omega = min(max(rng.normal(self.mean_omega, self.std_omega),
                            limits.w_min), limits.w_max)
            agents.append(AgentState(x=x, y=y, theta=theta, v=v, omega=omega))
        return SwarmState(agents, [True] * n)


@dataclass(frozen=True)
class RewardWeights:
    r_elim: float = 0.5
    c_time: float = 0.02
    b_cover: float = 0.25
    b_success: float = 5.0
    b_breach: float = 5.0

    def __post_init__(self) -> None:
        for name in ("r_elim", "c_time", "b_cover", "b_success", "b_breach"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class ActionBounds:
    """Ranges the unit-box action channels are scaled into."""

    u_v_min: float = -30.0
    u_v_max: float = 30.0
    u_w_min: float = -0.5
    u_w_max: float = 0.5
    var_v_max: float = 25.0
    var_w_max: float = 0.25

    def __post_init__(self) -> None:
        if self.u_v_min >= self.u_v_max or self.u_w_min >= self.u_w_max:
            raise ValueError("mean-channel bounds must satisfy min < max")
        if self.var_v_max < 0.0 or self.var_w_max < 0.0:
            raise ValueError("variance bounds must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one engagement setup."""

    name: str = "easy"
    n_controlled: int = 20
    n_adversarial: int = 10
    controlled_init: InitDistribution = field(default_factory=InitDistribution)
    adversarial_init: InitDistribution = field(default_factory=InitDistribution)
    adversary_behavior: AdversaryBehavior = field(default_factory=AdversaryBehavior)
    reward_mode: str = R1
    max_decision_steps: int = 40
    x_goal: float = -500.0
    limits: Limits = DEFAULT_LIMITS
    map_scale: float = 10_000.0
    n_cluster: int = 3
    n_group_max: int = 5
    impact_distance: float = 30.0
    kamikaze: bool = False
    bounds: ActionBounds = field(default_factory=ActionBounds)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    kmeans_n_init: int = 10
    gmm_tol: float = 0.01
    gmm_max_iter: int = 100

    def __post_init__(self) -> None:
        if self.n_controlled < 1 or self.n_adversarial < 1:
            raise ValueError("both swarms need at least one agent")
        if self.max_decision_steps < 1:
            raise ValueError("max_decision_steps must be >= 1")
        if self.reward_mode not in (R1, R2):
            raise ValueError(f"reward_mode must be {R1} or {R2}")
        if self.n_cluster < 1 or self.n_group_max < 1:
            raise ValueError("n_cluster and n_group_max must be >= 1")
        if self.impact_distance <= 0.0:
            raise ValueError("impact_distance must be positive")
        if self.map_scale <= 0.0:
            raise ValueError("map_scale must be positive")

    @property
    def action_dim(self) -> int:
        return 1 + 4 * self.n_group_max

    @property
    def observation_dim(self) -> int:
        return 12 * self.n_cluster


@dataclass(frozen=True)
class EliminationEvent:
    adversary_index: int
    multiplicity: int
    time: float

    def __post_init__(self) -> None:
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")


@dataclass
class StepResult:
    """One decision step's outcome; iterates as (obs, reward, done, info)."""

    observation: np.ndarray
    reward: float
    done: bool
    reason: str
    info: dict

    def __iter__(self):
        yield self.observation
        yield self.reward
        yield self.done
        yield {"reason": self.reason, **self.info}


def decode_action(raw: np.ndarray, n_group_max: int,
                  bounds: ActionBounds) -> tuple[int, list[GroupControl]]:
    """Map a [-1,1] policy vector to a group count and group distributions.

    Channel 0 is binned uniformly into 1..n_group_max (the +1 edge lands in
    the top bin). Each group then owns four channels: mean acceleration
    channels scale linearly into their configured ranges and variance
    channels scale into [0, var_max]. Only the first n_group groups are
    returned; trailing channels are ignored. Inputs are clamped to the box.
    """
    a = np.clip(np.asarray(raw, dtype=float).reshape(-1), -1.0, 1.0)
    if len(a) != 1 + 4 * n_group_max:
        raise ValueError(
            f"action length {len(a)} != {1 + 4 * n_group_max}")
    n_group = 1 + int(math.floor((a[0] + 1.0) / 2.0 * n_group_max))
    n_group = min(max(n_group, 1), n_group_max)

    def to_range(r: float, lo: float, hi: float) -> float:
        return lo + (r + 1.0) / 2.0 * (hi - lo)

    groups = []
    for g in range(n_group):
        mv, mw, vv, vw = a[1 + 4 * g: 5 + 4 * g]
        groups.append(GroupControl(
            mu_v=to_range(mv, bounds.u_v_min, bounds.u_v_max),
            mu_w=to_range(mw, bounds.u_w_min, bounds.u_w_max),
            var_v=to_range(vv, 0.0, bounds.var_v_max),
            var_w=to_range(vw, 0.0, bounds.var_w_max),
        ))
    return n_group, groups


def apply_eliminations(
    controlled: SwarmState,
    adversarial: SwarmState,
    impact_distance: float,
    now: float,
    kamikaze: bool = False,
) -> list[EliminationEvent]:
    """Kill every alive adversary within impact range of an alive controlled
    unit; mutates the alive masks in place and returns the events.

    Multiplicity counts the controlled units in range at this substep, from
    the snapshot taken before any elimination. With kamikaze set, each kill
    also consumes the nearest still-alive controlled unit in range.
    """
    adv_idx = adversarial.alive_indices()
    ctl_idx = controlled.alive_indices()
    if not adv_idx or not ctl_idx:
        return []
    adv_pos = np.array([[adversarial.agents[i].x, adversarial.agents[i].y]
                        for i in adv_idx])
    ctl_pos = np.array([[controlled.agents[i].x, controlled.agents[i].y]
                        for i in ctl_idx])
    d2 = np.sum((adv_pos[:, None, :] - ctl_pos[None, :, :]) ** 2, axis=2)
    within = d2 <= impact_distance ** 2
    events = []
    for row, ai in enumerate(adv_idx):
        hits = np.nonzero(within[row])[0]
        if len(hits) == 0:
            continue
        adversarial.alive[ai] = False
        events.append(EliminationEvent(adversary_index=ai,
                                       multiplicity=len(hits), time=now))
        if kamikaze:
            for col in hits[np.argsort(d2[row, hits])]:
                ci = ctl_idx[int(col)]
                if controlled.alive[ci]:
                    controlled.alive[ci] = False
                    break
    return events


def compute_reward(events: list[EliminationEvent], done_reason: str,
                   mode: str, w: RewardWeights) -> float:
    """Elimination payoff minus time cost, plus terminal bonuses.

    R2 adds a coverage bonus for every event whose multiplicity is at least
    two, so an R2 score never falls below the R1 score of the same step.
    """
    r = w.r_elim * len(events) - w.c_time
    if mode == R2:
        r += w.b_cover * sum(1 for e in events if e.multiplicity >= 2)
    elif mode != R1:
        raise ValueError(f"unknown reward mode {mode!r}")
    if done_reason == SUCCESS:
        r += w.b_success
    elif done_reason == BREACH:
        r -= w.b_breach
    return r


def check_termination(adversarial: SwarmState, breached: bool,
                      t_decision: int, cfg: ScenarioConfig) -> str:
    """Success beats Breach beats Timeout; otherwise Running.

    breached is the sticky entered-the-goal-region flag maintained by the
    stepping loop.
    """
    if adversarial.n_alive == 0:
        return SUCCESS
    if breached:
        return BREACH
    if t_decision >= cfg.max_decision_steps:
        return TIMEOUT
    return RUNNING


def curriculum_advance(successes, stage: int, n_stages: int,
                       window: int = 50, threshold: float = 0.8) -> int:
    """Move to the next stage on a filled, passing success window.

    successes holds outcomes of episodes completed at the current stage,
    newest last. Advancement needs at least window entries with a success
    rate >= threshold over the last window; stages never regress and the
    final stage absorbs.
    """
    if stage >= n_stages - 1:
        return stage
    recent = list(successes)[-window:]
    if len(recent) >= window and sum(recent) / window >= threshold:
        return stage + 1
    return stage


class EngagementEnv:
    """Stateful episode runner for one ScenarioConfig."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng: np.random.Generator | None = None
        self.controlled: SwarmState | None = None
        self.adversarial: SwarmState | None = None
        self.t_decision = 0
        self.sim_time = 0.0
        self.breached = False
        self.done = True
        self._gmm_ctl: GmmParams | None = None
        self._gmm_adv: GmmParams | None = None

    def reset(self, rng: np.random.Generator | int) -> np.ndarray:
        """Sample both swarms and return the initial observation."""
        cfg = self.cfg
        self.rng = (rng if isinstance(rng, np.random.Generator)
                    else np.random.default_rng(rng))
        self.controlled = cfg.controlled_init.sample(
            cfg.n_controlled, cfg.limits, self.rng)
        self.adversarial = cfg.adversarial_init.sample(
            cfg.n_adversarial, cfg.limits, self.rng)
        self.t_decision = 0
        self.sim_time = 0.0
        self.breached = False
        self.done = False
        self._gmm_ctl = None
        self._gmm_adv = None
        return self._observe()

    def _fit(self, swarm: SwarmState, last: GmmParams | None) -> GmmParams:
        cfg = self.cfg
        alive = swarm.positions(alive_only=True)
        if len(alive) == 0:
            if last is None:
                raise ValueError("empty swarm")
            return last
        return fit_gmm(alive, cfg.n_cluster, tol=cfg.gmm_tol,
                       max_iter=cfg.gmm_max_iter, rng=self.rng)

    def _observe(self) -> np.ndarray:
        self._gmm_ctl = self._fit(self.controlled, self._gmm_ctl)
        self._gmm_adv = self._fit(self.adversarial, self._gmm_adv)
        return build_observation(self._gmm_ctl, self._gmm_adv,
                                 scale=self.cfg.map_scale)

    def step(self, action: np.ndarray, recorder=None) -> StepResult:
        """Run one decision step of the engagement pipeline.

        recorder, when given, receives on_decision before the substeps and
        on_substep(t, controlled, adversarial, events) after each one; the
        trajectory writer implements that interface.
        """
        if self.done:
            raise RuntimeError("episode is done; call reset")
        cfg = self.cfg
        t_wall = time.perf_counter()

        n_group, groups = decode_action(action, cfg.n_group_max, cfg.bounds)
        alive_idx = self.controlled.alive_indices()
        grouping = assign_groups(self.controlled.positions(alive_only=True),
                                 n_group, rng=self.rng,
                                 n_init=cfg.kmeans_n_init)
        alive_controls = sample_swarm_controls(groups[:grouping.n_group],
                                               grouping.labels, self.rng)
        controls = [ZERO_CONTROL] * len(self.controlled)
        for i, c in zip(alive_idx, alive_controls):
            controls[i] = c

        behavior = cfg.adversary_behavior
        adv_controls = None
        if behavior.kind != VICSEK:
            adv_controls = scripted_adversary_controls(
                self.adversarial, behavior, self.sim_time)
        if recorder is not None:
            recorder.on_decision(self.sim_time, self.t_decision,
                                 grouping.n_group, grouping.centers,
                                 groups[:grouping.n_group])

        events: list[EliminationEvent] = []
        for _ in range(cfg.limits.substeps_per_decision):
            self.sim_time += cfg.limits.dt_sim
            self.controlled = step_swarm(self.controlled, controls,
                                         cfg.limits, cfg.limits.dt_sim)
            if behavior.kind == VICSEK:
                self.adversarial = vicsek_step(self.adversarial,
                                               behavior.vicsek,
                                               cfg.limits.dt_sim, self.rng)
            else:
                self.adversarial = step_swarm(self.adversarial, adv_controls,
                                              cfg.limits, cfg.limits.dt_sim)
            sub_events = apply_eliminations(
                self.controlled, self.adversarial, cfg.impact_distance,
                self.sim_time, kamikaze=cfg.kamikaze)
            events.extend(sub_events)
            for i in self.adversarial.alive_indices():
                if self.adversarial.agents[i].x <= cfg.x_goal:
                    self.breached = True
            if recorder is not None:
                recorder.on_substep(self.sim_time, self.controlled,
                                    self.adversarial, sub_events)

        self.t_decision += 1
        reason = check_termination(self.adversarial, self.breached,
                                   self.t_decision, cfg)
        obs = self._observe()
        reward = compute_reward(events, reason, cfg.reward_mode, cfg.rewards)
        self.done = reason != RUNNING
        info = {
            "events": events,
            "n_group": grouping.n_group,
            "group_centers": grouping.centers,
            "group_controls": groups[:grouping.n_group],
            "n_adv_alive": self.adversarial.n_alive,
            "n_ctl_alive": self.controlled.n_alive,
            "t_decision": self.t_decision,
            "sim_time": self.sim_time,
            "wall_time": time.perf_counter() - t_wall,
        }
        return StepResult(observation=obs, reward=reward,
                          done=self.done, reason=reason, info=info)
