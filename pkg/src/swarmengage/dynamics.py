"""Discrete-time unicycle kinematics for individual agents and whole swarms.

Each agent carries position, heading, forward speed and angular rate.
Acceleration commands update speed and angular rate first; the pose then
integrates along the resulting circular arc (straight line when the turn
rate is negligible).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

# Below this turn rate the arc update degenerates numerically and the exact
# straight-line limit is used instead.
OMEGA_EPS = 1e-6


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]; identity when already inside."""
    if -math.pi < theta <= math.pi:
        return theta
    return math.pi - (math.pi - theta) % TWO_PI


@dataclass(frozen=True)
class AgentState:
    """Kinematic state of one agent: planar pose plus speed and turn rate."""

    x: float
    y: float
    theta: float
    v: float
    omega: float

    def is_finite(self) -> bool:
        return all(
            math.isfinite(f) for f in (self.x, self.y, self.theta, self.v, self.omega)
        )


@dataclass(frozen=True)
class ControlInput:
    """Acceleration command: forward (m/s^2) and angular (rad/s^2)."""

    u_v: float
    u_w: float


ZERO_CONTROL = ControlInput(0.0, 0.0)


@dataclass(frozen=True)
class Limits:
    """Actuator bounds and timestep configuration.

    dt_rl must be a positive integer multiple of dt_sim; the ratio is the
    number of simulation substeps per decision step.
    """

    v_min: float
    v_max: float
    w_min: float
    w_max: float
    dt_sim: float
    dt_rl: float

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError(f"v_min must be < v_max, got [{self.v_min}, {self.v_max}]")
        if not self.w_min < self.w_max:
            raise ValueError(f"w_min must be < w_max, got [{self.w_min}, {self.w_max}]")
        if not self.dt_sim > 0:
            raise ValueError(f"dt_sim must be positive, got {self.dt_sim}")
        ratio = self.dt_rl / self.dt_sim
        if ratio < 0.5 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"dt_rl ({self.dt_rl}) must be a positive integer multiple of "
                f"dt_sim ({self.dt_sim})"
            )

    @property
    def substeps_per_decision(self) -> int:
        return round(self.dt_rl / self.dt_sim)

    @classmethod
    def unbounded(cls, dt_sim: float = 0.1, dt_rl: float | None = None) -> "Limits":
        """Limits that never clamp; useful for analytic tests."""
        inf = float("inf")
        return cls(-inf, inf, -inf, inf, dt_sim, dt_rl if dt_rl is not None else dt_sim)


#: Default actuator bounds: speed 30..300 m/s, turn rate +-pi/5 rad/s,
#: 0.1 s simulation substep, 1 s decision step.
DEFAULT_LIMITS = Limits(
    v_min=30.0,
    v_max=300.0,
    w_min=-math.pi / 5.0,
    w_max=math.pi / 5.0,
    dt_sim=0.1,
    dt_rl=1.0,
)


def apply_limits(s: AgentState, limits: Limits) -> AgentState:
    """Clamp speed and turn rate to their bounds and wrap the heading."""
    return replace(
        s,
        theta=wrap_angle(s.theta),
        v=min(max(s.v, limits.v_min), limits.v_max),
        omega=min(max(s.omega, limits.w_min), limits.w_max),
    )


def step_agent(
    s: AgentState,
    u: ControlInput,
    limits: Limits,
    dt: float | None = None,
) -> AgentState:
    """Advance one agent by one simulation substep.

    Speed and turn rate are updated from the command and clamped first; the
    pose then integrates with the clamped values, so the position follows a
    circular arc of radius v/omega (a straight segment when |omega| is below
    OMEGA_EPS, the removable-singularity limit of the arc terms).
    """
    if dt is None:
        dt = limits.dt_sim
    v = s.v + u.u_v * dt
    omega = s.omega + u.u_w * dt
    v = min(max(v, limits.v_min), limits.v_max)
    omega = min(max(omega, limits.w_min), limits.w_max)

    # Arc rows in half-angle form: (v/w)(sin(th + w dt) - sin th) equals
    # v dt sinc(w dt / 2) cos(th + w dt / 2), which avoids the catastrophic
    # cancellation of the raw difference when |w| is small. Below OMEGA_EPS
    # the sinc factor is 1 to machine precision and the step is a straight
    # segment of length v dt.
    half = 0.5 * omega * dt
    if abs(omega) < OMEGA_EPS:
        chord = v * dt
    else:
        chord = v * dt * math.sin(half) / half
    x = s.x + chord * math.cos(s.theta + half)
    y = s.y + chord * math.sin(s.theta + half)
    theta = wrap_angle(s.theta + omega * dt)
    return AgentState(x=x, y=y, theta=theta, v=v, omega=omega)


@dataclass
class SwarmState:
    """Ordered collection of agents with per-agent alive flags.

    Eliminated agents keep their last state and are never propagated.
    """

    agents: list[AgentState]
    alive: list[bool]

    def __post_init__(self):
        if len(self.agents) != len(self.alive):
            raise ValueError(
                f"agents ({len(self.agents)}) and alive ({len(self.alive)}) "
                "must have equal length"
            )

    def __len__(self) -> int:
        return len(self.agents)

    @property
    def n_alive(self) -> int:
        return sum(self.alive)

    def alive_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.alive) if a]

    def positions(self, alive_only: bool = True) -> np.ndarray:
        """Positions as an (n, 2) array, restricted to alive agents by default."""
        if alive_only:
            pts = [(a.x, a.y) for a, ok in zip(self.agents, self.alive) if ok]
        else:
            pts = [(a.x, a.y) for a in self.agents]
        return np.asarray(pts, dtype=float).reshape(-1, 2)

    def copy(self) -> "SwarmState":
        return SwarmState(list(self.agents), list(self.alive))


def step_swarm(
    swarm: SwarmState,
    controls: list[ControlInput],
    limits: Limits,
    dt: float | None = None,
) -> SwarmState:
    """Advance every alive agent by one substep; dead agents are untouched."""
    if len(controls) != len(swarm):
        raise ValueError(
            f"got {len(controls)} controls for {len(swarm)} agents"
        )
    agents = [
        step_agent(a, u, limits, dt) if ok else a
        for a, u, ok in zip(swarm.agents, controls, swarm.alive)
    ]
    return SwarmState(agents, list(swarm.alive))
