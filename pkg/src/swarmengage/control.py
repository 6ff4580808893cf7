"""Group-level control distributions, k-means grouping, and adversary models.

The policy emits one Normal(mean, variance) acceleration command per group;
each group member samples its own control from that distribution. Group
membership is recomputed every decision step by k-means on agent positions.
Adversaries follow either scripted goal-seeking controllers or Vicsek-style
flocking.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlInput, SwarmState, wrap_angle


@dataclass(frozen=True)
class GroupControl:
    """Mean and variance of the acceleration commands for one group."""

    mu_v: float
    mu_w: float
    var_v: float
    var_w: float

    def __post_init__(self):
        if self.var_v < 0 or self.var_w < 0:
            raise ValueError(f"variances must be nonnegative, got {self}")


@dataclass
class GroupAssignment:
    """Result of clustering agent positions into groups.

    n_group may be smaller than requested when there are fewer alive agents
    than groups; `clamped` records that.
    """

    n_group: int
    labels: np.ndarray          # (n,) int, values in [0, n_group)
    centers: np.ndarray         # (n_group, 2), sorted by (x, y)
    inertia: float              # within-cluster sum of squared distances
    n_requested: int

    @property
    def clamped(self) -> bool:
        return self.n_group < self.n_requested


@dataclass(frozen=True)
class VicsekParams:
    """Flocking parameters: alignment radius, heading noise, constant speed."""

    radius: float
    noise_std: float
    speed: float

    def __post_init__(self):
        if self.radius <= 0 or self.noise_std < 0 or self.speed <= 0:
            raise ValueError(f"invalid Vicsek parameters {self}")


def sample_agent_control(g: GroupControl, rng: np.random.Generator) -> ControlInput:
    """Draw one agent's control from the group distribution.

    Draw order is u_v then u_w from the supplied stream; zero variance
    returns the mean exactly.
    """
    u_v = rng.normal(g.mu_v, math.sqrt(g.var_v))
    u_w = rng.normal(g.mu_w, math.sqrt(g.var_w))
    return ControlInput(u_v, u_w)


def sample_swarm_controls(
    groups: list[GroupControl],
    labels: np.ndarray,
    rng: np.random.Generator,
) -> list[ControlInput]:
    """Per-agent controls sampled in agent order from each agent's group."""
    return [sample_agent_control(groups[int(lbl)], rng) for lbl in labels]


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then proportional to D^2."""
    n = points.shape[0]
    centers = np.empty((k, 2))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _nearest(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels and squared distances to the nearest center (ties: lowest index)."""
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(points)), labels]


def lloyd_iterations(
    points: np.ndarray,
    centers: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Run Lloyd's algorithm from the given centers.

    Returns (centers, labels, inertia, cost_history); stops when the largest
    center shift drops below tol. Empty clusters are reseeded on the point
    farthest from its center.
    """
    centers = centers.copy()
    k = centers.shape[0]
    history = []
    labels, d2 = _nearest(points, centers)
    for _ in range(max_iter):
        history.append(float(d2.sum()))
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centers[j] = points[mask].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                new_centers[j] = points[far]
                d2[far] = 0.0
        shift = np.max(np.sqrt(np.sum((new_centers - centers) ** 2, axis=1)))
        centers = new_centers
        labels, d2 = _nearest(points, centers)
        if shift < tol:
            break
    history.append(float(d2.sum()))
    return centers, labels, float(d2.sum()), history


def _partition_cost(points: np.ndarray, labels: np.ndarray, k: int) -> float:
    cost = 0.0
    for c in range(k):
        members = points[labels == c]
        if len(members):
            cost += float(((members - members.mean(axis=0)) ** 2).sum())
    return cost


def _local_search_refine(
    points: np.ndarray, labels: np.ndarray, k: int, swaps: bool
) -> np.ndarray:
    """Apply single-point moves (and optionally pair swaps) while they lower cost.

    Lloyd fixed points are only Voronoi-consistent; the optimal partition can
    still be improved by moving one point between clusters or exchanging a
    pair (the deltas account for the centroid shift). Moves that would empty
    a cluster are skipped.
    """
    labels = labels.copy()
    n = len(points)
    for _ in range(4 * n * k):
        counts = np.bincount(labels, minlength=k)
        centers = np.zeros((k, 2))
        for c in range(k):
            if counts[c]:
                centers[c] = points[labels == c].mean(axis=0)
        best_delta, best_labels = -1e-12, None
        for i in range(n):
            a = labels[i]
            if counts[a] <= 1:
                continue
            loss_removed = counts[a] / (counts[a] - 1) * np.sum((points[i] - centers[a]) ** 2)
            for b in range(k):
                if b == a:
                    continue
                delta = counts[b] / (counts[b] + 1) * np.sum((points[i] - centers[b]) ** 2) - loss_removed
                if delta < best_delta:
                    cand = labels.copy()
                    cand[i] = b
                    best_delta, best_labels = delta, cand
        if best_labels is None and swaps:
            base = _partition_cost(points, labels, k)
            for i in range(n):
                for j in range(i + 1, n):
                    if labels[i] == labels[j]:
                        continue
                    cand = labels.copy()
                    cand[i], cand[j] = cand[j], cand[i]
                    delta = _partition_cost(points, cand, k) - base
                    if delta < best_delta:
                        best_delta, best_labels = delta, cand
        if best_labels is None:
            break
        labels = best_labels
    return labels


def _lloyd_batch(
    points: np.ndarray, inits: np.ndarray, tol: float, max_iter: int
) -> tuple[np.ndarray, float]:
    """Run Lloyd's algorithm on a batch of initial center sets in lockstep.

    inits has shape (R, k, 2); returns the centers of the restart with the
    lowest inertia and that inertia. Empty clusters are reseeded on the point
    farthest from its assigned center within the same restart.
    """
    pts = points[None, :, None, :]          # (1, n, 1, 2)
    centers = inits.copy()                  # (R, k, 2)
    r, k, _ = centers.shape
    eye = np.arange(k)
    for _ in range(max_iter):
        d2 = ((pts - centers[:, None, :, :]) ** 2).sum(-1)       # (R, n, k)
        labels = d2.argmin(-1)                                   # (R, n)
        onehot = (labels[:, :, None] == eye).astype(float)       # (R, n, k)
        counts = onehot.sum(1)                                   # (R, k)
        sums = np.einsum("rnk,nd->rkd", onehot, points)
        new_centers = sums / np.maximum(counts, 1.0)[:, :, None]
        empty = counts == 0
        if empty.any():
            nearest = np.take_along_axis(d2, labels[:, :, None], axis=2)[:, :, 0]
            far = nearest.argmax(1)                              # (R,)
            for ri, ki in zip(*np.nonzero(empty)):
                new_centers[ri, ki] = points[far[ri]]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(-1)).max(-1)
        centers = new_centers
        if (shift < tol).all():
            break
    d2 = ((pts - centers[:, None, :, :]) ** 2).sum(-1)
    inertia = d2.min(-1).sum(-1)                                 # (R,)
    best = int(inertia.argmin())
    return centers[best], float(inertia[best])


def assign_groups(
    positions: np.ndarray,
    n_group: int,
    tol: float = 0.01,
    max_iter: int = 100,
    rng: np.random.Generator | None = None,
    n_init: int = 10,
    refine: bool = True,
    refine_swaps: bool = False,
) -> GroupAssignment:
    """Cluster positions into n_group groups with restarted k-means.

    Runs n_init k-means++ seeded Lloyd fits (batched in lockstep), keeps the
    lowest inertia, then applies single-point-move refinement (pair swaps too
    when refine_swaps is set; quadratic, meant for small instances). On small
    inputs every k-subset of the points is also tried as an initialization,
    which in combination with the refinement reliably reaches the optimal
    partition. Centers are sorted by (x, y) before labeling so group indices
    are stable under input permutation. n_group is clamped to the point count
    when it exceeds it.
    """
    points = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = points.shape[0]
    if n == 0:
        raise ValueError("assign_groups requires at least one position")
    if n_group < 1:
        raise ValueError(f"n_group must be >= 1, got {n_group}")
    if rng is None:
        rng = np.random.default_rng()
    requested = n_group
    k = min(n_group, n)

    inits = [_kmeans_pp_init(points, k, rng) for _ in range(n_init)]
    if k > 1 and math.comb(n, k) <= 1000:
        inits.extend(
            points[list(combo)] for combo in itertools.combinations(range(n), k)
        )
    centers, _ = _lloyd_batch(points, np.stack(inits), tol, max_iter)

    if refine and k > 1:
        labels, _ = _nearest(points, centers)
        labels = _local_search_refine(points, labels, k, swaps=refine_swaps)
        centers = np.vstack(
            [points[labels == c].mean(axis=0) if (labels == c).any() else centers[c]
             for c in range(k)]
        )

    order = np.lexsort((centers[:, 1], centers[:, 0]))
    centers = centers[order]
    labels, d2 = _nearest(points, centers)
    return GroupAssignment(
        n_group=k,
        labels=labels,
        centers=centers,
        inertia=float(d2.sum()),
        n_requested=requested,
    )


# ---------------------------------------------------------------------------
# Vicsek flocking
# ---------------------------------------------------------------------------

def vicsek_step(
    swarm: SwarmState,
    p: VicsekParams,
    dt: float,
    rng: np.random.Generator,
) -> SwarmState:
    """One flocking update: align headings with neighbors, advance at constant speed.

    Each alive agent takes the circular mean of the headings of alive agents
    within `radius` (itself included), adds Gaussian heading noise, then moves
    speed*dt along the new heading. Noise draws are consumed in agent order
    for every alive agent.
    """
    alive_idx = swarm.alive_indices()
    if not alive_idx:
        return swarm.copy()
    pos = np.array([[swarm.agents[i].x, swarm.agents[i].y] for i in alive_idx])
    theta = np.array([swarm.agents[i].theta for i in alive_idx])
    d2 = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=2)
    neighbor = d2 <= p.radius**2
    sin_sum = neighbor @ np.sin(theta)
    cos_sum = neighbor @ np.cos(theta)
    mean_heading = np.arctan2(sin_sum, cos_sum)
    noise = rng.normal(0.0, p.noise_std, size=len(alive_idx))

    agents = list(swarm.agents)
    for j, i in enumerate(alive_idx):
        a = swarm.agents[i]
        h = wrap_angle(mean_heading[j] + noise[j])
        agents[i] = type(a)(
            x=a.x + p.speed * dt * math.cos(h),
            y=a.y + p.speed * dt * math.sin(h),
            theta=h,
            v=p.speed,
            omega=0.0,
        )
    return SwarmState(agents, list(swarm.alive))


# ---------------------------------------------------------------------------
# Scripted adversary behaviors
# ---------------------------------------------------------------------------

HOLD_COURSE = "hold_course"
FLY_TO_GOAL = "fly_to_goal"
WAVES = "waves"
VICSEK = "vicsek"

BEHAVIOR_TAGS = (HOLD_COURSE, FLY_TO_GOAL, WAVES, VICSEK)


@dataclass(frozen=True)
class Wave:
    """One adversary wave: a goal point, an activation time, and how many
    agents (taken in index order) belong to it. count=None means the wave
    takes an even share of the remaining agents."""

    goal: tuple[float, float]
    start_time: float = 0.0
    count: int | None = None


@dataclass(frozen=True)
class AdversaryBehavior:
    """Scenario adversary model: a tag plus controller/flocking parameters."""

    kind: str = HOLD_COURSE
    goal: tuple[float, float] | None = None
    waves: tuple[Wave, ...] = ()
    k_w: float = 1.0            # heading gain, 1/s
    k_v: float = 1.0            # speed gain, 1/s
    v_cruise: float = 60.0
    u_w_max: float = 0.5        # rad/s^2 saturation of the heading controller
    u_v_max: float = 30.0       # m/s^2 saturation of the speed controller
    vicsek: VicsekParams | None = None

    def __post_init__(self):
        if self.kind not in BEHAVIOR_TAGS:
            raise ValueError(
                f"unknown adversary behavior {self.kind!r}; expected one of {BEHAVIOR_TAGS}"
            )
        if self.kind == FLY_TO_GOAL and self.goal is None:
            raise ValueError("fly_to_goal behavior requires a goal point")
        if self.kind == WAVES and not self.waves:
            raise ValueError("waves behavior requires at least one wave")
        if self.kind == VICSEK and self.vicsek is None:
            raise ValueError("vicsek behavior requires VicsekParams")


def _goal_controls(agent, goal, b: AdversaryBehavior) -> ControlInput:
    bearing = math.atan2(goal[1] - agent.y, goal[0] - agent.x)
    err = wrap_angle(bearing - agent.theta)
    u_w = min(max(b.k_w * err, -b.u_w_max), b.u_w_max)
    u_v = min(max(b.k_v * (b.v_cruise - agent.v), -b.u_v_max), b.u_v_max)
    return ControlInput(u_v, u_w)


def wave_membership(n_agents: int, waves: tuple[Wave, ...]) -> list[int]:
    """Wave index per agent; contiguous blocks, explicit counts first."""
    remaining = n_agents - sum(w.count for w in waves if w.count is not None)
    open_waves = sum(1 for w in waves if w.count is None)
    members = []
    used = 0
    for j, w in enumerate(waves):
        if w.count is not None:
            c = w.count
        else:
            c = remaining // open_waves
            open_waves -= 1
            remaining -= c
        if j == len(waves) - 1:
            c = n_agents - used
        members.extend([j] * c)
        used += c
    if used != n_agents or len(members) != n_agents:
        raise ValueError(
            f"wave counts {[w.count for w in waves]} do not cover {n_agents} agents"
        )
    return members


def scripted_adversary_controls(
    swarm: SwarmState,
    behavior: AdversaryBehavior,
    t: float,
) -> list[ControlInput]:
    """Per-agent controls for scripted behaviors at simulation time t.

    hold_course returns zeros; fly_to_goal steers every agent toward the goal
    with a proportional heading/speed controller; waves does the same per
    wave once the wave's start time has passed. Dead agents get zeros.
    """
    zeros = ControlInput(0.0, 0.0)
    if behavior.kind == HOLD_COURSE:
        return [zeros] * len(swarm)
    if behavior.kind == FLY_TO_GOAL:
        return [
            _goal_controls(a, behavior.goal, behavior) if ok else zeros
            for a, ok in zip(swarm.agents, swarm.alive)
        ]
    if behavior.kind == WAVES:
        members = wave_membership(len(swarm), behavior.waves)
        out = []
        for a, ok, j in zip(swarm.agents, swarm.alive, members):
            w = behavior.waves[j]
            if ok and t >= w.start_time:
                out.append(_goal_controls(a, w.goal, behavior))
            else:
                out.append(zeros)
        return out
    raise ValueError(f"behavior {behavior.kind!r} has no scripted controls")
