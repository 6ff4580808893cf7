"""Twin-delayed deterministic policy gradient learner and training loop.

A deterministic actor with two critics: clipped double-Q targets with
smoothed target actions, delayed actor updates, and Polyak-averaged target
networks. The replay buffer, checkpointing, and the generic step/update loop
live here; the engagement-specific trainer wraps the loop at the bottom.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .neural import (
    IDENTITY,
    RELU,
    TANH,
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
)

CHECKPOINT_MAGIC = b"SWARMENGAGE-CKPT-1\n"


@dataclass(frozen=True)
class Td3Hyper:
    """Learner constants; defaults follow common TD3 practice."""

    gamma: float = 0.99
    rho: float = 0.995
    exploration_noise_std: float = 0.1
    target_noise_std: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    batch_size: int = 256
    warmup_steps: int = 5000
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    capacity: int = 500_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0,1), got {self.gamma}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0,1], got {self.rho}")
        if self.policy_delay < 1:
            raise ValueError(f"policy_delay must be >= 1, got {self.policy_delay}")
        for name in ("exploration_noise_std", "target_noise_std", "noise_clip"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.capacity < 1:
            raise ValueError("batch_size and capacity must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform with-replacement sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._cursor
        self.obs[i] = t.obs
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.done[i] = float(t.done)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self._size == 0:
            raise ValueError("buffer underfilled")
        idx = rng.integers(0, self._size, size=n)
        return Batch(
            obs=self.obs[idx].copy(),
            action=self.action[idx].copy(),
            reward=self.reward[idx].copy(),
            next_obs=self.next_obs[idx].copy(),
            done=self.done[idx].copy(),
        )


@dataclass
class Td3State:
    """Live and target networks plus optimizers and the update counter."""

    actor_spec: MlpSpec
    critic_spec: MlpSpec
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    target_actor: MlpParams
    target_critic1: MlpParams
    target_critic2: MlpParams
    opt_actor: AdamState
    opt_critic1: AdamState
    opt_critic2: AdamState
    hyper: Td3Hyper
    n_updates: int = 0

    @property
    def obs_dim(self) -> int:
        return self.actor_spec.layer_sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor_spec.layer_sizes[-1]


def make_td3(obs_dim: int, act_dim: int, hidden: tuple[int, ...],
             hyper: Td3Hyper, rng: np.random.Generator) -> Td3State:
    """Build actor/critic stacks with the given hidden widths.

    The first hidden layer acts as the feature extractor; critics take the
    observation concatenated with the action at that layer's input. Actor
    heads are Tanh (actions live in [-1,1]); critic heads are linear.
    """
    if len(hidden) < 1:
        raise ValueError("need at least one hidden layer")
    actor_spec = MlpSpec((obs_dim, *hidden, act_dim),
                         (RELU,) * len(hidden) + (TANH,))
    critic_spec = MlpSpec((obs_dim + act_dim, *hidden, 1),
                          (RELU,) * len(hidden) + (IDENTITY,))
    actor = init_mlp(actor_spec, rng)
    critic1 = init_mlp(critic_spec, rng)
    critic2 = init_mlp(critic_spec, rng)
    return Td3State(
        actor_spec=actor_spec,
        critic_spec=critic_spec,
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        target_actor=actor.copy(),
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        opt_actor=init_adam(actor, hyper.lr_actor),
        opt_critic1=init_adam(critic1, hyper.lr_critic),
        opt_critic2=init_adam(critic2, hyper.lr_critic),
        hyper=hyper,
    )


def select_action(state: Td3State, obs: np.ndarray, rng: np.random.Generator,
                  noise_std: float = 0.0, step: int | None = None) -> np.ndarray:
    """Actor output plus per-channel Gaussian noise, clipped to [-1, 1].

    With step given and still inside warmup, returns a uniform random action
    instead so early replay data covers the action box. noise_std=0 is the
    deterministic evaluation path and draws nothing from rng.
    """
    if step is not None and step < state.hyper.warmup_steps:
        return rng.uniform(-1.0, 1.0, size=state.act_dim)
    a, _ = mlp_forward(state.actor, state.actor_spec, np.asarray(obs, dtype=float))
    if noise_std > 0.0:
        a = a + rng.normal(0.0, noise_std, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def compute_target(state: Td3State, batch: Batch,
                   rng: np.random.Generator) -> np.ndarray:
    """Clipped double-Q targets y = r + gamma * (1-d) * min(Q1t, Q2t).

    Target actions are the target actor's outputs plus clipped Gaussian
    smoothing noise, re-clipped into the action box.
    """
    h = state.hyper
    a_next, _ = mlp_forward(state.target_actor, state.actor_spec, batch.next_obs)
    eps = np.clip(rng.normal(0.0, h.target_noise_std, size=a_next.shape),
                  -h.noise_clip, h.noise_clip)
    a_next = np.clip(a_next + eps, -1.0, 1.0)
    qin = np.concatenate([batch.next_obs, a_next], axis=1)
    q1, _ = mlp_forward(state.target_critic1, state.critic_spec, qin)
    q2, _ = mlp_forward(state.target_critic2, state.critic_spec, qin)
    q_min = np.minimum(q1[:, 0], q2[:, 0])
    return batch.reward + h.gamma * (1.0 - batch.done) * q_min


def polyak_update(target: MlpParams, live: MlpParams, rho: float) -> MlpParams:
    """Exponential blend param_t <- rho * param_t + (1 - rho) * param."""
    return MlpParams(
        weights=tuple(rho * t + (1.0 - rho) * s
                      for t, s in zip(target.weights, live.weights)),
        biases=tuple(rho * t + (1.0 - rho) * s
                     for t, s in zip(target.biases, live.biases)),
    )


def critic_loss(state: Td3State, batch: Batch, y: np.ndarray) -> tuple[float, float]:
    """Mean squared TD errors of both critics against targets y."""
    qin = np.concatenate([batch.obs, batch.action], axis=1)
    q1, _ = mlp_forward(state.critic1, state.critic_spec, qin)
    q2, _ = mlp_forward(state.critic2, state.critic_spec, qin)
    return (float(((q1[:, 0] - y) ** 2).mean()),
            float(((q2[:, 0] - y) ** 2).mean()))


def td3_update(state: Td3State, batch: Batch,
               rng: np.random.Generator) -> dict[str, float]:
    """One learner update: critics every call, actor and targets on the delay.

    Mutates state in place and returns diagnostics (critic losses, whether
    the actor moved, mean live Q on the batch when it did).
    """
    h = state.hyper
    y = compute_target(state, batch, rng)
    n = len(y)
    qin = np.concatenate([batch.obs, batch.action], axis=1)

    for which in (1, 2):
        params = state.critic1 if which == 1 else state.critic2
        opt = state.opt_critic1 if which == 1 else state.opt_critic2
        q, cache = mlp_forward(params, state.critic_spec, qin)
        err = q[:, 0] - y
        grads, _ = mlp_backward(params, state.critic_spec, cache,
                                (2.0 / n) * err[:, None])
        params, opt = adam_step(params, grads, opt)
        if which == 1:
            state.critic1, state.opt_critic1 = params, opt
            loss1 = float((err ** 2).mean())
        else:
            state.critic2, state.opt_critic2 = params, opt
            loss2 = float((err ** 2).mean())

    state.n_updates += 1
    info = {"critic1_loss": loss1, "critic2_loss": loss2,
            "actor_updated": 0.0, "mean_q": float("nan")}

    if state.n_updates % h.policy_delay == 0:
        a, cache_a = mlp_forward(state.actor, state.actor_spec, batch.obs)
        qin_pi = np.concatenate([batch.obs, a], axis=1)
        q, cache_q = mlp_forward(state.critic1, state.critic_spec, qin_pi)
        # ascend mean Q: gradient of -mean(Q) through the critic into the action
        _, dqin = mlp_backward(state.critic1, state.critic_spec, cache_q,
                               np.full((n, 1), -1.0 / n))
        grad_a = dqin[:, state.obs_dim:]
        actor_grads, _ = mlp_backward(state.actor, state.actor_spec, cache_a, grad_a)
        state.actor, state.opt_actor = adam_step(state.actor, actor_grads,
                                                 state.opt_actor)
        state.target_actor = polyak_update(state.target_actor, state.actor, h.rho)
        state.target_critic1 = polyak_update(state.target_critic1, state.critic1, h.rho)
        state.target_critic2 = polyak_update(state.target_critic2, state.critic2, h.rho)
        info["actor_updated"] = 1.0
        info["mean_q"] = float(q.mean())
    return info


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

_NET_FIELDS = ("actor", "critic1", "critic2",
               "target_actor", "target_critic1", "target_critic2")
_OPT_FIELDS = ("opt_actor", "opt_critic1", "opt_critic2")


def _params_arrays(p: MlpParams) -> list[np.ndarray]:
    out = []
    for w, b in zip(p.weights, p.biases):
        out.append(w)
        out.append(b)
    return out


def save_checkpoint(path: str, state: Td3State,
                    meta: dict | None = None) -> None:
    """Write magic line, JSON header line, then raw little-endian float64.

    Array order: the six networks (actor, critics, targets) layer by layer as
    weight then bias, followed by each optimizer's first and second moment
    mirrors in the same layout. Round-trips bit-exactly.
    """
    header = {
        "actor_sizes": list(state.actor_spec.layer_sizes),
        "actor_activations": list(state.actor_spec.activations),
        "critic_sizes": list(state.critic_spec.layer_sizes),
        "critic_activations": list(state.critic_spec.activations),
        "hyper": {k: getattr(state.hyper, k) for k in (
            "gamma", "rho", "exploration_noise_std", "target_noise_std",
            "noise_clip", "policy_delay", "batch_size", "warmup_steps",
            "lr_actor", "lr_critic", "capacity")},
        "n_updates": state.n_updates,
        "opt_steps": [getattr(state, f).step for f in _OPT_FIELDS],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for name in _NET_FIELDS:
            for arr in _params_arrays(getattr(state, name)):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for name in _OPT_FIELDS:
            opt: AdamState = getattr(state, name)
            for arr in _params_arrays(opt.m) + _params_arrays(opt.v):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[Td3State, dict]:
    """Inverse of save_checkpoint; returns (state, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        try:
            header = json.loads(fh.readline().decode())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ValueError(f"unreadable checkpoint header in {path}: "
                             f"{exc}") from exc
        blob = fh.read()

    actor_spec = MlpSpec(tuple(header["actor_sizes"]),
                         tuple(header["actor_activations"]))
    critic_spec = MlpSpec(tuple(header["critic_sizes"]),
                          tuple(header["critic_activations"]))
    hyper = Td3Hyper(**header["hyper"])

    offset = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        if offset + count * 8 > len(blob):
            raise ValueError(f"truncated checkpoint payload in {path}")
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=offset).reshape(shape).copy()
        offset += count * 8
        return arr

    def take_params(spec: MlpSpec) -> MlpParams:
        ws, bs = [], []
        for i in range(spec.n_layers):
            ws.append(take((spec.layer_sizes[i + 1], spec.layer_sizes[i])))
            bs.append(take((spec.layer_sizes[i + 1],)))
        return MlpParams(weights=tuple(ws), biases=tuple(bs))

    nets = {}
    for name in _NET_FIELDS:
        spec = actor_spec if "actor" in name else critic_spec
        nets[name] = take_params(spec)

    opts = {}
    lrs = {"opt_actor": hyper.lr_actor, "opt_critic1": hyper.lr_critic,
           "opt_critic2": hyper.lr_critic}
    for name, step in zip(_OPT_FIELDS, header["opt_steps"]):
        spec = actor_spec if "actor" in name else critic_spec
        m = take_params(spec)
        v = take_params(spec)
        base = init_adam(m, lrs[name])
        opts[name] = AdamState(m=m, v=v, step=step, lr=base.lr,
                               beta1=base.beta1, beta2=base.beta2, eps=base.eps)
    if offset != len(blob):
        raise ValueError("checkpoint payload size mismatch")

    state = Td3State(actor_spec=actor_spec, critic_spec=critic_spec,
                     hyper=hyper, n_updates=header["n_updates"],
                     **nets, **opts)
    return state, header["meta"]


# ---------------------------------------------------------------------------
# Generic training loop
# ---------------------------------------------------------------------------

@dataclass
class EpisodeStats:
    episode: int
    ret: float
    steps: int
    total_steps: int
    info: dict = field(default_factory=dict)


def run_training(
    env,
    state: Td3State,
    total_steps: int,
    rng: np.random.Generator,
    on_episode=None,
    stop_when=None,
) -> list[EpisodeStats]:
    """Interleave stepping and learning for total_steps decision steps.

    env must expose reset(rng) -> obs and step(action) -> (obs, reward,
    done, info). Warmup steps take uniform actions; after warmup each step
    triggers one td3_update once the buffer can fill a batch. on_episode is
    called with EpisodeStats after each terminal; stop_when(stats_list) may
    return True to end early (budget guard for long runs). Returns the
    per-episode history.
    """
    h = state.hyper
    buf = ReplayBuffer(h.capacity, state.obs_dim, state.act_dim)
    history: list[EpisodeStats] = []
    obs = env.reset(rng)
    ep_ret = 0.0
    ep_steps = 0
    episode = 0
    for step in range(total_steps):
        action = select_action(state, obs, rng,
                               noise_std=h.exploration_noise_std, step=step)
        next_obs, reward, done, info = env.step(action)
        buf.add(Transition(obs, action, float(reward), next_obs, bool(done)))
        obs = next_obs
        ep_ret += float(reward)
        ep_steps += 1
        if step >= h.warmup_steps and len(buf) >= h.batch_size:
            td3_update(state, buf.sample(h.batch_size, rng), rng)
        if done:
            stats = EpisodeStats(episode=episode, ret=ep_ret, steps=ep_steps,
                                 total_steps=step + 1, info=dict(info))
            history.append(stats)
            if on_episode is not None:
                on_episode(stats)
            if stop_when is not None and stop_when(history):
                break
            episode += 1
            ep_ret = 0.0
            ep_steps = 0
            obs = env.reset(rng)
    return history


# ---------------------------------------------------------------------------
# Engagement training and evaluation
# ---------------------------------------------------------------------------

def build_hyper(section: dict) -> tuple[Td3Hyper, tuple[int, ...]]:
    """Split a td3 config section into hyperparameters and hidden widths."""
    fields = dict(section)
    hidden = tuple(int(w) for w in fields.pop("hidden"))
    return Td3Hyper(**fields), hidden


def evaluate(state: Td3State, scenario, episodes: int, seed: int) -> dict:
    """Deterministic-policy evaluation over seeded episodes.

    Episode i runs with its own generator seeded seed + i, so any subset of
    episodes reproduces independently. Actions carry no exploration noise;
    per-agent control sampling still uses the episode generator.
    """
    from .environment import SUCCESS, EngagementEnv

    if scenario.observation_dim != state.obs_dim \
            or scenario.action_dim != state.act_dim:
        raise ValueError(
            f"checkpoint dims ({state.obs_dim}, {state.act_dim}) do not match "
            f"scenario dims ({scenario.observation_dim}, {scenario.action_dim})")
    outcomes = []
    for i in range(episodes):
        rng = np.random.default_rng(seed + i)
        env = EngagementEnv(scenario)
        obs = env.reset(rng)
        ret, n_steps, n_elims = 0.0, 0, 0
        while True:
            action = select_action(state, obs, rng, noise_std=0.0)
            result = env.step(action)
            obs = result.observation
            ret += result.reward
            n_steps += 1
            n_elims += len(result.info["events"])
            if result.done:
                outcomes.append({"episode": i, "reason": result.reason,
                                 "return": ret, "eliminations": n_elims,
                                 "steps": n_steps})
                break
    n = len(outcomes)
    return {
        "episodes": n,
        "success_rate": (sum(o["reason"] == SUCCESS for o in outcomes) / n
                         if n else 0.0),
        "mean_return": (sum(o["return"] for o in outcomes) / n if n else 0.0),
        "mean_eliminations": (sum(o["eliminations"] for o in outcomes) / n
                              if n else 0.0),
        "mean_steps": (sum(o["steps"] for o in outcomes) / n if n else 0.0),
        "outcomes": outcomes,
    }


def train(cfg: dict, out_dir: str, seed: int,
          total_steps: int | None = None, stop_when=None) -> dict:
    """Curriculum training over the configured stages.

    Writes metrics.csv / timing.csv while running, periodic checkpoints if
    configured, and checkpoint_final.ckpt at the end. total_steps overrides
    run.steps; stop_when(history) may end the run early after any episode.
    Returns a summary with the final state and output paths.
    """
    from .config import build_scenario
    from .environment import SUCCESS, EngagementEnv, curriculum_advance
    from .logs import MetricsWriter

    os.makedirs(out_dir, exist_ok=True)
    run = cfg["run"]
    steps = int(run["steps"] if total_steps is None else total_steps)
    stage_names = list(cfg["curriculum"]["stages"])
    stages = [build_scenario(cfg, name) for name in stage_names]
    window = int(cfg["curriculum"]["window"])
    threshold = float(cfg["curriculum"]["threshold"])
    hyper, hidden = build_hyper(cfg["td3"])
    ckpt_every = int(run.get("checkpoint_every_episodes", 0))

    rng = np.random.default_rng(seed)
    state = make_td3(stages[0].observation_dim, stages[0].action_dim,
                     hidden, hyper, rng)
    buf = ReplayBuffer(hyper.capacity, state.obs_dim, state.act_dim)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    timing_path = os.path.join(out_dir, "timing.csv")
    final_ckpt = os.path.join(out_dir, "checkpoint_final.ckpt")

    stage = 0
    successes: list[bool] = []
    history: list[EpisodeStats] = []
    env = EngagementEnv(stages[stage])
    obs = env.reset(rng)
    episode = 0
    ep_ret, ep_steps, ep_elims = 0.0, 0, 0
    ep_wall = time.perf_counter()
    step = 0

    with MetricsWriter(metrics_path, timing_path) as writer:
        for step in range(steps):
            action = select_action(state, obs, rng,
                                   noise_std=hyper.exploration_noise_std,
                                   step=step)
            result = env.step(action)
            buf.add(Transition(obs, action, float(result.reward),
                               result.observation, bool(result.done)))
            obs = result.observation
            ep_ret += float(result.reward)
            ep_steps += 1
            ep_elims += len(result.info["events"])
            if step >= hyper.warmup_steps and len(buf) >= hyper.batch_size:
                td3_update(state, buf.sample(hyper.batch_size, rng), rng)
            if not result.done:
                continue

            writer.write(episode, stage, ep_ret, ep_elims, ep_steps,
                         step + 1, time.perf_counter() - ep_wall)
            successes.append(result.reason == SUCCESS)
            history.append(EpisodeStats(
                episode=episode, ret=ep_ret, steps=ep_steps,
                total_steps=step + 1,
                info={"reason": result.reason, "stage": stage}))
            episode += 1
            if ckpt_every and episode % ckpt_every == 0:
                save_checkpoint(
                    os.path.join(out_dir, f"checkpoint_ep{episode}.ckpt"),
                    state, meta={"seed": seed, "episodes": episode,
                                 "env_steps": step + 1, "stage": stage})
            new_stage = curriculum_advance(successes, stage, len(stages),
                                           window=window, threshold=threshold)
            if new_stage != stage:
                stage = new_stage
                env = EngagementEnv(stages[stage])
                successes = []
            if stop_when is not None and stop_when(history):
                break
            ep_ret, ep_steps, ep_elims = 0.0, 0, 0
            obs = env.reset(rng)
            ep_wall = time.perf_counter()

    save_checkpoint(final_ckpt, state,
                    meta={"seed": seed, "episodes": episode,
                          "env_steps": step + 1 if steps else 0,
                          "stage": stage})
    return {
        "state": state,
        "episodes": episode,
        "env_steps": step + 1 if steps else 0,
        "final_stage": stage,
        "stage_names": stage_names,
        "metrics_path": metrics_path,
        "timing_path": timing_path,
        "checkpoint_path": final_ckpt,
        "history": history,
    }
