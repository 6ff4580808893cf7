"""Run configuration: built-in defaults, YAML loading, dotted overrides.

A configuration is a plain nested dict. User files are deep-merged over the
defaults below; command-line overrides use dotted paths into the same tree.
Builder helpers turn config sections into the typed objects the simulator
needs.
"""

from __future__ import annotations

import copy
import math
from typing import Any

import yaml

from .control import (
    BEHAVIOR_TAGS,
    VICSEK,
    WAVES,
    AdversaryBehavior,
    VicsekParams,
    Wave,
)
from .dynamics import Limits
from .environment import (
    ActionBounds,
    InitDistribution,
    RewardWeights,
    ScenarioConfig,
)

DEFAULT_CONFIG: dict[str, Any] = {
    "run": {
        "seed": 0,
        "out_dir": "runs/latest",
        "steps": 200_000,
        "eval_episodes": 100,
        "checkpoint_every_episodes": 0,   # 0 disables periodic checkpoints
        "smooth_window": 20,              # episodes in the plot moving average
    },
    "limits": {
        "v_min": 30.0,
        "v_max": 300.0,
        "w_min": -math.pi / 5,
        "w_max": math.pi / 5,
        "dt_sim": 0.1,
        "dt_rl": 1.0,
    },
    "estimation": {
        "n_cluster": 3,
        "tol": 0.01,
        "max_iter": 100,
        "map_scale": 10_000.0,
    },
    "grouping": {
        "n_group_max": 5,
        "kmeans_n_init": 10,
    },
    "action_bounds": {
        "u_v_min": -30.0,
        "u_v_max": 30.0,
        "u_w_min": -0.5,
        "u_w_max": 0.5,
        "var_v_max": 25.0,
        "var_w_max": 0.25,
    },
    "rewards": {
        "r_elim": 0.5,
        "c_time": 0.02,
        "b_cover": 0.25,
        "b_success": 5.0,
        "b_breach": 5.0,
    },
    "engagement": {
        "impact_distance": 30.0,
        "kamikaze": False,
    },
    "td3": {
        "gamma": 0.99,
        "rho": 0.995,
        "exploration_noise_std": 0.1,
        "target_noise_std": 0.2,
        "noise_clip": 0.5,
        "policy_delay": 2,
        "batch_size": 256,
        "warmup_steps": 5000,
        "lr_actor": 1e-4,
        "lr_critic": 1e-3,
        "capacity": 500_000,
        "hidden": [1024, 500, 300, 100],
    },
    "scenarios": {
        "easy": {
            "n_controlled": 20,
            "n_adversarial": 10,
            "controlled_init": {"x": [0.0, 60.0], "y": [0.0, 120.0],
                                "theta": [0.0, 0.2], "v": [60.0, 5.0]},
            "adversarial_init": {"x": [1200.0, 60.0], "y": [0.0, 80.0],
                                 "theta": [math.pi, 0.1], "v": [60.0, 5.0]},
            "behavior": {"kind": "hold_course"},
            "reward_mode": "R1",
            "max_decision_steps": 40,
            "x_goal": -500.0,
        },
    },
    "curriculum": {
        "stages": ["easy"],
        "window": 50,
        "threshold": 0.8,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge override onto a copy of base; scalars replace."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None = None) -> dict:
    """Built-in defaults, with the YAML file at path merged over them."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ValueError(f"config root must be a mapping: {path}")
        cfg = deep_merge(cfg, user)
    validate_config(cfg)
    return cfg


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply key=value pairs with dotted paths, e.g. td3.gamma=0.95.

    Values are parsed as YAML scalars, so numbers, booleans, and lists all
    work. Intermediate mappings are created as needed.
    """
    out = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like path=value: {item!r}")
        path, _, raw = item.partition("=")
        keys = path.strip().split(".")
        if not all(keys):
            raise ValueError(f"bad override path {path!r}")
        node = out
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                nxt = {}
                node[key] = nxt
            node = nxt
        node[keys[-1]] = yaml.safe_load(raw)
    validate_config(out)
    return out


def validate_config(cfg: dict) -> None:
    """Cross-section checks; the typed builders do per-field validation."""
    for section in ("run", "limits", "estimation", "grouping", "action_bounds",
                    "rewards", "engagement", "td3", "scenarios", "curriculum"):
        if section not in cfg or not isinstance(cfg[section], dict):
            raise ValueError(f"config missing section {section!r}")
    stages = cfg["curriculum"].get("stages", [])
    if not stages:
        raise ValueError("curriculum.stages must name at least one scenario")
    for name in stages:
        if name not in cfg["scenarios"]:
            raise ValueError(f"curriculum stage {name!r} is not a scenario")
    for name, sc in cfg["scenarios"].items():
        kind = sc.get("behavior", {}).get("kind", "hold_course")
        if kind not in BEHAVIOR_TAGS:
            raise ValueError(f"scenario {name!r}: unknown behavior {kind!r}")


def build_limits(cfg: dict) -> Limits:
    s = cfg["limits"]
    return Limits(v_min=float(s["v_min"]), v_max=float(s["v_max"]),
                  w_min=float(s["w_min"]), w_max=float(s["w_max"]),
                  dt_sim=float(s["dt_sim"]), dt_rl=float(s["dt_rl"]))


def _build_init(section: dict) -> InitDistribution:
    def pair(key: str, default: tuple[float, float]) -> tuple[float, float]:
        value = section.get(key, list(default))
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValueError(f"init field {key!r} must be [mean, std]")
        return float(value[0]), float(value[1])

    mx, sx = pair("x", (0.0, 0.0))
    my, sy = pair("y", (0.0, 0.0))
    mt, st = pair("theta", (0.0, 0.0))
    mv, sv = pair("v", (60.0, 0.0))
    mw, sw = pair("omega", (0.0, 0.0))
    return InitDistribution(mean_x=mx, std_x=sx, mean_y=my, std_y=sy,
                            mean_theta=mt, std_theta=st, mean_v=mv, std_v=sv,
                            mean_omega=mw, std_omega=sw)


def _build_behavior(section: dict) -> AdversaryBehavior:
    kind = section.get("kind", "hold_course")
    kwargs: dict[str, Any] = {"kind": kind}
    if "goal" in section and section["goal"] is not None:
        kwargs["goal"] = tuple(float(v) for v in section["goal"])
    for key in ("k_w", "k_v", "v_cruise", "u_w_max", "u_v_max"):
        if key in section:
            kwargs[key] = float(section[key])
    if kind == WAVES:
        waves = []
        for w in section.get("waves", []):
            waves.append(Wave(goal=tuple(float(v) for v in w["goal"]),
                              start_time=float(w.get("start_time", 0.0)),
                              count=(int(w["count"]) if w.get("count")
                                     is not None else None)))
        kwargs["waves"] = tuple(waves)
    if kind == VICSEK:
        v = section.get("vicsek", {})
        kwargs["vicsek"] = VicsekParams(radius=float(v.get("radius", 200.0)),
                                        noise_std=float(v.get("noise_std", 0.1)),
                                        speed=float(v.get("speed", 60.0)))
    return AdversaryBehavior(**kwargs)


def build_scenario(cfg: dict, name: str) -> ScenarioConfig:
    """Assemble one scenario from its section plus the shared sections."""
    if name not in cfg["scenarios"]:
        raise ValueError(f"unknown scenario {name!r}")
    sc = cfg["scenarios"][name]
    est = cfg["estimation"]
    grp = cfg["grouping"]
    eng = cfg["engagement"]
    ab = cfg["action_bounds"]
    rw = cfg["rewards"]
    return ScenarioConfig(
        name=name,
        n_controlled=int(sc["n_controlled"]),
        n_adversarial=int(sc["n_adversarial"]),
        controlled_init=_build_init(sc.get("controlled_init", {})),
        adversarial_init=_build_init(sc.get("adversarial_init", {})),
        adversary_behavior=_build_behavior(sc.get("behavior", {})),
        reward_mode=str(sc.get("reward_mode", "R1")),
        max_decision_steps=int(sc.get("max_decision_steps", 40)),
        x_goal=float(sc.get("x_goal", -500.0)),
        limits=build_limits(cfg),
        map_scale=float(est["map_scale"]),
        n_cluster=int(est["n_cluster"]),
        n_group_max=int(grp["n_group_max"]),
        impact_distance=float(sc.get("impact_distance",
                                     eng["impact_distance"])),
        kamikaze=bool(sc.get("kamikaze", eng["kamikaze"])),
        bounds=ActionBounds(**{k: float(v) for k, v in ab.items()}),
        rewards=RewardWeights(**{k: float(v) for k, v in rw.items()}),
        kmeans_n_init=int(grp["kmeans_n_init"]),
        gmm_tol=float(est["tol"]),
        gmm_max_iter=int(est["max_iter"]),
    )
