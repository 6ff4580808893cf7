"""Dense network stack: forward, reverse-mode gradients, Adam, FD checking.

Everything runs in 64-bit numpy. Networks are small multilayer perceptrons;
gradients are exact reverse-mode and are verified against central finite
differences by gradient_check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

RELU = "relu"
TANH = "tanh"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, TANH, IDENTITY)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths input->...->output plus one activation tag per layer."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(str(a) for a in self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if len(acts) != len(sizes) - 1:
            raise ValueError(
                f"{len(sizes) - 1} activations required, got {len(acts)}")
        for a in acts:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass(frozen=True)
class MlpParams:
    """Per-layer (out x in) weight matrices and bias vectors.

    Also serves as the container for gradients, which share the shapes.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        if len(self.weights) != len(self.biases):
            raise ValueError("weight/bias layer counts differ")

    def copy(self) -> "MlpParams":
        return MlpParams(weights=tuple(w.copy() for w in self.weights),
                         biases=tuple(b.copy() for b in self.biases))

    @property
    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Seeded uniform initialization: He bounds before ReLU layers, Xavier
    bounds before Tanh/Identity layers. Biases start at zero."""
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in = spec.layer_sizes[i]
        fan_out = spec.layer_sizes[i + 1]
        if spec.activations[i] == RELU:
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=tuple(weights), biases=tuple(biases))


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == RELU:
        return np.maximum(z, 0.0)
    if tag == TANH:
        return np.tanh(z)
    return z


def mlp_forward(
    params: MlpParams, spec: MlpSpec, x: np.ndarray
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass for a single input vector or a (batch, in) matrix.

    Returns (output, cache); the cache holds each layer's input and
    post-activation output and is consumed by mlp_backward.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    h = arr[None, :] if single else arr
    if h.shape[1] != spec.layer_sizes[0]:
        raise ValueError(
            f"input width {h.shape[1]} != layer width {spec.layer_sizes[0]}")
    cache: list[tuple[np.ndarray, np.ndarray]] = []
    for w, b, tag in zip(params.weights, params.biases, spec.activations):
        z = h @ w.T + b
        out = _activate(z, tag)
        cache.append((h, out))
        h = out
    return (h[0] if single else h), cache


def mlp_backward(
    params: MlpParams,
    spec: MlpSpec,
    cache: list[tuple[np.ndarray, np.ndarray]],
    grad_output: np.ndarray,
) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of sum(output * grad_output).

    Returns (param gradients shaped like params, gradient w.r.t. the input).
    The input gradient is what lets a critic drive the actor update. The ReLU
    subgradient at exactly zero is taken as zero.
    """
    if len(cache) != len(params.weights):
        raise ValueError("cache does not match network depth")
    g = np.asarray(grad_output, dtype=float)
    single = g.ndim == 1
    g = g[None, :] if single else g
    w_grads: list[np.ndarray] = [None] * len(params.weights)
    b_grads: list[np.ndarray] = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        h_in, h_out = cache[i]
        tag = spec.activations[i]
        if tag == RELU:
            dz = g * (h_out > 0.0)
        elif tag == TANH:
            dz = g * (1.0 - h_out * h_out)
        else:
            dz = g
        w_grads[i] = dz.T @ h_in
        b_grads[i] = dz.sum(axis=0)
        g = dz @ params.weights[i]
    grad_input = g[0] if single else g
    return MlpParams(weights=tuple(w_grads), biases=tuple(b_grads)), grad_input


@dataclass(frozen=True)
class AdamState:
    """First/second moment mirrors of MlpParams plus step count and hypers."""

    m: MlpParams
    v: MlpParams
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: MlpParams, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = MlpParams(
        weights=tuple(np.zeros_like(w) for w in params.weights),
        biases=tuple(np.zeros_like(b) for b in params.biases),
    )
    return AdamState(m=zeros, v=zeros.copy(), step=0, lr=lr,
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: MlpParams, grads: MlpParams,
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias correction; returns new params and state."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t

    def upd(p, g, m, v):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        p2 = p - state.lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
        return p2, m2, v2

    new_w, new_b, m_w, m_b, v_w, v_b = [], [], [], [], [], []
    for p, g, m, v in zip(params.weights, grads.weights,
                          state.m.weights, state.v.weights):
        p2, m2, v2 = upd(p, g, m, v)
        new_w.append(p2), m_w.append(m2), v_w.append(v2)
    for p, g, m, v in zip(params.biases, grads.biases,
                          state.m.biases, state.v.biases):
        p2, m2, v2 = upd(p, g, m, v)
        new_b.append(p2), m_b.append(m2), v_b.append(v2)
    return (
        MlpParams(weights=tuple(new_w), biases=tuple(new_b)),
        replace(state,
                m=MlpParams(weights=tuple(m_w), biases=tuple(m_b)),
                v=MlpParams(weights=tuple(v_w), biases=tuple(v_b)),
                step=t),
    )


def _nudge_relu_preactivations(params: MlpParams, spec: MlpSpec,
                               x: np.ndarray, margin: float) -> MlpParams:
    """Shift biases so no ReLU unit sits within margin of its kink at x.

    Finite differences are meaningless across a kink; moving the handful of
    near-zero pre-activations off it keeps the check on smooth ground without
    changing what is being verified.
    """
    params = params.copy()
    h = np.asarray(x, dtype=float)
    for i, tag in enumerate(spec.activations):
        z = params.weights[i] @ h + params.biases[i]
        if tag == RELU:
            close = np.abs(z) < margin
            if close.any():
                shift = np.where(z >= 0.0, margin, -margin) - z
                params.biases[i][close] += shift[close]
                z = params.weights[i] @ h + params.biases[i]
        h = _activate(z, tag)
    return params


def gradient_check(spec: MlpSpec, seed: int = 0, h: float = 1e-5,
                   coords_per_tensor: int = 40) -> float:
    """Max relative error between backprop and central finite differences.

    Builds a seeded network and input, projects the output onto a random
    direction, and compares analytic gradients against (f(p+h)-f(p-h))/2h on
    a seeded sample of coordinates in every weight and bias tensor. The
    relative error per tensor is ||fd - bp|| / (||fd|| + ||bp||) over the
    sampled coordinates; the max over tensors is returned. Inputs are kept
    away from ReLU kinks, where no meaningful comparison exists.
    """
    rng = np.random.default_rng(seed)
    params = init_mlp(spec, rng)
    x = rng.normal(0.0, 1.0, size=spec.layer_sizes[0])
    u = rng.normal(0.0, 1.0, size=spec.layer_sizes[-1])
    params = _nudge_relu_preactivations(params, spec, x, margin=1e-3)

    _, cache = mlp_forward(params, spec, x)
    grads, _ = mlp_backward(params, spec, cache, u)

    def objective() -> float:
        out, _ = mlp_forward(params, spec, x)
        return float(out @ u)

    worst = 0.0
    tensors = [(params.weights[i], grads.weights[i]) for i in range(len(params.weights))]
    tensors += [(params.biases[i], grads.biases[i]) for i in range(len(params.biases))]
    for tensor, analytic in tensors:
        flat = tensor.reshape(-1)
        n = flat.size
        idx = rng.choice(n, size=min(coords_per_tensor, n), replace=False)
        fd = np.empty(len(idx))
        for j, i in enumerate(idx):
            keep = flat[i]
            flat[i] = keep + h
            up = objective()
            flat[i] = keep - h
            down = objective()
            flat[i] = keep
            fd[j] = (up - down) / (2.0 * h)
        bp = analytic.reshape(-1)[idx]
        denom = np.linalg.norm(fd) + np.linalg.norm(bp)
        err = np.linalg.norm(fd - bp) / max(denom, 1e-12)
        worst = max(worst, float(err))
    return worst
