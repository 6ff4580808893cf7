"""Gaussian mixture fitting over swarm positions and observation building.

Each swarm's alive positions are summarized by a small Gaussian mixture fit
with EM; the flattened means and covariances of both mixtures, in canonical
component order, form the learner's observation vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import assign_groups

COV_FLOOR = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GmmParams:
    """Mixture parameters: weights (k,), means (k, 2), covariances (k, 2, 2)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        m = np.asarray(self.means, dtype=float).reshape(-1, 2)
        c = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)
        if not (len(w) == len(m) == len(c)):
            raise ValueError("weights, means, covariances must agree in length")
        if len(w) == 0:
            raise ValueError("mixture needs at least one component")
        if (w < -1e-12).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.allclose(c, np.swapaxes(c, 1, 2), atol=1e-9):
            raise ValueError("covariances must be symmetric")

    @property
    def k(self) -> int:
        return len(self.weights)


def _component_log_density(points: np.ndarray, mean: np.ndarray,
                           cov: np.ndarray) -> np.ndarray:
    """Log density of a single 2-D Gaussian at each point, closed form."""
    a, b, c, d = cov[0, 0], cov[0, 1], cov[1, 0], cov[1, 1]
    det = a * d - b * c
    if det <= 0.0:
        raise ValueError("covariance is not positive definite")
    dx = points[:, 0] - mean[0]
    dy = points[:, 1] - mean[1]
    # mahalanobis via the explicit 2x2 inverse
    maha = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * maha


def _log_joint(g: GmmParams, points: np.ndarray) -> np.ndarray:
    """log(weight_c * N(point | mean_c, cov_c)) as an (n, k) matrix."""
    cols = []
    for c in range(g.k):
        with np.errstate(divide="ignore"):
            lw = np.log(g.weights[c]) if g.weights[c] > 0.0 else -np.inf
        cols.append(lw + _component_log_density(points, g.means[c],
                                                g.covariances[c]))
    return np.stack(cols, axis=1)


def responsibilities(g: GmmParams, points: np.ndarray) -> tuple[np.ndarray, float]:
    """E-step: per-point component responsibilities and mean log-likelihood.

    Returns (R, ll) where R has shape (n, k) with rows summing to 1 and ll is
    the mean per-point log density under the mixture. Computed in log space.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("empty swarm")
    logj = _log_joint(g, pts)
    peak = logj.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logj - peak).sum(axis=1))
    return np.exp(logj - lse[:, None]), float(lse.mean())


def gmm_log_likelihood(g: GmmParams, points: np.ndarray) -> float:
    """Mean per-point log density of points under the mixture."""
    return responsibilities(g, points)[1]


def canonicalize(g: GmmParams) -> GmmParams:
    """Sort components by mean x ascending, ties by mean y ascending."""
    order = np.lexsort((g.means[:, 1], g.means[:, 0]))
    return GmmParams(weights=g.weights[order], means=g.means[order],
                     covariances=g.covariances[order])


def _init_from_kmeans(points: np.ndarray, k: int,
                      rng: np.random.Generator) -> GmmParams:
    n = len(points)
    ga = assign_groups(points, k, rng=rng)
    global_cov = np.cov(points.T, bias=True).reshape(2, 2) if n > 1 else np.zeros((2, 2))
    weights = np.empty(k)
    means = np.empty((k, 2))
    covs = np.empty((k, 2, 2))
    for c in range(k):
        member = points[ga.labels == c]
        weights[c] = max(len(member), 1) / n
        means[c] = member.mean(axis=0) if len(member) else points.mean(axis=0)
        if len(member) >= 2:
            covs[c] = np.cov(member.T, bias=True).reshape(2, 2)
        else:
            covs[c] = global_cov
        covs[c] = 0.5 * (covs[c] + covs[c].T) + COV_FLOOR * np.eye(2)
    weights /= weights.sum()
    return GmmParams(weights=weights, means=means, covariances=covs)


def _direct_construction(points: np.ndarray, k: int) -> GmmParams:
    """Fewer points than components: one component per point, floored
    covariance; surplus components sit at the centroid with weight zero."""
    n = len(points)
    centroid = points.mean(axis=0)
    means = np.vstack([points, np.tile(centroid, (k - n, 1))])
    weights = np.concatenate([np.full(n, 1.0 / n), np.zeros(k - n)])
    covs = np.tile(COV_FLOOR * np.eye(2), (k, 1, 1))
    return canonicalize(GmmParams(weights=weights, means=means, covariances=covs))


def fit_gmm_detailed(
    points: np.ndarray,
    k: int,
    tol: float = 0.01,
    max_iter: int = 100,
    rng: np.random.Generator | None = None,
) -> tuple[GmmParams, list[float], list[GmmParams]]:
    """EM fit returning (params, log-likelihood history, per-iteration params).

    Initialization comes from a k-means run on the points. Each M-step adds
    COV_FLOOR to covariance diagonals. Iteration stops when the mean
    log-likelihood improves by less than tol, or after max_iter E/M rounds.
    With fewer points than components the mixture is built directly instead:
    one component per point plus zero-weight centroid components.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        raise ValueError("empty swarm")
    if k < 1:
        raise ValueError(f"component count must be >= 1, got {k}")
    if rng is None:
        rng = np.random.default_rng()
    if n < k:
        g = _direct_construction(pts, k)
        return g, [gmm_log_likelihood(g, pts)], [g]

    g = _init_from_kmeans(pts, k, rng)
    history: list[float] = []
    snapshots: list[GmmParams] = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        resp, ll = responsibilities(g, pts)
        mass = resp.sum(axis=0)                       # (k,)
        safe = np.maximum(mass, 1e-300)
        weights = mass / n
        means = (resp.T @ pts) / safe[:, None]
        covs = np.empty((k, 2, 2))
        for c in range(k):
            d = pts - means[c]
            covs[c] = (resp[:, c, None] * d).T @ d / safe[c]
            covs[c] = 0.5 * (covs[c] + covs[c].T) + COV_FLOOR * np.eye(2)
        # starved component: freeze it rather than divide by ~zero mass
        for c in np.nonzero(mass < 1e-10)[0]:
            means[c] = g.means[c]
            covs[c] = g.covariances[c]
            weights[c] = 0.0
        weights = weights / weights.sum()
        g = GmmParams(weights=weights, means=means, covariances=covs)
        history.append(ll)
        snapshots.append(g)
        if ll - prev_ll < tol:
            break
        prev_ll = ll
    return canonicalize(g), history, snapshots


def fit_gmm(
    points: np.ndarray,
    k: int,
    tol: float = 0.01,
    max_iter: int = 100,
    rng: np.random.Generator | None = None,
) -> GmmParams:
    """EM-fitted Gaussian mixture over 2-D points, canonically ordered."""
    return fit_gmm_detailed(points, k, tol=tol, max_iter=max_iter, rng=rng)[0]


def build_observation(controlled: GmmParams, adversarial: GmmParams,
                      scale: float = 10000.0) -> np.ndarray:
    """Flatten two mixtures into the observation vector.

    Layout is the controlled block then the adversarial block; each component
    contributes [mu_x, mu_y, s_xx, s_xy, s_yx, s_yy]. Positions are divided
    by scale and covariances by scale**2 so entries are O(1) for map-sized
    coordinates. Both mixtures must have the same component count.
    """
    if controlled.k != adversarial.k:
        raise ValueError(
            f"component count mismatch: {controlled.k} vs {adversarial.k}")
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    blocks = []
    for g in (controlled, adversarial):
        per = np.concatenate(
            [g.means / scale, g.covariances.reshape(-1, 4) / scale**2], axis=1)
        blocks.append(per.reshape(-1))
    return np.concatenate(blocks)
