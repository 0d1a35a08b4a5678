"""Feature-based ridge regression and the SEISMIC self-exciting estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .graph import ObservedCascade, SocialGraph

FEATURES = (
    "n_observed",
    "first_hop_spreaders",
    "induced_edges",
    "mean_followers",
    "max_followers",
    "time_to_half",
    "originator_followers",
)


# ------------------------------------------------------------------ features


def cascade_features(obs: ObservedCascade, g: SocialGraph, followers: Mapping[str, int] | None = None) -> np.ndarray:
    """Fixed-order feature vector of an observed cascade (see ``FEATURES``)."""
    users = obs.users
    root = users[0]
    counts = [_followers(u, g, followers) for u in users]
    members = set(users)
    first_hop = sum(1 for u in users[1:] if root in g.followees(u))
    induced = sum(1 for u in users for f in g.followees(u) if f in members)
    origin = obs.adopters[0][1]
    half = obs.adopters[(len(users) + 1) // 2 - 1][1] - origin
    return np.array(
        [len(users), first_hop, induced, float(np.mean(counts)), max(counts), half, counts[0]],
        dtype=np.float64,
    )


def _followers(user: str, g: SocialGraph, followers: Mapping[str, int] | None) -> int:
    if followers is not None:
        return int(followers[user])
    return g.follower_count(user)


def feature_matrix(observed: Iterable[ObservedCascade], g: SocialGraph, followers: Mapping[str, int] | None = None) -> np.ndarray:
    rows = [cascade_features(o, g, followers) for o in observed]
    return np.vstack(rows) if rows else np.zeros((0, len(FEATURES)))


# ------------------------------------------------------------------ ridge


@dataclass(frozen=True)
class RidgeModel:
    intercept: float
    coef: np.ndarray
    l2: float


def ridge_fit(features, truths, l2: float) -> RidgeModel:
    """Closed-form ridge regression; the intercept is not penalised."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(truths, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or y.shape != (x.shape[0],):
        raise ValueError("need at least 2 rows and one target per row")
    if not l2 > 0:
        raise ValueError("l2 must be positive")
    a = np.hstack([np.ones((x.shape[0], 1)), x])
    reg = np.eye(a.shape[1]) * l2
    reg[0, 0] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        lhs = a.T @ a + reg
    if not np.all(np.isfinite(lhs)) or np.linalg.cond(lhs) > 1e15:
        raise np.linalg.LinAlgError("ridge system is singular")
    w = np.linalg.solve(lhs, a.T @ y)
    return RidgeModel(float(w[0]), w[1:].copy(), l2)


def ridge_predict(model: RidgeModel, features, floor=None) -> np.ndarray:
    """Affine prediction, clipped below at ``floor`` (defaults to the first feature, n_T)."""
    x = np.asarray(features, dtype=np.float64)
    pred = model.intercept + x @ model.coef
    lo = x[:, 0] if floor is None else np.asarray(floor, dtype=np.float64)
    return np.maximum(pred, lo)


# ------------------------------------------------------------------ SEISMIC


@dataclass(frozen=True)
class SeismicParams:
    theta: float = 0.242
    s0: float = 300.0

    @property
    def c(self) -> float:
        return self.theta / (self.s0 * (1.0 + self.theta))


def memory_kernel(s, params: SeismicParams = SeismicParams()) -> np.ndarray:
    """Constant for ``s <= s0``, power-law decay afterwards; integrates to one."""
    s = np.asarray(s, dtype=np.float64)
    tail = params.c * (np.maximum(s, params.s0) / params.s0) ** (-(1.0 + params.theta))
    return np.where(s < 0, 0.0, np.where(s <= params.s0, params.c, tail))


def kernel_cdf(s, params: SeismicParams = SeismicParams()) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    c, s0, th = params.c, params.s0, params.theta
    head = c * np.clip(s, 0.0, s0)
    tail = c * s0 / th * (1.0 - (np.maximum(s, s0) / s0) ** (-th))
    return head + np.where(s > s0, tail, 0.0)


def seismic_predict(obs: ObservedCascade, followers: Mapping[str, int], now: float | None = None,
                    params: SeismicParams = SeismicParams()) -> float:
    """Final-size estimate from the observed adopters' follower counts and times.

    ``now`` defaults to the end of the observation window.  The estimate is
    the current size plus the infectiousness times the follower mass the
    kernel has not yet released; later generations are not extrapolated.
    """
    if obs.n_observed < 1:
        raise ValueError("cascade has no observed adopters")
    origin = obs.adopters[0][1]
    now = origin + obs.window if now is None else now
    n_t = obs.n_observed
    counts = np.array([float(followers[u]) for u in obs.users])
    elapsed = np.array([now - t for _, t in obs.adopters], dtype=np.float64)
    cdf = kernel_cdf(elapsed, params)
    mass = float(np.sum(counts * cdf))
    if mass <= 0:
        return float(n_t)
    p_hat = (n_t - 1) / mass
    if p_hat == 0:
        return float(n_t)
    remaining = float(np.sum(counts * (1.0 - cdf)))
    return float(n_t + p_hat * remaining)


# ------------------------------------------------------------------ files


def load_follower_counts(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'user count'")
            count = int(parts[1])
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative follower count")
            out[parts[0]] = count
    return out


def follower_counts(g: SocialGraph) -> dict[str, int]:
    return {u: g.follower_count(u) for u in g.nodes}


def write_follower_counts(counts: Mapping[str, int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, c in counts.items():
            fh.write(f"{u}\t{int(c)}\n")

