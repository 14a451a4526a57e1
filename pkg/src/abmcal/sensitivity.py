"""Morris one-at-a-time screening.

Trajectories live in the unit cube. Each trajectory starts at a grid point
and moves every coordinate exactly once by ``+delta`` or ``-delta`` in a
random order, so ``r`` trajectories cost ``r * (d + 1)`` model runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import ParameterSpace

NEGLIGIBLE = "negligible"
MONOTONE = "monotone"
NONLINEAR = "nonlinear_or_interacting"


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray  # (d + 1, d) unit-cube points
    perturbed_dim: tuple[int, ...]
    delta: float

    @property
    def steps(self) -> np.ndarray:
        """Signed step taken along each perturbed dimension, in trajectory order."""
        diffs = np.diff(self.points, axis=0)
        return diffs[np.arange(len(self.perturbed_dim)), list(self.perturbed_dim)]


@dataclass(frozen=True)
class MorrisStats:
    mu: np.ndarray
    sigma: np.ndarray
    mu_star: np.ndarray


def default_delta(levels: int = 4) -> float:
    """Standard Morris step ``p / (2 (p - 1))`` for a ``p``-level grid."""
    if levels < 2:
        raise ValueError("need at least two grid levels")
    return levels / (2.0 * (levels - 1))


def build_trajectories(s: ParameterSpace | int, r: int, delta: float | None = None,
                       seed: int = 0, levels: int = 4) -> list[Trajectory]:
    """Draw ``r`` random Morris trajectories over ``[0, 1]^d``.

    Base coordinates are drawn uniformly from the grid levels
    ``{0, 1/(p-1), ..., 1}`` that leave room for a step of ``delta``; the
    step direction for each coordinate is a fair coin flip.
    """
    d = s if isinstance(s, int) else s.dim
    if r < 1:
        raise ValueError("need at least one trajectory")
    if delta is None:
        delta = default_delta(levels)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    grid = np.linspace(0.0, 1.0, levels)
    base_levels = grid[grid <= 1.0 - delta + 1e-12]
    if base_levels.size == 0:
        raise ValueError(f"no grid level leaves room for a step of {delta}")

    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(r):
        low = rng.choice(base_levels, size=d)
        up = rng.random(d) < 0.5
        start = np.where(up, low, low + delta)
        order = rng.permutation(d)
        pts = np.empty((d + 1, d))
        pts[0] = start
        for k, j in enumerate(order):
            pts[k + 1] = pts[k]
            pts[k + 1, j] += delta if up[j] else -delta
        np.clip(pts, 0.0, 1.0, out=pts)
        trajs.append(Trajectory(pts, tuple(int(j) for j in order), float(delta)))
    return trajs


def elementary_effects(trajs: Sequence[Trajectory], losses) -> np.ndarray:
    """Elementary-effect matrix ``ee[i, j]`` for trajectory ``i``, variable ``j``.

    ``losses`` holds one value per trajectory point, either flat in
    trajectory order or shaped ``(r, d + 1)``.
    """
    if len(trajs) == 0:
        raise ValueError("no trajectories")
    d = trajs[0].points.shape[1]
    y = np.asarray(losses, dtype=float)
    if y.size != len(trajs) * (d + 1):
        raise ValueError(f"expected {len(trajs) * (d + 1)} loss values, got {y.size}")
    y = y.reshape(len(trajs), d + 1)
    if not np.all(np.isfinite(y)):
        raise ValueError("losses contain missing or non-finite values")
    ee = np.empty((len(trajs), d))
    for i, t in enumerate(trajs):
        ee[i, list(t.perturbed_dim)] = np.diff(y[i]) / t.steps
    return ee


def morris_stats(ee) -> MorrisStats:
    """Mean, population standard deviation and mean absolute value per column."""
    ee = np.asarray(ee, dtype=float)
    if ee.ndim != 2 or ee.shape[0] == 0:
        raise ValueError("need at least one trajectory of elementary effects")
    mu = ee.mean(axis=0)
    sigma = np.sqrt(np.mean((ee - mu) ** 2, axis=0))
    mu_star = np.abs(ee).mean(axis=0)
    return MorrisStats(mu, sigma, mu_star)


def rank_variables(stats: MorrisStats, monotone_ratio: float = 0.9,
                   nonlinear_ratio: float = 0.5, tol: float = 1e-12) -> list[tuple[int, tuple[str, ...]]]:
    """Order variables by ``mu_star`` (descending) and tag each one.

    Tags are heuristic: ``negligible`` when ``mu_star`` is zero up to ``tol``
    (relative to the largest ``mu_star``), ``monotone`` when
    ``|mu| / mu_star >= monotone_ratio`` and ``nonlinear_or_interacting`` when
    ``sigma / mu_star >= nonlinear_ratio``. A variable can carry both of the
    last two.
    """
    mu_star = np.asarray(stats.mu_star, dtype=float)
    scale = max(1.0, float(mu_star.max(initial=0.0)))
    order = np.argsort(-mu_star, kind="stable")
    out = []
    for j in order:
        tags: list[str] = []
        if mu_star[j] <= tol * scale:
            tags.append(NEGLIGIBLE)
        else:
            if abs(stats.mu[j]) / mu_star[j] >= monotone_ratio:
                tags.append(MONOTONE)
            if stats.sigma[j] / mu_star[j] >= nonlinear_ratio:
                tags.append(NONLINEAR)
        out.append((int(j), tuple(tags)))
    return out
