"""Behavioural choice models used inside the toy simulator."""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr


def weibull_hazard(t, gamma: float, beta, x) -> np.ndarray:
    """Weibull hazard ``gamma * t**(gamma - 1) * exp(-beta @ x)``.

    ``x`` may be a single attribute vector or an ``(n, k)`` matrix.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("hazard is defined for t > 0 only")
    if gamma <= 0:
        raise ValueError("Weibull shape must be positive")
    eta = np.asarray(x, dtype=float) @ np.asarray(beta, dtype=float)
    return gamma * t ** (gamma - 1.0) * np.exp(-eta)


def weibull_cumulative_hazard(t, gamma: float, eta):
    """Integrated hazard ``t**gamma * exp(-eta)``; survival is ``exp(-H)``."""
    return np.asarray(t, dtype=float) ** gamma * np.exp(-np.asarray(eta, dtype=float))


def mnl_probabilities(V, axis: int = -1) -> np.ndarray:
    """Multinomial-logit choice probabilities ``exp(V_i) / sum_j exp(V_j)``."""
    V = np.asarray(V, dtype=float)
    if V.size == 0 or V.shape[axis] == 0:
        raise ValueError("empty choice set")
    if not np.all(np.isfinite(V)):
        raise ValueError("utilities must be finite")
    e = np.exp(V - V.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def ordered_probit(eta, alphas) -> np.ndarray:
    """Class probabilities ``Phi(a_k - eta) - Phi(a_{k-1} - eta)`` with unit noise.

    ``alphas`` are the ``K - 1`` strictly increasing cut points; ``eta`` may
    be a scalar or an array, in which case classes run along the last axis.
    """
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or np.any(np.diff(a) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    eta = np.asarray(eta, dtype=float)[..., None]
    cdf = ndtr(a - eta)
    lower = np.concatenate([np.zeros(eta.shape), cdf], axis=-1)
    upper = np.concatenate([cdf, np.ones(eta.shape)], axis=-1)
    return upper - lower
