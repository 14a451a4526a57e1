"""Analytic test functions with known optima."""
from __future__ import annotations

import numpy as np

from ..design import ParameterSpace

# Fixed ridge direction for the 5-D ridge function (unit norm).
RIDGE_W = np.array([0.6, -0.3, 0.5, 0.1, -0.54])
RIDGE_W = RIDGE_W / np.linalg.norm(RIDGE_W)

_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H6_A = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
_H6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])

BRANIN_MINIMIZERS = np.array([[-np.pi, 12.275], [np.pi, 2.275], [9.42478, 2.475]])
BRANIN_MIN = 0.397887
HARTMANN6_MINIMIZER = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN6_MIN = -3.32237


def branin2(x) -> float:
    x1, x2 = np.asarray(x, dtype=float)
    b = 5.1 / (4 * np.pi ** 2)
    c = 5 / np.pi
    t = 1 / (8 * np.pi)
    return float((x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * np.cos(x1) + 10)


def hartmann6(x) -> float:
    x = np.asarray(x, dtype=float)
    inner = np.sum(_H6_A * (x - _H6_P) ** 2, axis=1)
    return float(-np.sum(_H6_ALPHA * np.exp(-inner)))


def ridge_profile(t):
    return np.exp(t) + 0.5 * t


def ridge5(x) -> float:
    """``g(w @ x)`` on ``[-1, 1]^5`` with a fixed unit direction ``w``."""
    return float(ridge_profile(np.asarray(x, dtype=float) @ RIDGE_W))


def ridge5_grad(x) -> np.ndarray:
    t = np.asarray(x, dtype=float) @ RIDGE_W
    return (np.exp(t) + 0.5) * RIDGE_W


def flat5(x) -> float:
    """Constant function; every sensitivity measure of it is zero."""
    return 1.0


BENCHMARKS = {
    "branin2": (branin2, [("x1", -5.0, 10.0), ("x2", 0.0, 15.0)]),
    "hartmann6": (hartmann6, [(f"x{i + 1}", 0.0, 1.0) for i in range(6)]),
    "ridge5": (ridge5, [(f"x{i + 1}", -1.0, 1.0) for i in range(5)]),
    "flat5": (flat5, [(f"x{i + 1}", 0.0, 1.0) for i in range(5)]),
}


def benchmark(name: str, x) -> float:
    try:
        f = BENCHMARKS[name][0]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return f(x)


def benchmark_space(name: str) -> ParameterSpace:
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    return ParameterSpace.from_bounds(BENCHMARKS[name][1])
