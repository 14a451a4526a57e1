"""Active Subspaces from regression-estimated gradients.

Gradients of the loss are not available from a black-box simulator, so
they are estimated by least-squares linear fits, either one global fit or
one local fit per sample over its nearest neighbours. The averaged outer
product ``C = mean(g g^T)`` is eigendecomposed; the leading eigenvectors
span the directions along which the loss varies most.

Coordinates are unit-cube coordinates shifted to centre zero, ``u - 0.5``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from .design import DesignPoint, ParameterSpace, unscale

log = logging.getLogger(__name__)

GLOBAL = "global"
LOCAL = "local"

# a largest log10 eigenvalue ratio below this is reported as low-confidence
GAP_CONFIDENCE = 0.5


class RegressionError(ValueError):
    """The least-squares design matrix is rank deficient."""


@dataclass(frozen=True)
class GradientEstimates:
    grads: np.ndarray  # (n, d)
    method: str
    k: int | None = None


@dataclass(frozen=True)
class ActiveSubspace:
    eigvals: np.ndarray  # descending
    W: np.ndarray  # columns are eigenvectors
    q: int
    low_confidence: bool = False

    @property
    def dim(self) -> int:
        return len(self.eigvals)

    @property
    def W1(self) -> np.ndarray:
        return self.W[:, : self.q]

    @property
    def W2(self) -> np.ndarray:
        return self.W[:, self.q:]

    def with_q(self, q: int) -> "ActiveSubspace":
        """Same eigenpairs with a user-chosen active dimension."""
        if not 1 <= q <= self.dim:
            raise ValueError(f"q must lie in [1, {self.dim}], got {q}")
        return ActiveSubspace(self.eigvals, self.W, int(q), False)


@dataclass(frozen=True)
class BootstrapIntervals:
    lower: np.ndarray
    upper: np.ndarray
    replicates: int
    redraws: int = 0  # degenerate resamples that were discarded
    widened: int = 0  # indices whose interval was stretched to cover the point estimate


@dataclass(frozen=True)
class Reconstruction:
    unit: np.ndarray  # point in [0, 1]^d
    point: DesignPoint | None
    z: np.ndarray
    feasible: bool  # False when the fallback (clipped zero mode) was used
    residual: float  # largest box violation before the final clip


def _slope(Xc: np.ndarray, y: np.ndarray) -> np.ndarray:
    A = np.column_stack([np.ones(len(Xc)), Xc])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RegressionError(f"rank-deficient regression on {len(Xc)} rows in {Xc.shape[1]} dims")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef[1:]


def estimate_gradients(X, Y, method: str = GLOBAL, k: int | None = None) -> GradientEstimates:
    """Regression gradient estimates at each sample.

    Parameters
    ----------
    X : (n, d) array
        Samples in unit-cube coordinates.
    Y : (n,) array
        Losses.
    method : {"global", "local"}
        ``global`` fits one affine model to all samples and assigns its
        slope to every row. ``local`` fits an affine model to the ``k``
        nearest samples (Euclidean, the point itself included) of each row.
    k : int, optional
        Neighbourhood size for ``local``; defaults to ``2 * (d + 1)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    n, d = X.shape
    if len(Y) != n:
        raise ValueError(f"{n} samples but {len(Y)} losses")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("samples and losses must be finite")
    Xc = X - 0.5
    if method == GLOBAL:
        if n < d + 1:
            raise ValueError(f"global regression needs n >= d + 1 = {d + 1}, got {n}")
        beta = _slope(Xc, Y)
        return GradientEstimates(np.tile(beta, (n, 1)), GLOBAL)
    if method == LOCAL:
        k = 2 * (d + 1) if k is None else int(k)
        if k < d + 1 or k > n:
            raise ValueError(f"local regression needs d + 1 <= k <= n, got k={k}, n={n}")
        dist = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
        grads = np.empty((n, d))
        for i in range(n):
            nb = np.argsort(dist[i], kind="stable")[:k]
            grads[i] = _slope(Xc[nb], Y[nb])
        return GradientEstimates(grads, LOCAL, k)
    raise ValueError(f"unknown gradient method {method!r}")


def compute_C(g: GradientEstimates | np.ndarray) -> np.ndarray:
    """Average outer product of the gradient rows."""
    G = np.atleast_2d(np.asarray(g.grads if isinstance(g, GradientEstimates) else g, dtype=float))
    if G.shape[0] < 1:
        raise ValueError("need at least one gradient")
    C = G.T @ G / G.shape[0]
    return 0.5 * (C + C.T)


def decompose_and_gap(C) -> ActiveSubspace:
    """Eigendecomposition in descending order and gap-based choice of ``q``.

    ``q`` is the index with the largest ``log10(lambda_i / lambda_{i+1})``;
    eigenvalues are floored at ``eps * trace`` before taking ratios, and
    ties go to the smaller ``q``. Eigenvalues below the same floor are
    reported as exactly zero.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"need a square matrix, got shape {C.shape}")
    scale = max(float(np.abs(C).max(initial=0.0)), np.finfo(float).tiny)
    if not np.allclose(C, C.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("matrix is not symmetric")
    lam, W = np.linalg.eigh(0.5 * (C + C.T))
    lam, W = lam[::-1], W[:, ::-1]
    floor = np.finfo(float).eps * max(float(np.trace(C)), np.finfo(float).tiny)
    lam = np.where(lam < floor, 0.0, lam)
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    idx = np.argmax(np.abs(W), axis=0)
    W = W * np.where(W[idx, np.arange(W.shape[1])] < 0, -1.0, 1.0)
    d = len(lam)
    if d == 1:
        return ActiveSubspace(lam, W, 1, True)
    safe = np.maximum(lam, floor)
    ratios = np.log10(safe[:-1] / safe[1:])
    q = int(np.argmax(ratios)) + 1  # argmax returns the first maximum
    return ActiveSubspace(lam, W, q, bool(ratios[q - 1] < GAP_CONFIDENCE))


def active_subspace(X, Y, method: str = GLOBAL, k: int | None = None) -> ActiveSubspace:
    return decompose_and_gap(compute_C(estimate_gradients(X, Y, method, k)))


def bootstrap_eigenvalues(X, Y, method: str = GLOBAL, B: int = 1000, seed: int = 0,
                          k: int | None = None, level: float = 0.95,
                          max_redraws: int = 10_000) -> BootstrapIntervals:
    """Percentile bootstrap intervals for the eigenvalues of ``C``.

    Replicate ``i`` resamples rows with replacement using the generator
    seeded with ``seed + i``. Resamples whose regression is rank deficient
    (e.g. too few distinct rows) are re-drawn from the same generator.
    An interval that misses its own point estimate is stretched to
    include it, and the number of such indices is reported.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    point = active_subspace(X, Y, method, k).eigvals
    n = len(Y)
    spectra = np.empty((B, X.shape[1]))
    redraws = 0
    for i in range(B):
        rng = np.random.default_rng(seed + i)
        for _ in range(max_redraws):
            rows = rng.integers(0, n, n)
            try:
                spectra[i] = active_subspace(X[rows], Y[rows], method, k).eigvals
                break
            except RegressionError:
                redraws += 1
        else:
            raise RegressionError(f"replicate {i}: no usable resample in {max_redraws} draws")
    if redraws:
        log.info("bootstrap re-drew %d degenerate resamples", redraws)
    a = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(spectra, [a, 100.0 - a], axis=0)
    outside = (point < lo) | (point > hi)
    return BootstrapIntervals(np.minimum(lo, point), np.maximum(hi, point), B, redraws,
                              int(outside.sum()))


def project(a: ActiveSubspace, theta_unit) -> np.ndarray:
    """Active coordinates ``W1^T (u - 0.5)`` of one point or a batch."""
    u = np.asarray(theta_unit, dtype=float)
    if u.shape[-1] != a.dim:
        raise ValueError(f"point has {u.shape[-1]} coordinates, subspace has {a.dim}")
    return (u - 0.5) @ a.W1


def _fallback(a: ActiveSubspace, v, s, residual):
    u = np.clip(0.5 + a.W1 @ v, 0.0, 1.0)
    return Reconstruction(u, unscale(u, s) if s is not None else None,
                          np.zeros(a.dim - a.q), False, residual)


def reconstruct(a: ActiveSubspace, v, s: ParameterSpace | None = None,
                mode: str = "feasible") -> Reconstruction:
    """Map active coordinates back to a point inside the box.

    ``zero`` sets the inactive coordinates to zero and clips. ``feasible``
    picks the inactive coordinates ``z`` of smallest norm with
    ``0 <= 0.5 + W1 v + W2 z <= 1``; when no such ``z`` exists it falls back
    to ``zero`` and marks the result infeasible.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (a.q,):
        raise ValueError(f"expected {a.q} active coordinates, got shape {v.shape}")
    base = 0.5 + a.W1 @ v
    viol = float(max(0.0, np.max(-base), np.max(base - 1.0)))
    if mode == "zero":
        return _fallback(a, v, s, viol)
    if mode != "feasible":
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    W2 = a.W2
    m = W2.shape[1]
    if m == 0:
        if viol > 1e-12:
            return _fallback(a, v, s, viol)
        u = np.clip(base, 0.0, 1.0)
        return Reconstruction(u, unscale(u, s) if s is not None else None, np.zeros(0), True, viol)
    # W2 z <= 1 - base and -W2 z <= base
    G = np.vstack([W2, -W2])
    h = np.r_[1.0 - base, base]
    if viol == 0.0:
        z = np.zeros(m)
    else:
        lp = linprog(np.zeros(m), A_ub=G, b_ub=h, bounds=[(None, None)] * m, method="highs")
        if lp.status != 0:
            return _fallback(a, v, s, viol)
        z0 = lp.x
        res = minimize(lambda z: z @ z, z0, jac=lambda z: 2 * z, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda z: h - G @ z,
                                     "jac": lambda z: -G}],
                       options={"ftol": 1e-14, "maxiter": 500})
        z = res.x if np.max(G @ res.x - h) <= np.max(G @ z0 - h) + 1e-12 else z0
    u = base + W2 @ z
    residual = float(max(0.0, np.max(-u), np.max(u - 1.0)))
    u = np.clip(u, 0.0, 1.0)
    return Reconstruction(u, unscale(u, s) if s is not None else None, z, True, residual)
