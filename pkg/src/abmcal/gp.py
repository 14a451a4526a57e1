"""Gaussian-process regression with a Matérn kernel and a nugget term.

The GP models the scalar calibration loss over unit-box inputs. A fitted
:class:`GPModel` is immutable: conditioning on a new (pseudo-)observation
returns a new model with the same hyperparameters.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .design import lhs_unit

log = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class CholeskyError(RuntimeError):
    """Covariance matrix could not be factored even with maximal jitter."""


@dataclass(frozen=True)
class KernelConfig:
    """Matérn kernel hyperparameters with per-dimension lengthscales."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0
    nugget_variance: float = 0.0
    nu: float = 2.5

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if self.nu not in (0.5, 1.5, 2.5):
            raise ValueError(f"nu must be one of 1/2, 3/2, 5/2; got {self.nu}")
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.signal_variance > 0:
            raise ValueError("signal variance must be positive")
        if not self.nugget_variance >= 0:
            raise ValueError("nugget variance must be non-negative")

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def matern_correlation(r, nu: float = 2.5):
    """Matérn correlation as a function of scaled distance ``r`` (closed forms)."""
    r = np.asarray(r, dtype=float)
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        a = SQRT3 * r
        return (1.0 + a) * np.exp(-a)
    if nu == 2.5:
        a = SQRT5 * r
        return (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise ValueError(f"unsupported nu={nu}")


def scaled_distance(X1, X2, lengthscales) -> np.ndarray:
    """Pairwise anisotropic distances ``sqrt(sum(((x - x') / l)^2))``."""
    A = np.atleast_2d(X1) / lengthscales
    B = np.atleast_2d(X2) / lengthscales
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_matrix(X1, X2, c: KernelConfig) -> np.ndarray:
    """Cross-covariance ``k(X1, X2)`` without nugget."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != c.dim or X2.shape[1] != c.dim:
        raise ValueError(f"inputs have {X1.shape[1]}/{X2.shape[1]} columns, kernel expects {c.dim}")
    return c.signal_variance * matern_correlation(scaled_distance(X1, X2, c.lengthscales), c.nu)


def matern_kernel(x, x2, c: KernelConfig) -> float:
    """Kernel value between two single points."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != (c.dim,) or x2.shape != (c.dim,):
        raise ValueError("point dimensions do not match the kernel")
    r = np.sqrt(np.sum(((x - x2) / c.lengthscales) ** 2))
    return float(c.signal_variance * matern_correlation(r, c.nu))


def build_covariance(X, c: KernelConfig, jitter: float = JITTER_LADDER[0]) -> np.ndarray:
    """Training covariance ``K + (nugget + jitter * signal_variance) I``.

    Jitter is relative to the signal variance so the ladder means the same
    thing whatever the scale of the targets.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError("training inputs must be finite")
    K = kernel_matrix(X, X, c)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += c.nugget_variance + jitter * c.signal_variance
    return K


def factor_covariance(X, c: KernelConfig, quiet: bool = False) -> tuple[np.ndarray, float]:
    """Cholesky factor of the training covariance, escalating jitter on failure."""
    for jitter in JITTER_LADDER:
        K = build_covariance(X, c, jitter)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            if not quiet:
                log.info("cholesky failed at jitter %.0e, escalating", jitter)
            continue
        if jitter != JITTER_LADDER[0] and not quiet:
            log.info("cholesky succeeded with jitter %.0e", jitter)
        return L, jitter
    raise CholeskyError(f"covariance not positive definite at jitter {JITTER_LADDER[-1]:.0e}")


# -- mean functions ---------------------------------------------------------

@dataclass(frozen=True)
class MeanFunction:
    """Prior mean ``m(x)``: zero, a constant, or a trained network."""

    kind: str = "zero"
    constant: float = 0.0
    network: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "network"):
            raise ValueError(f"unknown mean kind {self.kind!r}")
        if self.kind == "network" and self.network is None:
            raise ValueError("network mean needs a callable")

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "network":
            return np.asarray(self.network(X), dtype=float).reshape(len(X))
        return np.full(len(X), self.constant if self.kind == "constant" else 0.0)


ZERO_MEAN = MeanFunction()


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: np.ndarray
    variance: np.ndarray
    clamped: int = 0  # number of negative variances clamped to zero

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class GPModel:
    inputs: np.ndarray
    targets: np.ndarray
    config: KernelConfig
    mean: MeanFunction
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def make_model(X, Y, config: KernelConfig, mean: MeanFunction = ZERO_MEAN) -> GPModel:
    """Factor the training covariance and solve for the posterior weights."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if len(X) != len(Y) or len(Y) < 1:
        raise ValueError(f"need matching, non-empty inputs/targets, got {len(X)} and {len(Y)}")
    if X.shape[1] != config.dim:
        raise ValueError("input dimension does not match kernel lengthscales")
    L, jitter = factor_covariance(X, config)
    alpha = cho_solve((L, True), Y - mean(X))
    return GPModel(X, Y, config, mean, L, alpha, jitter)


def posterior(m: GPModel, x) -> PosteriorPrediction:
    """Posterior mean and variance at one point or a batch of points.

    The variance includes the nugget, i.e. it is the predictive variance of a
    new noisy observation.
    """
    Xs = np.asarray(x, dtype=float)
    single = Xs.ndim == 1
    Xs = np.atleast_2d(Xs)
    if Xs.shape[1] != m.dim:
        raise ValueError(f"query has {Xs.shape[1]} dims, model has {m.dim}")
    Ks = kernel_matrix(Xs, m.inputs, m.config)
    mean = m.mean(Xs) + Ks @ m.alpha
    v = solve_triangular(m.chol, Ks.T, lower=True)
    var = m.config.signal_variance + m.config.nugget_variance - np.sum(v * v, axis=0)
    neg = var < 0
    clamped = int(neg.sum())
    if clamped:
        log.debug("clamped %d negative posterior variances (min %.3e)", clamped, var.min())
        var = np.where(neg, 0.0, var)
    if single:
        return PosteriorPrediction(mean[0], var[0], clamped)
    return PosteriorPrediction(mean, var, clamped)


def condition_on_pseudo(m: GPModel, x, y: float) -> GPModel:
    """Append ``(x, y)`` to the training set without touching hyperparameters."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return make_model(np.vstack([m.inputs, x]), np.append(m.targets, float(y)), m.config, m.mean)


def log_marginal_likelihood(X, Y, c: KernelConfig, mean: MeanFunction = ZERO_MEAN) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.asarray(Y, dtype=float) - mean(X)
    L, _ = factor_covariance(X, c, quiet=True)
    a = solve_triangular(L, r, lower=True)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * len(r) * np.log(2 * np.pi))


# -- hyperparameter fitting -------------------------------------------------

@dataclass(frozen=True)
class HyperBounds:
    lengthscale: tuple[float, float] = (1e-2, 10.0)
    variance_factor: float = 100.0  # upper bound as a multiple of var(Y)
    variance_floor: float = 1e-6
    nugget_floor: float = 1e-8


def default_config(d: int, target_var: float, nu: float = 2.5) -> KernelConfig:
    """Starting point for the hyperparameter search."""
    v = target_var if target_var > 0 else 1.0
    return KernelConfig(np.full(d, 0.5), v, 1e-3 * v, nu)


def _unpack(p, d, nu):
    return KernelConfig(np.exp(p[:d]), float(np.exp(p[d])), float(np.exp(p[d + 1])), nu)


def fit_hyperparameters(X, Y, mean: MeanFunction = ZERO_MEAN, bounds: HyperBounds = HyperBounds(),
                        nu: float = 2.5, n_starts: int = 8, seed: int = 0,
                        maxfev: int = 300) -> KernelConfig:
    """Maximum-marginal-likelihood kernel hyperparameters.

    Bounded Nelder-Mead in log space from ``n_starts`` starting points; the
    first start is :func:`default_config`, the rest are a Latin hypercube
    over the log box. Deterministic for a given ``seed``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    n, d = X.shape
    if n < 3:
        raise ValueError("need at least three observations to fit hyperparameters")
    resid = Y - mean(X)
    # second moment about the prior mean, so a zero mean still sees the data's scale
    vy = float(np.mean(resid ** 2))
    scale = vy if vy > 0 else 1.0
    lo = np.r_[np.full(d, np.log(bounds.lengthscale[0])), np.log(bounds.variance_floor),
               np.log(bounds.nugget_floor)]
    hi = np.r_[np.full(d, np.log(bounds.lengthscale[1])), np.log(bounds.variance_factor * scale),
               np.log(scale)]
    hi = np.maximum(hi, lo + 1e-9)

    def nll(p):
        try:
            return -log_marginal_likelihood(X, Y, _unpack(p, d, nu), mean)
        except CholeskyError:
            return np.inf

    c0 = default_config(d, scale, nu)
    p0 = np.clip(np.r_[np.log(c0.lengthscales), np.log(c0.signal_variance), np.log(c0.nugget_variance)],
                 lo, hi)
    rng = np.random.default_rng(seed)
    starts = [p0] + list(lo + lhs_unit(max(n_starts - 1, 1), d + 2, rng) * (hi - lo))[: n_starts - 1]

    best_p, best_f = None, np.inf
    for s in starts:
        f0 = nll(s)
        if not np.isfinite(f0):
            continue
        res = minimize(nll, s, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-6})
        p, f = (res.x, res.fun) if res.fun <= f0 else (s, f0)
        if f < best_f:
            best_p, best_f = p, f
    if best_p is None:
        raise CholeskyError("every hyperparameter start failed to factor")
    return _unpack(best_p, d, nu)


def fit_gp(X, Y, mean: MeanFunction | None = None, nu: float = 2.5, seed: int = 0,
           **kw) -> GPModel:
    """Fit hyperparameters and return a conditioned model.

    Without an explicit mean the targets are centred by a constant prior
    mean equal to their average (hyperparameter bounds already scale with
    their variance), which is the same as standardizing the targets.
    """
    Y = np.asarray(Y, dtype=float)
    if mean is None:
        mean = MeanFunction("constant", float(np.mean(Y)))
    cfg = fit_hyperparameters(X, Y, mean, nu=nu, seed=seed, **kw)
    return make_model(X, Y, cfg, mean)


def with_config(m: GPModel, **changes) -> GPModel:
    return make_model(m.inputs, m.targets, replace(m.config, **changes), m.mean)
