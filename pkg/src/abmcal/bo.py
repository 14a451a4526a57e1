"""Batch Bayesian optimization with expected improvement.

The loop evaluates a Latin hypercube design, optionally fits a dimension
reduction map on it, and then alternates GP fits with batch proposals.
A batch is built one point at a time: the EI argmax over a random
candidate pool is chosen, the GP is conditioned on a pseudo-observation
equal to its own predicted mean there, and the next point is chosen from
the updated model.

The GP always sees search coordinates rescaled to the unit box.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import erfcx, ndtr

from . import active
from .design import ParameterSpace, lhs_unit, unscale
from .gp import ZERO_MEAN, GPModel, MeanFunction, condition_on_pseudo, fit_gp, posterior
from .nn import MEAN_NET_DEFAULTS, CombinedNet, TrainConfig, train_combined, train_mean_net
from .pool import EvaluationJob, JobResult, Objective, job_seed, submit_batch

log = logging.getLogger(__name__)

SPACES = ("orig", "as", "nn")
MEANS = ("zero", "nn", "constant")

# stream tags for derived random generators
_INIT, _POOL, _GP, _NN, _MEAN, _EXPLORE = range(1, 7)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_SQRT_HALF_PI = np.sqrt(0.5 * np.pi)
_INV_SQRT_2 = 1.0 / np.sqrt(2.0)


class CalibrationAborted(RuntimeError):
    """Too many simulator failures in one batch."""

    def __init__(self, message: str, state: "BOState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class BOConfig:
    iterations: int = 20
    batch_size: int = 2
    n_initial: int = 16
    candidate_pool: int = 2048
    space_mode: str = "orig"
    gp_mean: str = "zero"
    seed: int = 0
    workers: int = 1
    nu: float = 2.5
    as_method: str = active.GLOBAL
    as_q: int | None = None  # None: gap detection
    as_margin: float = 0.1
    nn_latent: int = 3
    nn_train: TrainConfig = TrainConfig()
    mean_train: TrainConfig = MEAN_NET_DEFAULTS
    reconstruct_mode: str = "feasible"
    max_fail_fraction: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.candidate_pool < self.batch_size:
            raise ValueError("candidate_pool must be at least batch_size")
        if self.iterations < 0 or self.n_initial < 1:
            raise ValueError("need iterations >= 0 and n_initial >= 1")
        if self.space_mode not in SPACES:
            raise ValueError(f"space_mode must be one of {SPACES}, got {self.space_mode!r}")
        if self.gp_mean not in MEANS:
            raise ValueError(f"gp_mean must be one of {MEANS}, got {self.gp_mean!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class Evaluation:
    id: str
    iteration: int  # 0 for the initial design
    theta: np.ndarray  # unit-cube coordinates
    psi: np.ndarray  # search coordinates
    status: str
    loss: float
    output: np.ndarray | None = field(default=None, repr=False)
    message: str = ""


@dataclass
class BOState:
    space: ParameterSpace
    evaluated: list[Evaluation] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)  # best loss after each iteration
    proposals: list[np.ndarray] = field(default_factory=list)  # search points per iteration
    degenerate: list[bool] = field(default_factory=list)
    search_box: tuple[np.ndarray, np.ndarray] | None = None
    reducer: object = None

    def ok(self) -> list[Evaluation]:
        return [e for e in self.evaluated if e.status == "ok"]

    @property
    def incumbent(self) -> Evaluation | None:
        ok = self.ok()
        return min(ok, key=lambda e: e.loss) if ok else None

    @property
    def initial_best(self) -> float:
        init = [e.loss for e in self.evaluated if e.iteration == 0 and e.status == "ok"]
        return min(init) if init else float("nan")

    def iteration_found(self) -> int:
        inc = self.incumbent
        return -1 if inc is None else inc.iteration

    def improvement(self) -> float:
        """Fractional improvement of the final best over the initial-design best."""
        a, b = self.initial_best, self.incumbent.loss
        return (a - b) / a if a != 0 else 0.0


def derived_seed(seed: int, tag: int, i: int = 0) -> int:
    return int(np.random.SeedSequence([int(seed), tag, i]).generate_state(1)[0])


def derived_rng(seed: int, tag: int, i: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag, i])


# -- acquisition ---------------------------------------------------------------

def expected_improvement(mean, variance, best: float) -> np.ndarray:
    """EI for minimization: ``sigma * (u Phi(u) + phi(u))`` with ``u = (best - mean) / sigma``.

    Zero where the variance is zero.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(variance, dtype=float)
    if np.any(var < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(var)
    pos = sigma > 0
    safe = np.where(pos, sigma, 1.0)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        u = (best - mean) / safe
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
        # for u < 0, u Phi(u) + phi(u) cancels; Phi(u) = phi(u) sqrt(pi/2) erfcx(-u/sqrt(2)) avoids that
        tail = pdf * (1.0 + u * _SQRT_HALF_PI * erfcx(-u * _INV_SQRT_2))
        ei = safe * np.where(u < 0, tail, u * ndtr(u) + pdf)
    ei = np.where(pos, np.maximum(ei, 0.0), 0.0)
    return ei if ei.ndim else float(ei)


def _select(ei: np.ndarray, mean: np.ndarray, cand: np.ndarray, taken: list[np.ndarray]) -> int:
    # largest EI, then lowest mean, then lexicographically smallest point
    keys = [cand[:, j] for j in range(cand.shape[1] - 1, -1, -1)] + [mean, -ei]
    for i in np.lexsort(keys):
        if not any(np.array_equal(cand[i], t) for t in taken):
            return int(i)
    raise RuntimeError("candidate pool exhausted")


@dataclass(frozen=True)
class Proposal:
    points: np.ndarray  # (c, q) in the search box
    ei: np.ndarray
    degenerate: bool


def propose_batch(model: GPModel, best: float, batch_size: int, candidate_pool: int,
                  rng: np.random.Generator, search_box=None) -> Proposal:
    """Pick ``batch_size`` points by EI with pseudo-observation conditioning.

    Parameters
    ----------
    model : GPModel
        Fitted surrogate whose inputs live in ``search_box``.
    best : float
        Incumbent loss.
    search_box : (lower, upper), optional
        Defaults to the unit cube.
    """
    q = model.dim
    lo, hi = (np.zeros(q), np.ones(q)) if search_box is None else map(np.asarray, search_box)
    pts, eis, taken = [], [], []
    m = model
    for _ in range(batch_size):
        cand = lo + lhs_unit(candidate_pool, q, rng) * (hi - lo)
        pred = posterior(m, cand)
        if not np.any(pred.variance > 0):
            log.warning("surrogate has zero variance everywhere; exploring at random")
            explore = lo + lhs_unit(batch_size, q, rng) * (hi - lo)
            return Proposal(explore, np.zeros(batch_size), True)
        ei = expected_improvement(pred.mean, pred.variance, best)
        i = _select(ei, pred.mean, cand, taken)
        pts.append(cand[i])
        eis.append(ei[i])
        taken.append(cand[i])
        m = condition_on_pseudo(m, cand[i], float(pred.mean[i]))
    return Proposal(np.array(pts), np.array(eis), False)


# -- search spaces ---------------------------------------------------------------

class Reducer:
    """Maps between unit-cube parameters and the search space."""

    lower: np.ndarray
    upper: np.ndarray

    def to_search(self, U) -> np.ndarray:
        raise NotImplementedError

    def to_unit(self, psi) -> np.ndarray:
        raise NotImplementedError

    def to_gp(self, psi) -> np.ndarray:
        return (np.asarray(psi) - self.lower) / (self.upper - self.lower)

    def from_gp(self, g) -> np.ndarray:
        return self.lower + np.asarray(g) * (self.upper - self.lower)


class IdentityReducer(Reducer):
    def __init__(self, d: int):
        self.lower, self.upper = np.zeros(d), np.ones(d)

    def to_search(self, U):
        return np.atleast_2d(np.asarray(U, dtype=float)).copy()

    def to_unit(self, psi):
        return np.clip(np.asarray(psi, dtype=float), 0.0, 1.0)


class ActiveReducer(Reducer):
    def __init__(self, subspace: active.ActiveSubspace, U, margin: float, mode: str):
        self.subspace = subspace
        self.mode = mode
        v = active.project(subspace, U)
        lo, hi = v.min(axis=0), v.max(axis=0)
        pad = margin * np.maximum(hi - lo, 1e-12)
        self.lower, self.upper = lo - pad, hi + pad

    def to_search(self, U):
        return np.atleast_2d(active.project(self.subspace, U))

    def to_unit(self, psi):
        return active.reconstruct(self.subspace, psi, mode=self.mode).unit


class NeuralReducer(Reducer):
    def __init__(self, net: CombinedNet):
        self.net = net
        self.lower, self.upper = net.latent_box()

    def to_search(self, U):
        return self.net.encode(U)

    def to_unit(self, psi):
        return self.net.decode(np.atleast_2d(psi))[0]


def fit_reducer(cfg: BOConfig, U: np.ndarray, L: np.ndarray) -> Reducer:
    d = U.shape[1]
    if cfg.space_mode == "orig":
        return IdentityReducer(d)
    if cfg.space_mode == "as":
        sub = active.active_subspace(U, L, cfg.as_method)
        if cfg.as_q is not None:
            sub = sub.with_q(cfg.as_q)
        log.info("active subspace: q=%d eigenvalues %s", sub.q, np.array2string(sub.eigvals, precision=3))
        return ActiveReducer(sub, U, cfg.as_margin, cfg.reconstruct_mode)
    q = min(cfg.nn_latent, d)
    net, hist = train_combined(U, L, cfg=replace(cfg.nn_train, seed=derived_seed(cfg.seed, _NN)), q=q)
    log.info("combined network trained: loss %.4g -> %.4g", hist[0], min(hist))
    return NeuralReducer(net)


# -- main loop -------------------------------------------------------------------------

def _evaluate(state: BOState, objective: Objective, cfg: BOConfig, iteration: int,
              units: np.ndarray, psis: np.ndarray, ids: list[str]) -> list[JobResult]:
    jobs = [EvaluationJob(i, unscale(u, state.space), job_seed(cfg.seed, i)) for i, u in zip(ids, units)]
    results = submit_batch(jobs, objective, cfg.workers)
    for r, u, p in zip(results, units, psis):
        state.evaluated.append(Evaluation(r.id, iteration, np.asarray(u, dtype=float),
                                          np.asarray(p, dtype=float), r.status, r.loss,
                                          r.output, r.message))
    n_fail = sum(not r.ok for r in results)
    if n_fail > cfg.max_fail_fraction * len(results):
        raise CalibrationAborted(f"{n_fail} of {len(results)} evaluations failed in iteration {iteration}",
                                 state)
    return results


def _fit_surrogate(state: BOState, cfg: BOConfig, red: Reducer, iteration: int) -> GPModel:
    ok = state.ok()
    G = np.array([red.to_gp(e.psi) for e in ok])
    y = np.array([e.loss for e in ok])
    mean = ZERO_MEAN
    if cfg.gp_mean == "constant":
        mean = MeanFunction("constant", float(np.mean(y)))
    elif cfg.gp_mean == "nn":
        net, _ = train_mean_net(G, y, cfg=replace(cfg.mean_train,
                                                   seed=derived_seed(cfg.seed, _MEAN, iteration)))
        mean = MeanFunction("network", network=net)
    return fit_gp(G, y, mean, nu=cfg.nu, seed=derived_seed(cfg.seed, _GP, iteration))


def run_calibration(objective: Objective, space: ParameterSpace, cfg: BOConfig = BOConfig(),
                    callback: Callable[[BOState], None] | None = None) -> BOState:
    """Initial design, optional dimension reduction, then batch BO.

    Every evaluation, failed or not, is kept in ``state.evaluated``.
    ``state.trace[k]`` is the best loss after iteration ``k`` (``k = 0`` is
    the initial design).
    """
    state = BOState(space)
    U0 = lhs_unit(cfg.n_initial, space.dim, derived_rng(cfg.seed, _INIT))
    ids0 = [f"init-{i:03d}" for i in range(cfg.n_initial)]
    _evaluate(state, objective, cfg, 0, U0, U0, ids0)
    ok = state.ok()
    if len(ok) < 2:
        raise CalibrationAborted("fewer than two successful initial evaluations", state)

    Uok = np.array([e.theta for e in ok])
    red = fit_reducer(cfg, Uok, np.array([e.loss for e in ok]))
    state.reducer = red
    state.search_box = (red.lower, red.upper)
    # initial points enter the search space through the fitted map
    for e in state.evaluated:
        e.psi = red.to_search(e.theta)[0]
    state.trace.append(state.incumbent.loss)
    if callback:
        callback(state)

    for it in range(1, cfg.iterations + 1):
        model = _fit_surrogate(state, cfg, red, it)
        prop = propose_batch(model, state.incumbent.loss, cfg.batch_size, cfg.candidate_pool,
                             derived_rng(cfg.seed, _POOL, it))
        psis = red.from_gp(prop.points)
        units = np.array([red.to_unit(p) for p in psis])
        state.proposals.append(psis)
        state.degenerate.append(prop.degenerate)
        ids = [f"it{it:03d}-{k}" for k in range(cfg.batch_size)]
        _evaluate(state, objective, cfg, it, units, psis, ids)
        state.trace.append(state.incumbent.loss)
        log.info("iteration %d: best %.6g", it, state.trace[-1])
        if callback:
            callback(state)
    return state
