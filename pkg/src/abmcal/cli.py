"""Command-line entry point: ``abmcal {morris,asdim,calibrate}``.

Exit codes: 0 success, 1 configuration error, 2 too many simulator failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import active
from .bo import BOState, CalibrationAborted, derived_rng, run_calibration
from .config import ConfigError, RunConfig, load_config, validate
from .design import lhs_unit, unscale
from .pool import (ExternalSimulator, FunctionObjective, SeriesObjective, ToyRunner, EvaluationJob,
                   job_seed, submit_batch)
from .report import write_table
from .sensitivity import build_trajectories, elementary_effects, morris_stats, rank_variables
from .sim.benchmarks import BENCHMARKS
from .sim.toy import DEFAULT_TOY, default_observed, read_series

log = logging.getLogger("abmcal")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2

# stream tags for the screening commands, distinct from the BO loop's
_ASDIM = 101


class RunFailed(RuntimeError):
    """Simulator failures exceeded the tolerated fraction."""


def make_objective(cfg: RunConfig):
    sim = cfg.simulator
    if sim.kind == "benchmark":
        return FunctionObjective(BENCHMARKS[sim.benchmark][0])
    observed = read_series(sim.observed) if sim.observed is not None else default_observed()
    if sim.kind == "toy":
        toy = DEFAULT_TOY if sim.population is None else replace(DEFAULT_TOY, population=sim.population)
        return SeriesObjective(ToyRunner(toy), observed)
    try:
        runner = ExternalSimulator(sim.command, cfg.out, sim.timeout)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    return SeriesObjective(runner, observed)


def _evaluate_units(cfg: RunConfig, objective, units: np.ndarray, ids: list[str]):
    jobs = [EvaluationJob(i, unscale(u, cfg.space), job_seed(cfg.seed, i)) for i, u in zip(ids, units)]
    return submit_batch(jobs, objective, cfg.workers)


def _eval_rows(cfg: RunConfig, ids, units, results, extra=None):
    rows = []
    for k, (i, u, r) in enumerate(zip(ids, units, results)):
        theta = unscale(u, cfg.space).values.tolist()
        rows.append([i] + (extra[k] if extra else []) + [r.status, r.loss] + theta + [r.message])
    return rows


# -- morris -----------------------------------------------------------------------------

def cmd_morris(cfg: RunConfig) -> int:
    objective = make_objective(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    trajs = build_trajectories(cfg.space, cfg.morris_trajectories, seed=cfg.seed,
                               levels=cfg.morris_levels)
    d = cfg.space.dim
    units = np.vstack([t.points for t in trajs])
    ids = [f"morris-{i:03d}-{k}" for i in range(len(trajs)) for k in range(d + 1)]
    results = _evaluate_units(cfg, objective, units, ids)
    extra = [[i, k] for i in range(len(trajs)) for k in range(d + 1)]
    write_table(cfg.out / "morris_evaluations.csv",
                ["id", "trajectory", "step", "status", "loss"] + cfg.space.names + ["message"],
                _eval_rows(cfg, ids, units, results, extra))
    log.info("morris: %d simulator evaluations", len(results))

    ok = np.array([r.ok for r in results]).reshape(len(trajs), d + 1)
    if (~ok).sum() > 0.5 * ok.size:
        raise RunFailed(f"{(~ok).sum()} of {ok.size} Morris evaluations failed")
    keep = [i for i in range(len(trajs)) if ok[i].all()]
    if not keep:
        raise RunFailed("no Morris trajectory completed without failures")
    losses = np.array([r.loss for r in results]).reshape(len(trajs), d + 1)[keep]
    stats = morris_stats(elementary_effects([trajs[i] for i in keep], losses))
    rows = []
    for rank, (j, tags) in enumerate(rank_variables(stats), start=1):
        rows.append([j + 1, cfg.space.names[j], stats.mu[j], stats.sigma[j], stats.mu_star[j],
                     ";".join(tags), rank])
    write_table(cfg.out / "morris.csv", ["dim", "name", "mu", "sigma", "mu_star", "class", "rank"], rows)
    return EXIT_OK


# -- active subspace dimension --------------------------------------------------------------

def cmd_asdim(cfg: RunConfig) -> int:
    objective = make_objective(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    units = lhs_unit(cfg.as_samples, cfg.space.dim, derived_rng(cfg.seed, _ASDIM))
    ids = [f"as-{i:03d}" for i in range(len(units))]
    results = _evaluate_units(cfg, objective, units, ids)
    write_table(cfg.out / "as_evaluations.csv", ["id", "status", "loss"] + cfg.space.names + ["message"],
                _eval_rows(cfg, ids, units, results))
    ok = [k for k, r in enumerate(results) if r.ok]
    if len(results) - len(ok) > 0.5 * len(results):
        raise RunFailed(f"{len(results) - len(ok)} of {len(results)} evaluations failed")
    U = units[ok]
    L = np.array([results[k].loss for k in ok])
    try:
        sub = active.active_subspace(U, L, cfg.as_method, cfg.as_neighbours)
        boot = active.bootstrap_eigenvalues(U, L, cfg.as_method, cfg.as_bootstrap, cfg.seed,
                                            cfg.as_neighbours)
    except ValueError as exc:  # includes rank-deficient regressions
        raise RunFailed(f"active subspace estimation failed: {exc}") from None
    if cfg.as_q is not None:
        sub = sub.with_q(cfg.as_q)
    rows = [[i + 1, sub.eigvals[i], boot.lower[i], boot.upper[i], int(i < sub.q)]
            for i in range(sub.dim)]
    write_table(cfg.out / "eigvals.csv", ["index", "eigenvalue", "lower", "upper", "active"], rows)
    V = active.project(sub, U)
    write_table(cfg.out / "projection.csv", ["id"] + [f"v{j + 1}" for j in range(sub.q)] + ["loss"],
                [[ids[k]] + V[n].tolist() + [L[n]] for n, k in enumerate(ok)])
    print(f"active dimension q = {sub.q}" + (" (low confidence)" if sub.low_confidence else ""))
    return EXIT_OK


# -- calibration ---------------------------------------------------------------------------

def write_calibration(state: BOState, cfg: RunConfig, observed=None) -> None:
    bo = cfg.bo_config()
    out = cfg.out
    names = cfg.space.names
    c = bo.batch_size
    header = ["iteration", "best_loss"] + [f"p{k}_{n}" for k in range(c) for n in names]
    rows = []
    for it, best in enumerate(state.trace):
        pts = [""] * (c * len(names))
        if it > 0:
            batch = [e for e in state.evaluated if e.iteration == it]
            pts = [v for e in batch for v in unscale(e.theta, cfg.space).values.tolist()]
        rows.append([it, best] + pts)
    write_table(out / "trace.csv", header, rows)

    q = len(state.evaluated[0].psi) if state.evaluated else 0
    write_table(out / "evaluations.csv",
                ["id", "iteration", "status", "loss"] + names + [f"psi{j + 1}" for j in range(q)]
                + ["message"],
                [[e.id, e.iteration, e.status, e.loss] + unscale(e.theta, cfg.space).values.tolist()
                 + np.asarray(e.psi).tolist() + [e.message] for e in state.evaluated])

    inc = state.incumbent
    if inc is not None and state.trace:
        label = f"{bo.space_mode}+{bo.gp_mean}"
        write_table(out / "summary.csv",
                    ["configuration", "best_value", "improvement_pct", "iteration_found", "initial_best"],
                    [[label, inc.loss, 100.0 * state.improvement(), state.iteration_found(),
                      state.initial_best]])
    if observed is not None and inc is not None and inc.output is not None:
        init = min((e for e in state.ok() if e.iteration == 0), key=lambda e: e.loss)
        write_table(out / "qq.csv", ["observed", "best", "initial_best"],
                    zip(np.sort(observed).tolist(), np.sort(inc.output).tolist(),
                        np.sort(init.output).tolist()))


def cmd_calibrate(cfg: RunConfig) -> int:
    objective = make_objective(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    observed = getattr(objective, "observed", None)
    try:
        state = run_calibration(objective, cfg.space, cfg.bo_config())
    except CalibrationAborted as exc:
        if exc.state.trace:
            write_calibration(exc.state, cfg, observed)
        raise RunFailed(str(exc)) from None
    write_calibration(state, cfg, observed)
    inc = state.incumbent
    print(f"best loss {inc.loss:.6g} (initial {state.initial_best:.6g}, "
          f"{100 * state.improvement():.1f}% improvement, iteration {state.iteration_found()})")
    return EXIT_OK


# -- argument handling -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abmcal", description="Calibrate simulators with Bayesian optimization.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="run configuration file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--workers", type=int, help="concurrent simulator runs")

    common(sub.add_parser("morris", help="Morris screening"))
    sp = sub.add_parser("asdim", help="active subspace eigenvalues")
    common(sp)
    sp.add_argument("--bootstrap", type=int, help="bootstrap replicates")
    sp.add_argument("--q", type=int, help="override the detected active dimension")
    sp = sub.add_parser("calibrate", help="Bayesian-optimization calibration")
    common(sp)
    sp.add_argument("--space", choices=("orig", "as", "nn"))
    sp.add_argument("--mean", choices=("zero", "nn", "constant"))
    sp.add_argument("--iters", type=int, help="BO iterations")
    sp.add_argument("--batch", type=int, help="points per iteration")
    return p


def resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    upd = {}
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.out is not None:
        upd["out"] = args.out
    if args.workers is not None:
        upd["workers"] = args.workers
    if getattr(args, "bootstrap", None) is not None:
        upd["as_bootstrap"] = args.bootstrap
    if getattr(args, "q", None) is not None:
        upd["as_q"] = args.q
    bo = {}
    for flag, key in (("space", "space_mode"), ("mean", "gp_mean"), ("iters", "iterations"),
                      ("batch", "batch_size")):
        if getattr(args, flag, None) is not None:
            bo[key] = getattr(args, flag)
    try:
        if bo:
            upd["bo"] = replace(cfg.bo, **bo)
        cfg = replace(cfg, **upd)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


COMMANDS = {"morris": cmd_morris, "asdim": cmd_asdim, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"abmcal: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailed as exc:
        print(f"abmcal: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())
