"""Run configuration files.

INI-style: ``[section]`` headers and ``key = value`` lines, ``#`` or ``;``
comments. Every section and key is optional::

    [run]
    seed = 0
    out = results
    workers = 1

    [simulator]
    kind = toy              # toy | external | benchmark
    observed = obs.csv      # toy/external; default is the shipped series
    command = ./mysim       # external only
    timeout = 3600          # external only, seconds
    benchmark = branin2     # benchmark only
    population = 3000       # toy only

    [parameters]            # name = lower, upper; replaces the default space
    HBO_B_male_taxi = 0.298, 2.298

    [morris]
    trajectories = 6
    levels = 4

    [active]
    method = global         # global | local
    neighbours = 12         # local only
    samples = 16
    bootstrap = 1000
    q = 2                   # omit for automatic gap detection

    [calibrate]
    space = orig            # orig | as | nn
    mean = zero             # zero | nn | constant
    iterations = 20
    batch = 2
    initial = 16
    pool = 2048
    latent = 3
"""
from __future__ import annotations

import configparser
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path

from .active import GLOBAL, LOCAL
from .bo import MEANS, SPACES, BOConfig
from .design import ABM_SPACE, ParameterSpace
from .sim.benchmarks import BENCHMARKS, benchmark_space

SIM_KINDS = ("toy", "external", "benchmark")

_KNOWN = {
    "run": {"seed", "out", "workers"},
    "simulator": {"kind", "observed", "command", "timeout", "benchmark", "population"},
    "parameters": None,
    "morris": {"trajectories", "levels"},
    "active": {"method", "neighbours", "samples", "bootstrap", "q"},
    "calibrate": {"space", "mean", "iterations", "batch", "initial", "pool", "latent"},
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class SimulatorConfig:
    kind: str = "toy"
    observed: Path | None = None
    command: tuple[str, ...] = ()
    timeout: float = 3600.0
    benchmark: str = "branin2"
    population: int | None = None


@dataclass(frozen=True)
class RunConfig:
    space: ParameterSpace = ABM_SPACE
    simulator: SimulatorConfig = SimulatorConfig()
    out: Path = Path("results")
    seed: int = 0
    workers: int = 1
    morris_trajectories: int = 6
    morris_levels: int = 4
    as_method: str = GLOBAL
    as_neighbours: int | None = None
    as_samples: int = 16
    as_bootstrap: int = 1000
    as_q: int | None = None
    bo: BOConfig = field(default_factory=BOConfig)

    def bo_config(self) -> BOConfig:
        """BO settings with run-level seed and worker count applied."""
        return replace(self.bo, seed=self.seed, workers=self.workers, as_method=self.as_method,
                       as_q=self.as_q)


def _get(sec, key, conv, default, what):
    if sec is None or key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{what}.{key}: cannot parse {raw!r}") from None


def _choice(value: str, options, what: str) -> str:
    if value not in options:
        raise ConfigError(f"{what} must be one of {', '.join(options)}; got {value!r}")
    return value


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # parameter names are case sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    for name in cp.sections():
        if name not in _KNOWN:
            raise ConfigError(f"unknown section [{name}]")
        allowed = _KNOWN[name]
        if allowed is not None:
            extra = set(cp[name]) - allowed
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
    g = lambda s: cp[s] if cp.has_section(s) else None  # noqa: E731

    run, simsec, mo, act, cal = g("run"), g("simulator"), g("morris"), g("active"), g("calibrate")
    kind = _choice(_get(simsec, "kind", str, "toy", "simulator"), SIM_KINDS, "simulator.kind")
    observed = _get(simsec, "observed", str, None, "simulator")
    if observed is not None:
        observed = (base_dir / observed).resolve()
        if not observed.is_file():
            raise ConfigError(f"observed series not found: {observed}")
    command = tuple(shlex.split(_get(simsec, "command", str, "", "simulator")))
    if kind == "external" and not command:
        raise ConfigError("simulator.command is required for kind = external")
    bench = _choice(_get(simsec, "benchmark", str, "branin2", "simulator"), sorted(BENCHMARKS),
                    "simulator.benchmark")
    timeout = _get(simsec, "timeout", float, 3600.0, "simulator")
    if not timeout > 0:
        raise ConfigError("simulator.timeout must be positive")
    population = _get(simsec, "population", int, None, "simulator")
    sim = SimulatorConfig(kind, observed, command, timeout, bench, population)

    if cp.has_section("parameters") and len(cp["parameters"]):
        bounds = []
        for name, raw in cp["parameters"].items():
            parts = [p.strip() for p in raw.split(",")]
            try:
                lo, hi = (float(p) for p in parts)
            except ValueError:
                raise ConfigError(f"parameters.{name}: expected 'lower, upper', got {raw!r}") from None
            bounds.append((name, lo, hi))
        try:
            space = ParameterSpace.from_bounds(bounds)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif kind == "benchmark":
        space = benchmark_space(bench)
    else:
        space = ABM_SPACE
    if kind == "benchmark" and space.dim != benchmark_space(bench).dim:
        raise ConfigError(f"benchmark {bench} takes {benchmark_space(bench).dim} parameters")
    if kind == "toy" and space.names != ABM_SPACE.names:
        raise ConfigError(f"the toy simulator takes exactly the parameters {ABM_SPACE.names}")

    method = _choice(_get(act, "method", str, GLOBAL, "active"), (GLOBAL, LOCAL), "active.method")
    space_mode = _choice(_get(cal, "space", str, "orig", "calibrate"), SPACES, "calibrate.space")
    mean = _choice(_get(cal, "mean", str, "zero", "calibrate"), MEANS, "calibrate.mean")
    try:
        bo = BOConfig(iterations=_get(cal, "iterations", int, 20, "calibrate"),
                      batch_size=_get(cal, "batch", int, 2, "calibrate"),
                      n_initial=_get(cal, "initial", int, 16, "calibrate"),
                      candidate_pool=_get(cal, "pool", int, 2048, "calibrate"),
                      space_mode=space_mode, gp_mean=mean,
                      nn_latent=_get(cal, "latent", int, 3, "calibrate"))
        cfg = RunConfig(space=space, simulator=sim,
                        out=(base_dir / _get(run, "out", str, "results", "run")),
                        seed=_get(run, "seed", int, 0, "run"),
                        workers=_get(run, "workers", int, 1, "run"),
                        morris_trajectories=_get(mo, "trajectories", int, 6, "morris"),
                        morris_levels=_get(mo, "levels", int, 4, "morris"),
                        as_method=method,
                        as_neighbours=_get(act, "neighbours", int, None, "active"),
                        as_samples=_get(act, "samples", int, 16, "active"),
                        as_bootstrap=_get(act, "bootstrap", int, 1000, "active"),
                        as_q=_get(act, "q", int, None, "active"),
                        bo=bo)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.seed < 0:
        raise ConfigError("run.seed must be non-negative")
    if cfg.workers < 1:
        raise ConfigError("run.workers must be at least 1")
    if cfg.morris_trajectories < 1 or cfg.morris_levels < 2:
        raise ConfigError("morris needs trajectories >= 1 and levels >= 2")
    if cfg.as_bootstrap < 2:
        raise ConfigError("active.bootstrap must be at least 2")
    if cfg.as_samples < cfg.space.dim + 1:
        raise ConfigError(f"active.samples must be at least d + 1 = {cfg.space.dim + 1}")
    if cfg.as_q is not None and not 1 <= cfg.as_q <= cfg.space.dim:
        raise ConfigError(f"active.q must lie in [1, {cfg.space.dim}]")
    if cfg.simulator.population is not None and cfg.simulator.population < 1:
        raise ConfigError("simulator.population must be at least 1")


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {p}: {exc.strerror}") from None
    return parse_config(text, p.parent)
