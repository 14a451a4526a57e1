"""Concurrent evaluation of simulator runs.

A batch of :class:`EvaluationJob` is run on a thread pool; each job is a
pure function of its parameters and seed, so results do not depend on the
number of workers or on completion order. Failures are captured as data.

External simulators are driven through a file protocol: the tool writes
``input.csv`` (``name,value`` rows followed by ``seed,<n>``), runs
``<command> input.csv output.csv`` and reads ``output.csv`` (``bin,value``,
288 rows) back.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
import shutil
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .design import DesignPoint
from .sim.toy import DEFAULT_TOY, ToySimConfig, loss_mse, read_series, toy_simulator

log = logging.getLogger(__name__)

OK = "ok"
FAILED = "failed"
DEFAULT_TIMEOUT = 3600.0

_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True)
class EvaluationJob:
    id: str
    theta: DesignPoint
    seed: int

    def __post_init__(self):
        if not _ID.match(self.id):
            raise ValueError(f"job id {self.id!r} must be a non-empty [A-Za-z0-9_.-] string")


@dataclass(frozen=True)
class JobResult:
    id: str
    status: str
    loss: float = float("nan")
    output: np.ndarray | None = None
    message: str = ""
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OK


def job_seed(master_seed: int, job_id: str) -> int:
    """64-bit seed derived from the master seed and the job id alone."""
    h = hashlib.blake2b(f"{int(master_seed)}:{job_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


# An objective maps a job to ``(loss, output_series_or_None)``.
Objective = Callable[[EvaluationJob], "tuple[float, np.ndarray | None]"]


def _run_one(objective: Objective, job: EvaluationJob) -> JobResult:
    t0 = time.perf_counter()
    try:
        loss, output = objective(job)
        loss = float(loss)
        if not np.isfinite(loss):
            raise ValueError(f"non-finite loss {loss}")
    except Exception as exc:  # failures are data
        msg = f"{type(exc).__name__}: {exc}"
        log.warning("job %s failed: %s", job.id, msg)
        return JobResult(job.id, FAILED, message=msg, wall_time=time.perf_counter() - t0)
    return JobResult(job.id, OK, loss, output, wall_time=time.perf_counter() - t0)


def default_workers(n_jobs: int) -> int:
    return max(1, min(os.cpu_count() or 1, n_jobs))


def submit_batch(jobs: Sequence[EvaluationJob], objective: Objective,
                 workers: int | None = None) -> list[JobResult]:
    """Run every job, at most ``workers`` at a time.

    Results come back in job order regardless of completion order. With
    one worker the jobs run sequentially in the calling thread.
    """
    jobs = list(jobs)
    ids = [j.id for j in jobs]
    if len(set(ids)) != len(ids):
        raise ValueError("job ids must be unique within a batch")
    workers = default_workers(len(jobs)) if workers is None else int(workers)
    if workers < 1:
        raise ValueError("need at least one worker")
    if workers == 1 or len(jobs) <= 1:
        return [_run_one(objective, j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(_run_one, objective, j) for j in jobs]
        return [f.result() for f in futures]


def results_by_id(results: Sequence[JobResult]) -> dict[str, JobResult]:
    return {r.id: r for r in results}


# -- objectives -----------------------------------------------------------------

class SeriesObjective:
    """Loss of a series-producing runner against an observed series."""

    def __init__(self, runner: Callable[[EvaluationJob], np.ndarray], observed):
        self.runner = runner
        self.observed = np.asarray(observed, dtype=float)

    def __call__(self, job: EvaluationJob):
        out = np.asarray(self.runner(job), dtype=float)
        return loss_mse(self.observed, out), out


class FunctionObjective:
    """Scalar function of the parameter values; the seed is ignored."""

    def __init__(self, f: Callable[[np.ndarray], float]):
        self.f = f

    def __call__(self, job: EvaluationJob):
        return float(self.f(np.asarray(job.theta.values))), None


class ToyRunner:
    def __init__(self, cfg: ToySimConfig = DEFAULT_TOY):
        self.cfg = cfg

    def __call__(self, job: EvaluationJob) -> np.ndarray:
        return toy_simulator(job.theta, job.seed, self.cfg)


# -- external executables ---------------------------------------------------------

def write_input(path, theta: DesignPoint, seed: int) -> None:
    lines = ["name,value"] + [f"{n},{v!r}" for n, v in theta.as_dict().items()] + [f"seed,{int(seed)}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_input(path) -> tuple[dict[str, float], int]:
    """Parse an input file into ``({name: value}, seed)``."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != "name,value":
        raise ValueError(f"{path}: expected header 'name,value'")
    values: dict[str, float] = {}
    seed = None
    for ln in lines[1:]:
        name, _, val = ln.partition(",")
        if name == "seed":
            seed = int(val)
        elif seed is not None:
            raise ValueError(f"{path}: rows after the seed row")
        else:
            values[name] = float(val)
    if seed is None:
        raise ValueError(f"{path}: missing seed row")
    return values, seed


class ExternalSimulator:
    """Runner that invokes an executable through the CSV protocol.

    Parameters
    ----------
    command : str or sequence of str
        Executable (and leading arguments); the input and output paths are
        appended as two positional arguments.
    out_dir : path
        Job files go to ``<out_dir>/jobs/<id>/``.
    timeout : float
        Seconds before the run is killed and reported as failed.
    """

    def __init__(self, command: str | Sequence[str], out_dir, timeout: float = DEFAULT_TIMEOUT):
        cmd = [command] if isinstance(command, (str, os.PathLike)) else list(command)
        if not cmd:
            raise ValueError("empty command")
        exe = str(cmd[0])
        if shutil.which(exe) is None and not Path(exe).is_file():
            raise FileNotFoundError(f"simulator executable not found: {exe}")
        self.command = [str(c) for c in cmd]
        self.out_dir = Path(out_dir)
        self.timeout = float(timeout)

    def __call__(self, job: EvaluationJob) -> np.ndarray:
        d = self.out_dir / "jobs" / job.id
        d.mkdir(parents=True, exist_ok=True)
        inp, out, err = d / "input.csv", d / "output.csv", d / "stderr.txt"
        if out.exists():
            out.unlink()
        write_input(inp, job.theta, job.seed)
        with open(err, "wb") as fe:
            try:
                proc = subprocess.run(self.command + [str(inp), str(out)], stdout=subprocess.DEVNULL,
                                      stderr=fe, timeout=self.timeout)
            except subprocess.TimeoutExpired:
                raise TimeoutError(f"simulator exceeded {self.timeout:g} s") from None
        if proc.returncode != 0:
            tail = err.read_text(errors="replace").strip()[-2000:]
            raise RuntimeError(f"simulator exited with status {proc.returncode}: {tail}")
        return read_series(out)


def external_simulator(command, out_dir, observed, timeout: float = DEFAULT_TIMEOUT) -> SeriesObjective:
    """Objective backed by an external executable."""
    return SeriesObjective(ExternalSimulator(command, out_dir, timeout), observed)
