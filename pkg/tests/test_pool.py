import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from abmcal.design import ABM_SPACE, DesignPoint, ParameterSpace, latin_hypercube
from abmcal.pool import (FAILED, OK, EvaluationJob, ExternalSimulator, FunctionObjective,
                         SeriesObjective, ToyRunner, default_workers, external_simulator, job_seed,
                         read_input, results_by_id, submit_batch, write_input)
from abmcal.sim import loss_mse, toy_simulator
from abmcal.sim.toy import TRUE_THETA, make_observed

ECHO = [sys.executable, str(Path(__file__).parent / "data" / "echo_sim.py")]
LEVEL = ParameterSpace.from_bounds([("level", -10.0, 200.0), ("unused", 0.0, 1.0)])


def jobs_for(space, rows, prefix="j", master=0):
    return [EvaluationJob(f"{prefix}{i}", DesignPoint(r, space), job_seed(master, f"{prefix}{i}"))
            for i, r in enumerate(rows)]


def abm_jobs(n, seed=0):
    return jobs_for(ABM_SPACE, latin_hypercube(n, ABM_SPACE, seed=seed).values())


def toy_objective():
    return SeriesObjective(ToyRunner(), make_observed())


class TestJobs:
    @pytest.mark.parametrize("bad", ["", "a b", "x/y", "../up"])
    def test_id_validation(self, bad):
        with pytest.raises(ValueError):
            EvaluationJob(bad, DesignPoint(TRUE_THETA, ABM_SPACE), 0)

    def test_seed_depends_on_id_only(self):
        assert job_seed(3, "init-000") == job_seed(3, "init-000")
        assert job_seed(3, "init-000") != job_seed(3, "init-001")
        assert job_seed(3, "init-000") != job_seed(4, "init-000")
        assert 0 <= job_seed(0, "x") < 2 ** 64

    def test_default_workers_capped(self):
        assert default_workers(1) == 1
        assert 1 <= default_workers(1000) <= 1000


class TestSubmitBatch:
    def test_batch_of_two(self):
        res = submit_batch(abm_jobs(2), toy_objective(), workers=2)
        assert [r.id for r in res] == ["j0", "j1"]
        assert all(r.ok and r.output.shape == (288,) for r in res)

    def test_worker_count_does_not_change_results(self):
        jobs = abm_jobs(6, seed=4)
        obj = toy_objective()
        seq = [obj(j) for j in jobs]
        for w in (1, 3, 6):
            res = submit_batch(jobs, obj, workers=w)
            assert [r.loss for r in res] == [s[0] for s in seq]
            for r, s in zip(res, seq):
                np.testing.assert_array_equal(r.output, s[1])

    def test_results_in_job_order_despite_completion_order(self):
        def obj(job):
            time.sleep(0.02 * (5 - int(job.id[1:])))
            return float(job.id[1:]), None
        res = submit_batch(jobs_for(LEVEL, [[1.0, 0.5]] * 5), obj, workers=5)
        assert [r.loss for r in res] == [0.0, 1.0, 2.0, 3.0, 4.0]
        assert set(results_by_id(res)) == {f"j{i}" for i in range(5)}

    def test_parallel_speedup(self):
        def sleepy(job):
            time.sleep(0.1)
            return 0.0, None
        jobs = jobs_for(LEVEL, [[1.0, 0.5]] * 8)
        t0 = time.perf_counter()
        res = submit_batch(jobs, sleepy, workers=4)
        assert time.perf_counter() - t0 < 0.45
        assert all(r.ok for r in res)

    def test_at_most_workers_concurrently(self):
        lock, active, peak = threading.Lock(), [0], [0]

        def obj(job):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.02)
            with lock:
                active[0] -= 1
            return 0.0, None
        submit_batch(jobs_for(LEVEL, [[1.0, 0.5]] * 9), obj, workers=3)
        assert peak[0] <= 3

    def test_failures_are_captured(self):
        def obj(job):
            if job.id == "j1":
                raise RuntimeError("boom")
            if job.id == "j2":
                return float("nan"), None
            return 1.0, None
        res = submit_batch(jobs_for(LEVEL, [[1.0, 0.5]] * 3), obj, workers=2)
        assert [r.status for r in res] == [OK, FAILED, FAILED]
        assert "boom" in res[1].message and np.isnan(res[1].loss)

    def test_duplicate_ids(self):
        j = abm_jobs(1)[0]
        with pytest.raises(ValueError):
            submit_batch([j, j], toy_objective())

    def test_zero_workers(self):
        with pytest.raises(ValueError):
            submit_batch(abm_jobs(2), toy_objective(), workers=0)

    def test_function_objective(self):
        res = submit_batch(jobs_for(LEVEL, [[3.0, 0.25]]), FunctionObjective(lambda v: v.sum()))
        assert res[0].loss == 3.25 and res[0].output is None


class TestInputFiles:
    def test_round_trip(self, tmp_path):
        theta = DesignPoint(TRUE_THETA, ABM_SPACE)
        write_input(tmp_path / "in.csv", theta, 12345678901234)
        values, seed = read_input(tmp_path / "in.csv")
        assert seed == 12345678901234
        assert list(values) == list(ABM_SPACE.names)
        np.testing.assert_array_equal(list(values.values()), theta.values)

    @pytest.mark.parametrize("text", ["a,b\nx,1\nseed,1\n", "name,value\nx,1\n", "name,value\nseed,1\nx,2\n"])
    def test_malformed(self, tmp_path, text):
        (tmp_path / "in.csv").write_text(text)
        with pytest.raises(ValueError):
            read_input(tmp_path / "in.csv")


class TestExternal:
    def test_echo_executable(self, tmp_path):
        obj = external_simulator(ECHO, tmp_path, np.full(288, 2.0))
        res = submit_batch(jobs_for(LEVEL, [[5.0, 0.5]]), obj)
        assert res[0].ok and res[0].loss == pytest.approx(9.0)
        d = tmp_path / "jobs" / "j0"
        assert {p.name for p in d.iterdir()} == {"input.csv", "output.csv", "stderr.txt"}

    def test_nonzero_exit(self, tmp_path):
        obj = external_simulator(ECHO, tmp_path, np.zeros(288))
        res = submit_batch(jobs_for(LEVEL, [[-1.0, 0.5]]), obj)
        assert res[0].status == FAILED
        assert "status 3" in res[0].message and "negative level rejected" in res[0].message

    def test_malformed_output(self, tmp_path):
        obj = external_simulator(ECHO, tmp_path, np.zeros(288))
        res = submit_batch(jobs_for(LEVEL, [[150.0, 0.5]]), obj)
        assert res[0].status == FAILED and "288" in res[0].message

    def test_timeout(self, tmp_path):
        script = tmp_path / "slow.py"
        script.write_text("import time\ntime.sleep(5)\n")
        obj = external_simulator([sys.executable, str(script)], tmp_path, np.zeros(288), timeout=0.3)
        res = submit_batch(jobs_for(LEVEL, [[1.0, 0.5]]), obj)
        assert res[0].status == FAILED and "TimeoutError" in res[0].message

    def test_missing_executable(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExternalSimulator("/nonexistent/simulator", tmp_path)

    def test_toy_executable_matches_in_process(self, tmp_path):
        observed = make_observed()
        ext = external_simulator([sys.executable, "-m", "abmcal.sim.toy_exe"], tmp_path, observed)
        jobs = abm_jobs(5, seed=9)
        res = submit_batch(jobs, ext, workers=5)
        for job, r in zip(jobs, res):
            assert r.ok
            direct = toy_simulator(job.theta, job.seed)
            np.testing.assert_array_equal(r.output, direct)
            assert r.loss == loss_mse(observed, direct)

    def test_interleaved_jobs_keep_their_own_files(self, tmp_path):
        levels = [[float(i), 0.5] for i in range(1, 13)]
        obj = external_simulator(ECHO, tmp_path, np.zeros(288))
        res = submit_batch(jobs_for(LEVEL, levels), obj, workers=6)
        for (lv, _), r in zip(levels, res):
            assert r.ok
            np.testing.assert_array_equal(r.output, lv)
            values, _ = read_input(tmp_path / "jobs" / r.id / "input.csv")
            assert values["level"] == lv
