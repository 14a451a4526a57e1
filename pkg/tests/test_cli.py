import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from abmcal.cli import EXIT_CONFIG, EXIT_FAILURES, EXIT_OK, main
from abmcal.design import ABM_SPACE
from abmcal.report import column, read_table
from abmcal.sim import default_observed


def write_cfg(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def morris_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("morris")
    assert run("morris", "--out", out, "--seed", 3) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def calib_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("calib")
    assert run("calibrate", "--out", out, "--iters", 3, "--seed", 5) == EXIT_OK
    return out


class TestMorris:
    def test_thirty_six_evaluations(self, morris_out):
        header, rows = read_table(morris_out / "morris_evaluations.csv")
        assert len(rows) == 36
        assert header[:5] == ["id", "trajectory", "step", "status", "loss"]
        assert header[5:10] == list(ABM_SPACE.names)
        assert all(r[3] == "ok" for r in rows)

    def test_stats_table(self, morris_out):
        t = read_table(morris_out / "morris.csv")
        assert t[0] == ["dim", "name", "mu", "sigma", "mu_star", "class", "rank"]
        assert column(t, "rank") == [1, 2, 3, 4, 5]
        assert sorted(column(t, "dim")) == [1, 2, 3, 4, 5]
        assert [ABM_SPACE.names[k - 1] for k in column(t, "dim")] == column(t, "name")
        assert sorted(column(t, "name")) == sorted(ABM_SPACE.names)
        mu_star = column(t, "mu_star")
        assert mu_star == sorted(mu_star, reverse=True)
        assert all(abs(m) <= s + 1e-12 for m, s in zip(column(t, "mu"), mu_star))

    def test_rerun_is_byte_identical(self, morris_out, tmp_path):
        assert run("morris", "--out", tmp_path, "--seed", 3, "--workers", 4) == EXIT_OK
        for name in ("morris.csv", "morris_evaluations.csv"):
            assert (tmp_path / name).read_bytes() == (morris_out / name).read_bytes()

    def test_constant_benchmark_gives_zeros(self, tmp_path):
        cfg = write_cfg(tmp_path, "[simulator]\nkind = benchmark\nbenchmark = flat5\n")
        assert run("morris", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
        t = read_table(tmp_path / "o" / "morris.csv")
        for key in ("mu", "sigma", "mu_star"):
            assert column(t, key) == [0.0] * 5
        assert set(column(t, "class")) == {"negligible"}

    def test_failure_quota(self, tmp_path):
        script = tmp_path / "crash.py"
        script.write_text("import sys\nsys.exit(1)\n")
        cfg = write_cfg(tmp_path, f"[simulator]\nkind = external\ncommand = {sys.executable} {script}\n")
        assert run("morris", "--config", cfg, "--out", tmp_path / "o") == EXIT_FAILURES
        _, rows = read_table(tmp_path / "o" / "morris_evaluations.csv")
        assert len(rows) == 36 and all(r[3] == "failed" for r in rows)


class TestAsdim:
    def test_ridge_is_one_dimensional(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "[simulator]\nkind = benchmark\nbenchmark = ridge5\n"
                                  "[active]\nsamples = 100\nbootstrap = 50\n")
        assert run("asdim", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
        assert "active dimension q = 1" in capsys.readouterr().out
        t = read_table(tmp_path / "o" / "eigvals.csv")
        assert len(t[1]) == 5
        assert column(t, "active") == [1, 0, 0, 0, 0]
        for lo, v, hi in zip(column(t, "lower"), column(t, "eigenvalue"), column(t, "upper")):
            assert lo <= v <= hi
        h, rows = read_table(tmp_path / "o" / "projection.csv")
        assert h == ["id", "v1", "loss"] and len(rows) == 100

    def test_q_override(self, tmp_path):
        assert run("asdim", "--out", tmp_path, "--bootstrap", 20, "--q", 2) == EXIT_OK
        h, rows = read_table(tmp_path / "projection.csv")
        assert h == ["id", "v1", "v2", "loss"] and len(rows) == 16
        assert column(read_table(tmp_path / "eigvals.csv"), "active") == [1, 1, 0, 0, 0]

    def test_default_bootstrap(self):
        from abmcal.config import RunConfig
        assert RunConfig().as_bootstrap == 1000


class TestCalibrate:
    def test_outputs(self, calib_out):
        for name in ("trace.csv", "evaluations.csv", "summary.csv", "qq.csv"):
            assert (calib_out / name).is_file()
        t = read_table(calib_out / "trace.csv")
        assert column(t, "iteration") == [0, 1, 2, 3]
        best = column(t, "best_loss")
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert t[0][2:] == [f"p{k}_{n}" for k in range(2) for n in ABM_SPACE.names]
        h, rows = read_table(calib_out / "evaluations.csv")
        assert len(rows) == 16 + 3 * 2
        assert h[-1] == "message" and h[-2] == "psi5"

    def test_summary_formula(self, calib_out):
        t = read_table(calib_out / "summary.csv")
        (label,), (best,), (pct,), (it,), (init,) = (column(t, k) for k in t[0])
        assert label == "orig+zero"
        assert pct == pytest.approx(100 * (init - best) / init)
        assert 0 <= it <= 3
        losses = column(read_table(calib_out / "evaluations.csv"), "loss")
        assert best == min(losses) and init == min(losses[:16])

    def test_qq_table(self, calib_out):
        t = read_table(calib_out / "qq.csv")
        assert t[0] == ["observed", "best", "initial_best"] and len(t[1]) == 288
        for k in t[0]:
            col = column(t, k)
            assert col == sorted(col)
        assert column(t, "observed") == sorted(default_observed().tolist())

    def test_no_improvement_is_zero_percent(self, tmp_path):
        cfg = write_cfg(tmp_path, "[simulator]\nkind = benchmark\nbenchmark = flat5\n"
                                  "[calibrate]\niterations = 1\npool = 64\n")
        assert run("calibrate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
        t = read_table(tmp_path / "o" / "summary.csv")
        assert column(t, "improvement_pct") == [0.0]
        assert not (tmp_path / "o" / "qq.csv").exists()

    def test_neural_space_flags(self, tmp_path):
        assert run("calibrate", "--out", tmp_path, "--iters", 1, "--space", "nn") == EXIT_OK
        h, _ = read_table(tmp_path / "evaluations.csv")
        assert "psi3" in h and "psi4" not in h
        assert column(read_table(tmp_path / "summary.csv"), "configuration") == ["nn+zero"]

    def test_simulator_failures_exit_two(self, tmp_path):
        script = tmp_path / "crash.py"
        script.write_text("import sys\nprint('licence server unreachable', file=sys.stderr)\nsys.exit(1)\n")
        cfg = write_cfg(tmp_path, f"[simulator]\nkind = external\ncommand = {sys.executable} {script}\n")
        assert run("calibrate", "--config", cfg, "--out", tmp_path / "o") == EXIT_FAILURES
        err = (tmp_path / "o" / "jobs" / "init-000" / "stderr.txt").read_text()
        assert "licence server unreachable" in err

    @pytest.mark.parametrize("argv", [
        ["calibrate", "--space", "pca"],
        ["calibrate", "--iters", "-1"],
        ["calibrate", "--batch", "0"],
        ["asdim", "--q", "9"],
        ["morris", "--config", "/nonexistent/run.ini"],
        ["frobnicate"],
        [],
    ])
    def test_configuration_errors_exit_one(self, argv, tmp_path, capsys):
        assert run(*argv, *([] if not argv or argv[0] == "frobnicate" else ["--out", tmp_path])) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        cfg = write_cfg(tmp_path, "[calibrate]\nspace = orig\nspeed = 11\n")
        assert run("calibrate", "--config", cfg) == EXIT_CONFIG

    def test_same_seed_same_trace(self, calib_out, tmp_path):
        assert run("calibrate", "--out", tmp_path, "--iters", 3, "--seed", 5, "--workers", 2) == EXIT_OK
        assert (tmp_path / "trace.csv").read_bytes() == (calib_out / "trace.csv").read_bytes()


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "abmcal.cli", "calibrate", "--space", "bogus"],
                              capture_output=True, text=True, cwd=tmp_path)
        assert proc.returncode == EXIT_CONFIG
        assert "bogus" in proc.stderr

    def test_help(self):
        proc = subprocess.run([sys.executable, "-m", "abmcal.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "calibrate" in proc.stdout


class TestRoundTrip:
    def test_every_table_parses(self, calib_out, morris_out):
        for d in (calib_out, morris_out):
            for p in Path(d).glob("*.csv"):
                header, rows = read_table(p)
                assert header and all(len(r) == len(header) for r in rows)

    def test_floats_are_exact(self, calib_out):
        h, rows = read_table(calib_out / "evaluations.csv")
        text = (calib_out / "evaluations.csv").read_text().splitlines()[1]
        loss_text = text.split(",")[h.index("loss")]
        assert repr(rows[0][h.index("loss")]) == loss_text
        assert np.isfinite(rows[0][h.index("loss")])
