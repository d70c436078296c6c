import csv
import io
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aistosqp.errors import ConfigurationError
from aistosqp.harness import (
    PRESETS,
    TRACE_COLUMNS,
    ExperimentConfig,
    cmd_complexity,
    cmd_coverage,
    cmd_list_problems,
    cmd_normality,
    cmd_run,
    cmd_sketch_audit,
    main,
    parse_config,
)

SMALL = ExperimentConfig(iters=300, stride=50, runs=100, sketch="exact", c2=0.7, mc_samples=200)


class TestConfig:
    @settings(max_examples=50, deadline=None)
    @given(
        sigma2=st.floats(0, 10, allow_nan=False),
        c1=st.floats(0.01, 10),
        c2=st.floats(0.01, 1.0),
        tau=st.integers(1, 500),
        seed=st.integers(0, 2**31),
        problem=st.sampled_from(["hs7", "eq_logistic"]),
        w=st.sampled_from(["", "1:1.0", "2:0.5,3:-1"]),
    )
    def test_round_trip(self, sigma2, c1, c2, tau, seed, problem, w):
        cfg = ExperimentConfig(sigma2=sigma2, c1=c1, c2=c2, tau=tau, seed=seed, problem=problem, w=w)
        back = parse_config(cfg.serialize())
        assert back == cfg
        assert back.digest() == cfg.digest()

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# header\n\niters = 1e3  # short\nproblem = hs7\n")
        assert cfg.iters == 1000 and cfg.problem == "hs7"

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="colour"):
            parse_config("colour = red\n")

    def test_malformed_line(self):
        with pytest.raises(ConfigurationError):
            parse_config("iters 100\n")

    @pytest.mark.parametrize("kw", [dict(sigma2=-1.0), dict(iters=0), dict(policy="armijo"), dict(mode="x"),
                                    dict(burnin=1.0), dict(c2=2.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**kw)

    def test_direction(self):
        cfg = ExperimentConfig()
        assert cfg.direction(2, 1).tolist() == [1.0, 0.0, 1.0]
        assert cfg.replace(w="3:2.5").direction(2, 1).tolist() == [0.0, 0.0, 2.5]
        with pytest.raises(ConfigurationError):
            cfg.replace(w="4:1").direction(2, 1)

    def test_digest_changes(self):
        assert ExperimentConfig().digest() != ExperimentConfig(seed=1).digest()


class TestRun:
    def test_trace_shape(self):
        rep = cmd_run(ExperimentConfig(problem="hs48", iters=1000, stride=100))
        rows = list(csv.reader(io.StringIO(rep.csv_text())))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == 11
        assert rep.ok and rep.summary["status"] == "ok"

    def test_theory_rate(self):
        rep = cmd_run(ExperimentConfig(problem="hs48", c2=0.5, iters=100, stride=100))
        # sqrt(0.2 * log 100)
        assert rep.rows[0][-1] == pytest.approx(math.sqrt(0.2 * math.log(100)), rel=1e-14)
        assert rep.rows[0][-1] == pytest.approx(0.9597, abs=1e-4)

    def test_error_keeps_partial_trace(self):
        rep = cmd_run(ExperimentConfig(problem="hs7", sketch="exact", c2=0.7, iters=100, stride=2))
        assert not rep.ok
        assert rep.summary["status"].startswith("error")
        assert rep.rows


class TestCommands:
    def test_degenerate_noise(self):
        nor = cmd_normality(SMALL.replace(sigma2=0.0))
        assert nor.summary["degenerate"] and nor.summary["ks_stat"] == 1.0

    def test_degenerate_direction(self):
        # noiseless exact runs end with K = K*; w = K* e_3 gives K^-1 w = e_3,
        # which the gradient block of the sandwich never sees
        cov = cmd_coverage(SMALL.replace(sigma2=0.0, w="1:1,2:1"))
        assert cov.summary["evaluated"] == 0 and len(cov.summary["degenerate"]) == 100
        assert cov.summary["coverage"] is None

    def test_run_count_floors(self):
        with pytest.raises(ConfigurationError):
            cmd_coverage(SMALL.replace(runs=99))
        with pytest.raises(ConfigurationError):
            cmd_normality(SMALL.replace(runs=49))

    def test_coverage_fields(self):
        rep = cmd_coverage(SMALL)
        s = rep.summary
        assert 0 <= s["coverage"] <= 1 and s["mean_width"] > 0
        assert s["evaluated"] + len(s["failures"]) + len(s["degenerate"]) == 100

    def test_within_run_normality(self):
        rep = cmd_normality(ExperimentConfig(mode="within", iters=400, burnin=0.5))
        assert rep.summary["samples"] == 200
        assert set(rep.summary["x1"]) >= {"ks_stat", "mean", "variance"}

    def test_sketch_audit(self):
        rep = cmd_sketch_audit(ExperimentConfig(matrix="random:4", taus="1,5", mc_samples=300))
        assert [r[0] for r in rep.rows] == [1, 5]
        assert 0 < rep.summary["gamma_S"] <= 1
        assert rep.rows[1][1] == pytest.approx(rep.summary["rho"] ** 5)

    def test_complexity(self):
        rep = cmd_complexity(ExperimentConfig(sketch="exact", c1=1.0, c2=0.5, iters=2000, runs=3, slope_from=100))
        assert len(rep.summary["T_eps"]) == 3
        assert rep.summary["mean_slope"] < 0

    def test_list_problems(self):
        rep = cmd_list_problems()
        assert set(rep.summary["problems"]) == {"byrdsphr", "eq_logistic", "eq_quadratic", "hs48", "hs7"}

    def test_needs_known_solution(self, monkeypatch):
        import aistosqp.harness as h

        real = h.builtin_problem

        def no_solution(name):
            p = real(name)
            return type(p)(**{**p.__dict__, "known_solution": None})

        monkeypatch.setattr(h, "builtin_problem", no_solution)
        with pytest.raises(ConfigurationError):
            cmd_coverage(SMALL)


class TestCli:
    def test_flags_override(self, capsys):
        assert main(["run", "--problem", "hs48", "--iters", "200", "--stride", "100"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == ",".join(TRACE_COLUMNS) and len(out) == 3

    def test_config_then_flags(self, tmp_path, capsys):
        conf = tmp_path / "exp.conf"
        conf.write_text("problem = hs48\niters = 300\nstride = 300\n")
        assert main(["run", "--config", str(conf), "--stride", "100"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 4

    def test_preset(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        assert main(["run", "--preset", "paper", "--problem", "hs48", "--iters", "200", "--out", str(out)]) == 0
        doc = json.loads(out.with_suffix(".json").read_text())
        assert doc["config"]["tau"] == PRESETS["paper"]["tau"] and doc["config"]["mode"] == "within"
        assert doc["config"]["iters"] == 200

    def test_out_writes_both(self, tmp_path, capsys):
        out = tmp_path / "sub" / "audit.csv"
        assert main(["sketch-audit", "--matrix", "random:3", "--mc-samples", "100", "--out", str(out)]) == 0
        assert out.read_text().startswith("tau,rho_tau,mc_error_ratio\n")
        doc = json.loads(out.with_suffix(".json").read_text())
        assert doc["command"] == "sketch-audit"
        assert doc["provenance"]["config_hash"] == ExperimentConfig(
            matrix="random:3", mc_samples=100).digest()
        assert json.loads(capsys.readouterr().out)["n"] == 3

    def test_list_problems(self, capsys):
        assert main(["list-problems"]) == 0
        assert "hs7" in capsys.readouterr().out

    def test_bad_value_exit_code(self, capsys):
        assert main(["run", "--iters", "abc"]) == 2
        assert "iters" in capsys.readouterr().err

    def test_unknown_problem(self, capsys):
        assert main(["run", "--problem", "hs999"]) == 2
        assert "hs48" in capsys.readouterr().err

    def test_unwritable_output_names_path(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        target = blocker / "x.csv"
        assert main(["list-problems", "--out", str(target)]) == 2
        assert str(target) in capsys.readouterr().err

    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.conf"
        assert main(["run", "--config", str(missing)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_solver_error_exit_code(self, capsys):
        assert main(["run", "--problem", "hs7", "--sketch", "exact", "--c2", "0.7", "--iters", "100"]) == 1
