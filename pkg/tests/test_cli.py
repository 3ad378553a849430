import numpy as np

from corfd.bench import ExperimentConfig, run_replications
from corfd.cli import main
from corfd.estimators import EstimatorConfig
from corfd.regression import projection_diagnostics


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


class TestEstimateCommand:
    def test_rows_and_summary(self, tmp_path):
        out = tmp_path / "rows.csv"
        summary = tmp_path / "summary.csv"
        code = main([
            "estimate", "--problem", "poly@3", "--method", "cor", "--pairs", "100",
            "--reps", "5", "--seed", "3", "--K", "5", "--I", "100",
            "--out", str(out), "--summary-out", str(summary),
        ])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["rep", "estimate", "pairs_used", "perturbation"]
        assert len(rows) == 5 and [r[0] for r in rows] == ["0", "1", "2", "3", "4"]
        sheader, srows = read_csv(summary)
        assert sheader == ["problem", "method", "pairs", "reps", "bias", "variance", "mse"]
        assert len(srows) == 1 and srows[0][3] == "5"

    def test_matches_library_path(self, tmp_path):
        out = tmp_path / "rows.csv"
        main([
            "estimate", "--problem", "sin1", "--method", "opt", "--pairs", "50",
            "--reps", "3", "--seed", "9", "--out", str(out),
            "--summary-out", str(tmp_path / "s.csv"),
        ])
        _, rows = read_csv(out)
        cfg = ExperimentConfig(
            problem="sin1", methods=("opt",), budgets=(50,), reps=3, seed=9,
            estimator=EstimatorConfig(),
        )
        detail, _, _ = run_replications(cfg)
        for row, expected in zip(rows, detail):
            assert float(row[1]) == expected[4]

    def test_rerun_byte_identical(self, tmp_path):
        args = [
            "estimate", "--problem", "sin1", "--method", "cor", "--pairs", "100",
            "--reps", "4", "--seed", "1", "--K", "5", "--I", "100",
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(args + ["--out", str(a), "--summary-out", str(tmp_path / "sa.csv")])
        main(args + ["--out", str(b), "--summary-out", str(tmp_path / "sb.csv")])
        assert a.read_bytes() == b.read_bytes()

    def test_infeasible_is_an_error(self, tmp_path):
        code = main([
            "estimate", "--problem", "sin1", "--method", "boot", "--pairs", "100",
            "--reps", "2", "--r", "1.0",
            "--out", str(tmp_path / "x.csv"), "--summary-out", str(tmp_path / "y.csv"),
        ])
        assert code == 1


class TestDfoCommand:
    def test_trace_and_summary_line(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        code = main([
            "dfo", "--problem", "zakharov@1", "--budget", "500", "--seed", "2",
            "--out", str(out),
        ])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["k", "t", "a_k", "T_k", "f_noisy", "f_true"]
        assert len(rows) >= 2
        line = capsys.readouterr().out.strip()
        assert line.startswith("SG=") and ",OG=" in line

    def test_tra_variant_runs(self, tmp_path, capsys):
        code = main([
            "dfo", "--problem", "rosenbrock", "--budget", "200", "--seed", "4",
            "--gradient-method", "tra", "--out", str(tmp_path / "t.csv"),
        ])
        assert code == 0
        assert "OG=" in capsys.readouterr().out


class TestBenchCommand:
    def test_config_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "bench.cfg"
        cfg.write_text(
            "# comment line\n"
            "problem = poly@0\n"
            "methods = cor,opt\n"
            "budgets = 100\n"
            "reps = 4\n"
            "K = 5\n"
            "I = 100\n"
        )
        out = tmp_path / "summary.csv"
        code = main([
            "bench", "--config", str(cfg),
            "--set", f"out={out}", "--set", "seed=5",
        ])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["problem", "method", "pairs", "reps", "bias", "variance", "mse"]
        assert {r[1] for r in rows} == {"cor", "opt"}

    def test_partial_failure_exit_code(self, tmp_path):
        out = tmp_path / "summary.csv"
        code = main([
            "bench", "--set", "problem=sin1", "--set", "methods=cor,boot",
            "--set", "budgets=100", "--set", "reps=3", "--set", "K=5",
            "--set", "I=100", "--set", "r=1.0", "--set", f"out={out}",
        ])
        assert code == 2  # boot infeasible at r=1, cor ran

    def test_bad_key_is_config_error(self, tmp_path):
        code = main(["bench", "--set", "bogus_key=1"])
        assert code == 1

    def test_bad_problem_is_config_error(self):
        assert main(["bench", "--set", "problem=sphere@3"]) == 1


class TestDiagCommand:
    def test_values_match_library(self, tmp_path):
        out = tmp_path / "diag.csv"
        code = main([
            "diag", "--c", "1,1.5,2,2.5,3,3.5,4,4.5,5,5.5",
            "--fifth-const", "0.1", "--out", str(out),
        ])
        assert code == 0
        _, rows = read_csv(out)
        values = {r[0]: float(r[1]) for r in rows}
        d = projection_diagnostics(np.arange(1.0, 5.6, 0.5))
        assert values["bias_shift"] == d.bias_shift
        assert values["variance_factor"] == d.variance_factor
        assert values["projector_idempotency_gap"] <= 1e-10

    def test_bad_vector_is_error(self):
        assert main(["diag", "--c", "1.0"]) == 1
