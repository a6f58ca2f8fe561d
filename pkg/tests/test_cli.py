"""
Tests for the CLI module.
"""

import json

import pytest
from click.testing import CliRunner

from landmarkbias import __version__
from landmarkbias.cli import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, cli, run
from landmarkbias.formats import AnnotationRecord, write_predictions
from landmarkbias.gradcheck import GradcheckResult
from landmarkbias.scheme import dump_scheme


@pytest.mark.cli
class TestCLI:
    """Test the CLI commands."""

    def setup_method(self):
        """Set up test fixtures."""
        self.runner = CliRunner()

    def test_cli_help(self):
        result = self.runner.invoke(cli, ["--help"])
        assert result.exit_code == 0
        assert "Usage:" in result.output
        for command in ("scheme", "heatmap", "eval", "bias-report", "estimate-lambda", "fit", "gradcheck"):
            assert command in result.output

    def test_version(self):
        result = self.runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_scheme_show_json(self):
        result = self.runner.invoke(cli, ["scheme", "show", "--format", "json"])
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert doc["n_points"] == 68
        assert len(doc["edges"]) == 13

    def test_scheme_show_table_and_output(self, temp_dir):
        out = temp_dir / "scheme.json"
        result = self.runner.invoke(cli, ["scheme", "show", "--output", str(out)])
        assert result.exit_code == 0
        assert "Face Contour" in result.output
        assert "Scheme saved" in result.output
        assert json.loads(out.read_text(encoding="utf-8"))["name"] == "300w"

    def test_scheme_from_file(self, temp_dir, small_scheme):
        path = temp_dir / "toy.json"
        path.write_text(dump_scheme(small_scheme), encoding="utf-8")
        result = self.runner.invoke(cli, ["scheme", "show", "--scheme", str(path), "--format", "json"])
        assert result.exit_code == 0
        assert json.loads(result.output)["name"] == "toy"

    def test_unknown_scheme_is_usage_error(self):
        result = self.runner.invoke(cli, ["scheme", "show", "--scheme", "no-such-scheme"])
        assert result.exit_code == EXIT_USAGE

    def test_heatmap_gen(self, temp_dir, landmark_files):
        stem = temp_dir / "hm" / "face"
        result = self.runner.invoke(
            cli,
            [
                "heatmap", "gen",
                "--gt", str(landmark_files["pts_dir"]),
                "--id", "face_b",
                "--kind", "edge",
                "--output", str(stem),
                "--pgm-dir", str(temp_dir / "pgm"),
            ],
        )
        assert result.exit_code == 0, result.output
        meta = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        assert meta["channels"] == 13
        assert meta["kind"] == "edge"
        assert stem.with_suffix(".bin").stat().st_size == 13 * 64 * 64 * 4
        assert len(list((temp_dir / "pgm").glob("face_b_edge_*.pgm"))) == 13

    def test_heatmap_gen_unknown_id(self, temp_dir, landmark_files):
        result = self.runner.invoke(
            cli,
            [
                "heatmap", "gen",
                "--gt", str(landmark_files["gt"]),
                "--id", "nobody",
                "--output", str(temp_dir / "x"),
            ],
        )
        assert result.exit_code == EXIT_VALIDATION
        assert "nobody" in result.output

    def test_eval(self, temp_dir, landmark_files):
        report = temp_dir / "report.json"
        table = temp_dir / "edges.csv"
        result = self.runner.invoke(
            cli,
            [
                "eval",
                "--gt", str(landmark_files["gt"]),
                "--pred", str(landmark_files["pred"]),
                "--report", str(report),
                "--csv", str(table),
                "--threshold", "8",
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(report.read_text(encoding="utf-8"))
        assert doc["n_samples"] == 3
        assert list(doc["fr"]) == ["8"]
        assert table.read_text(encoding="utf-8").startswith("name,overall,normal,tangent,bias_rate")
        assert "Report saved" in result.output

    def test_eval_is_deterministic(self, temp_dir, landmark_files):
        outputs = []
        for name in ("a.json", "b.json"):
            args = ["eval", "--gt", str(landmark_files["gt"]), "--pred", str(landmark_files["pred"])]
            self.runner.invoke(cli, args + ["--report", str(temp_dir / name)])
            outputs.append((temp_dir / name).read_bytes())
        assert outputs[0] == outputs[1]

    def test_eval_mismatched_ids(self, temp_dir, landmark_files, face_pairs):
        _, predictions = face_pairs
        record = AnnotationRecord("face_a", predictions["face_a"])
        partial = write_predictions(temp_dir / "partial.jsonl", [record])
        result = self.runner.invoke(
            cli,
            [
                "eval",
                "--gt", str(landmark_files["gt"]),
                "--pred", str(partial),
                "--report", str(temp_dir / "r.json"),
            ],
        )
        assert result.exit_code == EXIT_VALIDATION
        assert "face_b" in result.output
        assert not (temp_dir / "r.json").exists()

    def test_eval_missing_required_option(self, landmark_files):
        result = self.runner.invoke(cli, ["eval", "--gt", str(landmark_files["gt"])])
        assert result.exit_code == EXIT_USAGE

    def test_config_defaults(self, temp_dir, landmark_files):
        config = temp_dir / "config.json"
        config.write_text(json.dumps({"eval": {"norm": "interpupil"}}), encoding="utf-8")
        report = temp_dir / "report.json"
        result = self.runner.invoke(
            cli,
            [
                "--config", str(config),
                "eval", "--gt", str(landmark_files["gt"]), "--pred", str(landmark_files["pred"]),
                "--report", str(report),
            ],
        )
        assert result.exit_code == 0, result.output
        assert json.loads(report.read_text(encoding="utf-8"))["norm"] == "interpupil"

    def test_bias_report(self, temp_dir, landmark_files):
        out = temp_dir / "scatter.csv"
        result = self.runner.invoke(
            cli,
            [
                "bias-report",
                "--gt", str(landmark_files["gt"]),
                "--pred", str(landmark_files["pred"]),
                "-o", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "landmark_index,sample_id,e_normal,e_tangent"
        assert len(lines) == 1 + 68 * 3

    def test_estimate_lambda(self, temp_dir, landmark_files):
        out = temp_dir / "lambda.json"
        result = self.runner.invoke(
            cli,
            [
                "estimate-lambda",
                "--gt", str(landmark_files["gt"]),
                "--pred", str(landmark_files["pred"]),
                "-o", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert len(doc["lambda"]) == 68
        assert all(1.0 <= v <= 16.0 for v in doc["lambda"])

    def test_fit_coordinate_experiment(self, temp_dir):
        out = temp_dir / "bias.json"
        traces = temp_dir / "traces.csv"
        result = self.runner.invoke(
            cli,
            [
                "fit", "--seeds", "2", "--faces", "1", "--k", "2", "--max-iters", "3",
                "--output", str(out), "--traces", str(traces),
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert set(doc["lambdas"]) == {"1", "2"}
        assert len(doc["lambdas"]["1"]["seeds"]) == 2
        assert len(traces.read_text(encoding="utf-8").splitlines()) == 1 + 2 * 2 * 3

    def test_fit_from_experiment_file(self, temp_dir):
        experiment = temp_dir / "exp.json"
        experiment.write_text(
            json.dumps(
                {
                    "synthetic": {"n_faces": 1, "k_annotations": 2},
                    "fit": {"max_iters": 2},
                    "lambdas": [3],
                    "seeds": [4],
                }
            ),
            encoding="utf-8",
        )
        out = temp_dir / "bias.json"
        result = self.runner.invoke(cli, ["fit", "--experiment", str(experiment), "--output", str(out)])
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert list(doc["lambdas"]) == ["3"]
        assert doc["lambdas"]["3"]["seeds"][0]["seed"] == 4

    def test_fit_bad_experiment_file(self, temp_dir):
        experiment = temp_dir / "exp.json"
        experiment.write_text(json.dumps({"learning": 1}), encoding="utf-8")
        result = self.runner.invoke(cli, ["fit", "--experiment", str(experiment)])
        assert result.exit_code == EXIT_VALIDATION
        assert "learning" in result.output

    def test_fit_heatmap_path(self, temp_dir):
        out = temp_dir / "heatmap_fit.json"
        result = self.runner.invoke(
            cli,
            ["fit", "--path", "heatmap", "--max-iters", "2", "--strategy", "contour", "--output", str(out)],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert doc["iterations"] == 2
        assert len(doc["decoded"]) == 68

    def test_fit_coordinate_strategy_is_routed(self, mocker):
        from landmarkbias.fitlab import run_bias_experiment

        spy = mocker.patch("landmarkbias.cli.run_bias_experiment", wraps=run_bias_experiment)
        result = self.runner.invoke(
            cli,
            ["fit", "--seeds", "1", "--faces", "1", "--k", "2", "--max-iters", "2", "--strategy", "contour"],
        )
        assert result.exit_code == 0, result.output
        lam = spy.call_args.kwargs["strategy"](2.0)
        assert (lam[:17] == 4.0).all() and (lam[17:] == 2.0).all()

    def test_fit_ellipse_on_coordinate_path_is_usage_error(self):
        result = self.runner.invoke(cli, ["fit", "--strategy", "ellipse"])
        assert result.exit_code == EXIT_USAGE
        assert "--path heatmap" in result.output

    def test_fit_heatmap_ellipse_needs_lambda_file(self):
        result = self.runner.invoke(cli, ["fit", "--path", "heatmap", "--strategy", "ellipse"])
        assert result.exit_code == EXIT_USAGE

    def test_lambda_file_needs_ellipse(self, temp_dir):
        path = temp_dir / "lambda.json"
        path.write_text(json.dumps({"lambda": [2.0] * 68}), encoding="utf-8")
        result = self.runner.invoke(cli, ["fit", "--path", "heatmap", "--lambda-file", str(path)])
        assert result.exit_code == EXIT_USAGE

    def test_fit_heatmap_ellipse_reads_lambda_file(self, temp_dir, mocker):
        from landmarkbias.fitlab import fit_heatmap_logits

        path = temp_dir / "lambda.json"
        path.write_text(json.dumps({"lambda": [3.0] * 68}), encoding="utf-8")
        spy = mocker.patch("landmarkbias.cli.fit_heatmap_logits", wraps=fit_heatmap_logits)
        result = self.runner.invoke(
            cli,
            [
                "fit", "--path", "heatmap", "--max-iters", "1",
                "--strategy", "ellipse", "--lambda-file", str(path),
            ],
        )
        assert result.exit_code == 0, result.output
        assert (spy.call_args.args[3].lam == 3.0).all()

    def test_gradcheck_failure_exit_code(self, mocker):
        mocker.patch(
            "landmarkbias.cli.run_gradcheck",
            return_value=[GradcheckResult("l_1", 1e-9, 1e-5, 10), GradcheckResult("awing", 0.3, 1e-5, 10)],
        )
        result = self.runner.invoke(cli, ["gradcheck"])
        assert result.exit_code == EXIT_VALIDATION
        assert "awing" in result.output

    def test_gradcheck_success(self, mocker):
        mocker.patch("landmarkbias.cli.run_gradcheck", return_value=[GradcheckResult("l_2", 1e-9, 1e-5, 10)])
        result = self.runner.invoke(cli, ["gradcheck", "--tolerance", "1e-5"])
        assert result.exit_code == EXIT_OK
        assert "All 1 gradient checks" in result.output


@pytest.mark.cli
class TestRunEntryPoint:
    def test_help_is_success(self, capsys):
        assert run(["--help"]) == EXIT_OK

    def test_usage_error(self, capsys):
        assert run(["eval"]) == EXIT_USAGE

    def test_unknown_command(self, capsys):
        assert run(["frobnicate"]) == EXIT_USAGE

    def test_validation_error(self, temp_dir, landmark_files, face_pairs, capsys):
        _, predictions = face_pairs
        partial = write_predictions(temp_dir / "p.jsonl", [AnnotationRecord("face_c", predictions["face_c"])])
        args = ["eval", "--gt", str(landmark_files["gt"]), "--pred", str(partial)]
        code = run(args + ["--report", str(temp_dir / "r.json")])
        assert code == EXIT_VALIDATION
