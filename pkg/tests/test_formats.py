"""
Tests for landmark files, report exports, heatmap dumps and experiment configs.
"""

import csv
import json

import numpy as np
import pytest
from PIL import Image

from landmarkbias.exceptions import ConfigError, DimensionError, DuplicateIdError, InputError
from landmarkbias.fitlab import FitConfig, estimate_lambda, run_bias_experiment, standard_synth_config
from landmarkbias.formats import (
    AnnotationRecord,
    dumps_json,
    experiment_document,
    fmt_float,
    lambda_document,
    load_experiment_config,
    read_heatmap,
    read_lambda_file,
    read_predictions,
    read_pts,
    read_records,
    report_document,
    write_heatmap,
    write_pgm,
    write_pgm_channels,
    write_report_csv,
    write_report_json,
    write_scatter_csv,
    write_traces_csv,
)
from landmarkbias.heatmap import Heatmap, HeatmapGeometry
from landmarkbias.metrics import error_scatter, evaluate, join_samples

PTS = "version: 1\nn_points: 3\n{\n1.5 2\n3 4.25\n5 6\n}\n"


class TestPts:
    def test_read(self):
        points = read_pts(PTS)
        assert np.allclose(points, [[1.5, 2.0], [3.0, 4.25], [5.0, 6.0]])

    def test_crlf_and_blank_lines(self):
        assert read_pts(PTS.replace("\n", "\r\n") + "\r\n").shape == (3, 2)

    def test_count_mismatch(self):
        with pytest.raises(InputError) as exc:
            read_pts(PTS.replace("n_points: 3", "n_points: 4"))
        assert exc.value.line == 7

    def test_bad_coordinate_line(self):
        with pytest.raises(InputError) as exc:
            read_pts(PTS.replace("3 4.25", "3 four"))
        assert exc.value.line == 5

    def test_bad_header(self):
        with pytest.raises(InputError) as exc:
            read_pts(PTS.replace("version: 1", "version: 2"))
        assert exc.value.line == 1

    def test_missing_brace(self):
        with pytest.raises(InputError):
            read_pts(PTS.rstrip("}\n"))


class TestPredictions:
    def test_read_in_order_skipping_blank_lines(self):
        lines = ['{"id": "b", "points": [[1, 2]]}', "", '{"id": "a", "points": [[3, 4]]}']
        records = read_predictions(lines)
        assert [r.id for r in records] == ["b", "a"]
        assert np.allclose(records[1].points, [[3.0, 4.0]])

    def test_duplicate_id(self):
        lines = ['{"id": "a", "points": [[1, 2]]}', '{"id": "a", "points": [[1, 2]]}']
        with pytest.raises(DuplicateIdError) as exc:
            read_predictions(lines)
        assert exc.value.line == 2

    @pytest.mark.parametrize(
        "line",
        [
            '{"id": "a"',
            '{"points": [[1, 2]]}',
            '{"id": "a", "points": [1, 2]}',
            '{"id": "a", "points": [[1, NaN]]}',
        ],
    )
    def test_malformed(self, line):
        with pytest.raises(InputError):
            read_predictions([line])

    def test_read_records_from_file_and_directory(self, landmark_files, face_pairs):
        annotations, _ = face_pairs
        from_jsonl = read_records(landmark_files["gt"], 68)
        from_pts = read_records(landmark_files["pts_dir"], 68)
        assert sorted(from_jsonl) == sorted(from_pts) == sorted(annotations)
        for key in annotations:
            assert np.allclose(from_jsonl[key], from_pts[key])
            assert np.allclose(from_jsonl[key], annotations[key], atol=1e-3)

    def test_read_records_point_count(self, landmark_files):
        with pytest.raises(DimensionError):
            read_records(landmark_files["gt"], 5)

    def test_read_records_missing(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            read_records(temp_dir / "nope.jsonl")


class TestReports:
    @pytest.fixture
    def report(self, scheme_300w, face_pairs):
        annotations, predictions = face_pairs
        return evaluate(join_samples(predictions, annotations, scheme_300w), scheme_300w)

    def test_json_is_canonical(self, temp_dir, report):
        path = write_report_json(temp_dir / "r.json", report)
        text = path.read_text(encoding="utf-8")
        assert text.endswith("\n")
        doc = json.loads(text)
        assert list(doc) == sorted(doc)
        assert set(doc["fr"]) == {"5", "10"}
        assert doc["whole_face"]["name"] == "Whole Face"
        assert len(doc["per_edge"]) == 13
        assert doc["nme"] == fmt_float(report.nme)
        assert text == dumps_json(report_document(report))

    def test_csv_rows(self, temp_dir, report):
        path = write_report_csv(temp_dir / "r.csv", report)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["name", "overall", "normal", "tangent", "bias_rate"]
        assert len(rows) == 15
        assert rows[-1][0] == "Whole Face"
        assert rows[1][0] == "Face Contour"

    def test_scatter_csv(self, temp_dir, scheme_300w, face_pairs):
        annotations, predictions = face_pairs
        scatter = error_scatter(join_samples(predictions, annotations, scheme_300w), scheme_300w)
        path = write_scatter_csv(temp_dir / "s.csv", scatter)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["landmark_index", "sample_id", "e_normal", "e_tangent"]
        assert len(rows) == 1 + 68 * 3
        assert rows[1][:2] == ["0", "face_a"]

    def test_lambda_document(self, rng):
        doc = lambda_document(estimate_lambda(rng.normal(0, 1.0, (30, 4, 2))))
        assert set(doc) == {"lambda", "a", "b", "angle", "degenerate"}
        assert len(doc["lambda"]) == 4
        assert doc["degenerate"] == []

    def test_lambda_file_is_read_back(self, temp_dir, rng):
        doc = lambda_document(estimate_lambda(rng.normal(0, 1.0, (30, 4, 2))))
        path = temp_dir / "lambda.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        assert np.allclose(read_lambda_file(path, n_points=4), doc["lambda"])
        with pytest.raises(DimensionError):
            read_lambda_file(path, n_points=68)

    @pytest.mark.parametrize(
        "doc", [{"a": [1.0]}, {"lambda": []}, {"lambda": [0.5, 2.0]}, {"lambda": ["x"]}, [2.0]]
    )
    def test_bad_lambda_file(self, temp_dir, doc):
        path = temp_dir / "lambda.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ConfigError):
            read_lambda_file(path)

    def test_fmt_float(self):
        assert fmt_float(1.23456789) == 1.23457
        assert fmt_float(None) is None


class TestHeatmapFiles:
    def test_dump_and_load(self, temp_dir, rng):
        geom = HeatmapGeometry(width=5, height=3, stride=2)
        hm = Heatmap(rng.uniform(0, 1, (2, 3, 5)), geom, "edge")
        binary, sidecar = write_heatmap(temp_dir / "hm", hm)
        assert binary.suffix == ".bin" and sidecar.suffix == ".json"
        assert binary.stat().st_size == 2 * 3 * 5 * 4
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        assert meta == {"width": 5, "height": 3, "channels": 2, "stride": 2, "kind": "edge"}
        loaded = read_heatmap(binary)
        assert loaded.kind == "edge"
        assert np.allclose(loaded.data, hm.data, atol=1e-7)

    def test_size_mismatch(self, temp_dir):
        geom = HeatmapGeometry(width=2, height=2)
        binary, _ = write_heatmap(temp_dir / "hm.bin", Heatmap(np.ones((1, 2, 2)), geom, "point"))
        binary.write_bytes(binary.read_bytes()[:-4])
        with pytest.raises(InputError):
            read_heatmap(binary)

    def test_pgm_export(self, temp_dir):
        geom = HeatmapGeometry(width=3, height=2)
        data = np.zeros((2, 2, 3))
        data[0, 1, 2] = 0.5
        data[0, 0, 0] = 0.25
        hm = Heatmap(data, geom, "point")
        path = write_pgm(temp_dir / "c0.pgm", hm, 0)
        assert path.read_bytes().startswith(b"P5")
        with Image.open(path) as img:
            pixels = np.asarray(img)
        assert pixels.shape == (2, 3)
        assert pixels[1, 2] == 255 and pixels[0, 0] == 128
        paths = write_pgm_channels(temp_dir / "pgm", hm, prefix="f")
        assert [p.name for p in paths] == ["f_000.pgm", "f_001.pgm"]
        with pytest.raises(DimensionError):
            write_pgm(temp_dir / "bad.pgm", hm, 2)


class TestExperimentConfig:
    def test_load(self, temp_dir):
        path = temp_dir / "exp.json"
        path.write_text(
            json.dumps(
                {
                    "synthetic": {"sigma_normal": 0.1, "shape_spread": 0.2},
                    "fit": {"max_iters": 7},
                    "lambdas": [1, 3],
                    "seeds": 4,
                }
            ),
            encoding="utf-8",
        )
        cfg = load_experiment_config(path)
        assert cfg.synthetic == {"sigma_normal": 0.1, "shape_spread": 0.2}
        assert cfg.fit == {"max_iters": 7}
        assert cfg.lambdas == (1.0, 3.0)
        assert cfg.seeds == (0, 1, 2, 3)
        assert cfg.workers == 1

    def test_seed_list(self, temp_dir):
        path = temp_dir / "exp.json"
        path.write_text(json.dumps({"seeds": [5, 9]}), encoding="utf-8")
        assert load_experiment_config(path).seeds == (5, 9)

    @pytest.mark.parametrize(
        "doc", [{"colour": 1}, {"synthetic": {"sigma": 1}}, {"fit": {"lam": 2}}, {"fit": []}]
    )
    def test_unknown_keys(self, temp_dir, doc):
        path = temp_dir / "exp.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_invalid_json(self, temp_dir):
        path = temp_dir / "exp.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_experiment_exports(self, temp_dir):
        result = run_bias_experiment(
            standard_synth_config(n_faces=1, k_annotations=2),
            FitConfig(max_iters=3),
            lambdas=(1.0, 2.0),
            seeds=(0,),
        )
        doc = experiment_document(result)
        assert set(doc["lambdas"]) == {"1", "2"}
        assert doc["lambdas"]["2"]["seeds"][0]["seed"] == 0
        path = write_traces_csv(temp_dir / "t.csv", result)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "lambda,seed,step,loss"
        assert len(lines) == 1 + 2 * 3
