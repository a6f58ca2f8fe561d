"""
File formats: landmark annotations and predictions, reports, scatter exports,
heatmap dumps and experiment configs.

Report floats are written with 6 significant digits and JSON keys are sorted, so
identical inputs give byte-identical files.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .exceptions import ConfigError, DimensionError, DuplicateIdError, InputError
from .fitlab import BiasExperimentResult, LambdaEstimate, trace_rows
from .heatmap import Heatmap, HeatmapGeometry
from .metrics import EdgeRow, ErrorScatter, EvalReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

HEATMAP_DTYPE = np.dtype("<f4")
FLOAT_DIGITS = 6


@dataclass(frozen=True, eq=False)
class AnnotationRecord:
    """One face's landmark coordinates in image pixels."""

    id: str
    points: np.ndarray


class PredictionRecord(AnnotationRecord):
    """A predicted face; ids join 1:1 with annotations."""


def fmt_float(value: Optional[float]) -> Optional[float]:
    """Round to 6 significant digits (None passes through)."""
    if value is None:
        return None
    return float(f"{value:.{FLOAT_DIGITS}g}")


def _rounded(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(document: Any) -> str:
    """Canonical JSON text: rounded floats, sorted keys, trailing newline."""
    return json.dumps(_rounded(document), sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(document), encoding="utf-8")
    return path


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{value:.{FLOAT_DIGITS}g}"
    return value


def _write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_cell(v) for v in row] for row in rows)
    return path


# --- annotations and predictions -------------------------------------------


def read_pts(text: str) -> np.ndarray:
    """
    Parse a .pts annotation.

    Format:
        version: 1
        n_points: N
        {
        x y
        ...
        }

    Returns:
        (N, 2) float64 coordinates

    Raises:
        InputError: On a header mismatch, a wrong point count or a bad line,
            with the 1-based line number
    """
    lines = [(n + 1, line.strip()) for n, line in enumerate(text.splitlines())]
    lines = [(n, line) for n, line in lines if line]
    if len(lines) < 3:
        raise InputError("truncated pts file", line=len(lines) or None)

    (n_version, version), (n_count, count) = lines[0], lines[1]
    if version.replace(" ", "") != "version:1":
        raise InputError(f"expected 'version: 1', got {version!r}", line=n_version)
    key, _, value = count.partition(":")
    if key.strip() != "n_points":
        raise InputError(f"expected 'n_points: N', got {count!r}", line=n_count)
    try:
        expected = int(value)
    except ValueError:
        raise InputError(f"n_points is not an integer: {value.strip()!r}", line=n_count)

    if lines[2][1] != "{":
        raise InputError("expected '{'", line=lines[2][0])
    body = lines[3:]
    if not body or body[-1][1] != "}":
        raise InputError("missing closing '}'", line=body[-1][0] if body else lines[2][0])

    points = []
    for n, line in body[:-1]:
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            points.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise InputError(f"expected two numbers, got {line!r}", line=n)
        if not np.all(np.isfinite(points[-1])):
            raise InputError("non-finite coordinate", line=n)
    if len(points) != expected:
        raise InputError(f"header declares {expected} points, found {len(points)}", line=body[-1][0])
    return np.array(points, dtype=np.float64).reshape(-1, 2)


def write_pts(path: PathLike, points: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = "".join(f"{x:.{FLOAT_DIGITS}g} {y:.{FLOAT_DIGITS}g}\n" for x, y in np.asarray(points))
    path.write_text(f"version: 1\nn_points: {len(points)}\n{{\n{rows}}}\n", encoding="utf-8")
    return path


def read_predictions(lines: Iterable[str]) -> List[PredictionRecord]:
    """
    Parse JSON-lines records {"id": ..., "points": [[x, y], ...]} in input order.

    Blank lines are skipped.

    Raises:
        InputError: On malformed JSON or a malformed record, with the line number
        DuplicateIdError: If an id repeats
    """
    records: List[PredictionRecord] = []
    seen = set()
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputError(f"malformed JSON: {e.msg}", line=n)
        if not isinstance(obj, dict) or "id" not in obj or "points" not in obj:
            raise InputError("record needs 'id' and 'points'", line=n)
        record_id = str(obj["id"])
        try:
            points = np.asarray(obj["points"], dtype=np.float64)
        except (TypeError, ValueError):
            raise InputError("points must be a list of [x, y] pairs", line=n)
        if points.ndim != 2 or points.shape[1] != 2:
            raise InputError("points must be a list of [x, y] pairs", line=n)
        if not np.all(np.isfinite(points)):
            raise InputError("non-finite coordinate", line=n)
        if record_id in seen:
            raise DuplicateIdError(f"duplicate id {record_id!r}", line=n)
        seen.add(record_id)
        records.append(PredictionRecord(record_id, points))
    return records


def write_predictions(path: PathLike, records: Iterable[AnnotationRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            points = [[fmt_float(x), fmt_float(y)] for x, y in np.asarray(record.points)]
            f.write(json.dumps({"id": record.id, "points": points}, sort_keys=True) + "\n")
    return path


def _checked(
    records: Iterable[AnnotationRecord], n_points: Optional[int], source: Path
) -> Dict[str, np.ndarray]:
    out = {}
    for record in records:
        if n_points is not None and record.points.shape[0] != n_points:
            raise DimensionError(
                f"{source}: record {record.id!r} has {record.points.shape[0]} points, expected {n_points}"
            )
        out[record.id] = record.points
    return out


def read_records(path: PathLike, n_points: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Read landmark records from a JSON-lines file or a directory of .pts files.

    Directory records take their id from the file stem.

    Raises:
        FileNotFoundError: If the path does not exist
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Landmark file not found: {path}")
    if path.is_dir():
        records = []
        for pts in sorted(path.glob("*.pts")):
            try:
                records.append(AnnotationRecord(pts.stem, read_pts(pts.read_text(encoding="utf-8"))))
            except InputError as e:
                raise InputError(f"{pts.name}: {e}")
        logger.debug("read %d pts files from %s", len(records), path)
        return _checked(records, n_points, path)
    with open(path, encoding="utf-8") as f:
        records = read_predictions(f)
    logger.debug("read %d records from %s", len(records), path)
    return _checked(records, n_points, path)


# --- reports -----------------------------------------------------------------


def _edge_document(row: EdgeRow) -> Dict[str, Any]:
    return {
        "name": row.name,
        "nme": row.nme,
        "nme_normal": row.nme_normal,
        "nme_tangent": row.nme_tangent,
        "bias_rate": row.bias_rate,
    }


def report_document(report: EvalReport) -> Dict[str, Any]:
    """The full EvalReport as a JSON-ready dict (threshold keys like "5", "10")."""
    return {
        "n_samples": report.n_samples,
        "norm": report.norm,
        "nme": report.nme,
        "nme_normal": report.nme_normal,
        "nme_tangent": report.nme_tangent,
        "bias_rate": report.bias_rate,
        "fr": {f"{t:g}": v for t, v in report.fr.items()},
        "auc": {f"{t:g}": v for t, v in report.auc.items()},
        "per_edge": [_edge_document(r) for r in report.per_edge.edges],
        "whole_face": _edge_document(report.per_edge.face),
        "samples": dict(report.sample_nme),
    }


def write_report_json(path: PathLike, report: EvalReport) -> Path:
    return write_json(path, report_document(report))


def write_report_csv(path: PathLike, report: EvalReport) -> Path:
    """Per-edge table, one row per edge and a final whole-face row."""
    rows = [
        (r.name, r.nme, r.nme_normal, r.nme_tangent, r.bias_rate)
        for r in report.per_edge.edges + (report.per_edge.face,)
    ]
    return _write_csv(path, ("name", "overall", "normal", "tangent", "bias_rate"), rows)


def write_scatter_csv(path: PathLike, scatter: ErrorScatter) -> Path:
    return _write_csv(path, ("landmark_index", "sample_id", "e_normal", "e_tangent"), scatter.rows())


def lambda_document(estimate: LambdaEstimate) -> Dict[str, Any]:
    fit = estimate.ellipses
    return {
        "lambda": estimate.lam.tolist(),
        "a": fit.a.tolist(),
        "b": fit.b.tolist(),
        "angle": fit.angle.tolist(),
        "degenerate": [int(i) for i in np.flatnonzero(estimate.degenerate)],
    }


def read_lambda_file(path: PathLike, n_points: Optional[int] = None) -> np.ndarray:
    """
    Read the per-landmark "lambda" list written by `estimate-lambda`.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On invalid JSON, a missing list or values below 1
        DimensionError: If the list length differs from n_points
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Lambda file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e.msg} (line {e.lineno})")
    values = doc.get("lambda") if isinstance(doc, dict) else None
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{path} has no \"lambda\" list")
    try:
        lam = np.array([float(v) for v in values])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: lambda values must be numbers")
    if not np.all(np.isfinite(lam)) or np.any(lam < 1.0):
        raise ConfigError(f"{path}: lambda values must be finite and at least 1")
    if n_points is not None and lam.shape[0] != n_points:
        raise DimensionError(f"{path} has {lam.shape[0]} lambda values, expected {n_points}")
    return lam


# --- heatmaps ----------------------------------------------------------------


def _dump_paths(path: PathLike) -> Tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".bin", ".json"):
        base = base.with_suffix("")
    return base.with_suffix(".bin"), base.with_suffix(".json")


def write_heatmap(path: PathLike, heatmap: Heatmap) -> Tuple[Path, Path]:
    """
    Dump a heatmap as little-endian float32 (channel-major, row-major) plus a
    JSON sidecar {"width", "height", "channels", "stride", "kind"}.

    Returns:
        The binary and sidecar paths
    """
    binary, sidecar = _dump_paths(path)
    binary.parent.mkdir(parents=True, exist_ok=True)
    binary.write_bytes(np.ascontiguousarray(heatmap.data, dtype=HEATMAP_DTYPE).tobytes())
    geom = heatmap.geometry
    sidecar.write_text(
        json.dumps(
            {
                "width": geom.width,
                "height": geom.height,
                "channels": heatmap.n_channels,
                "stride": geom.stride,
                "kind": heatmap.kind,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return binary, sidecar


def read_heatmap(path: PathLike) -> Heatmap:
    """
    Load a heatmap dump written by write_heatmap.

    Raises:
        FileNotFoundError: If the binary or the sidecar is missing
        InputError: If the binary size disagrees with the sidecar
    """
    binary, sidecar = _dump_paths(path)
    for p in (binary, sidecar):
        if not p.exists():
            raise FileNotFoundError(f"Heatmap file not found: {p}")
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        geom = HeatmapGeometry(width=int(meta["width"]), height=int(meta["height"]), stride=meta["stride"])
        channels, kind = int(meta["channels"]), meta["kind"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InputError(f"invalid heatmap sidecar {sidecar}: {e}")
    data = np.frombuffer(binary.read_bytes(), dtype=HEATMAP_DTYPE)
    if data.size != channels * geom.height * geom.width:
        raise InputError(
            f"{binary} holds {data.size} values, sidecar declares {channels}x{geom.height}x{geom.width}"
        )
    return Heatmap(data.reshape(channels, geom.height, geom.width).astype(np.float64), geom, kind)


def write_pgm(path: PathLike, heatmap: Heatmap, channel: int) -> Path:
    """Save one channel as an 8-bit PGM, scaled so the channel maximum maps to 255."""
    if not 0 <= channel < heatmap.n_channels:
        raise DimensionError(f"channel {channel} outside [0, {heatmap.n_channels})")
    values = heatmap.data[channel]
    peak = values.max()
    scaled = values / peak if peak > 0 else values
    pixels = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PPM")
    return path


def write_pgm_channels(directory: PathLike, heatmap: Heatmap, prefix: str) -> List[Path]:
    directory = Path(directory)
    return [
        write_pgm(directory / f"{prefix}_{c:03d}.pgm", heatmap, c) for c in range(heatmap.n_channels)
    ]


# --- fit-lab experiments -------------------------------------------------------

_EXPERIMENT_KEYS = {"synthetic", "fit", "lambdas", "seeds", "workers"}
_SYNTH_KEYS = {"sigma_normal", "sigma_tangent", "k_annotations", "n_faces", "shape_spread"}
_FIT_KEYS = {"learning_rate", "max_iters", "tolerance"}


@dataclass(frozen=True)
class ExperimentConfig:
    """A bias experiment: generator overrides, fit overrides, lambdas and seeds."""

    synthetic: Dict[str, Any] = field(default_factory=dict)
    fit: Dict[str, Any] = field(default_factory=dict)
    lambdas: Tuple[float, ...] = (1.0, 2.0)
    seeds: Tuple[int, ...] = tuple(range(20))
    workers: int = 1


def _reject_unknown(obj: Any, allowed: set, where: str) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return obj


def load_experiment_config(path: PathLike) -> ExperimentConfig:
    """
    Read an experiment config.

    "seeds" may be a list of seeds or a count n meaning seeds 0..n-1.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On invalid JSON or unknown keys
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Experiment config not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e.msg} (line {e.lineno})")
    _reject_unknown(doc, _EXPERIMENT_KEYS, "experiment config")

    seeds = doc.get("seeds", 20)
    seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
    return ExperimentConfig(
        synthetic=dict(_reject_unknown(doc.get("synthetic", {}), _SYNTH_KEYS, "synthetic")),
        fit=dict(_reject_unknown(doc.get("fit", {}), _FIT_KEYS, "fit")),
        lambdas=tuple(float(v) for v in doc.get("lambdas", (1.0, 2.0))),
        seeds=seeds,
        workers=int(doc.get("workers", 1)),
    )


def experiment_document(result: BiasExperimentResult) -> Dict[str, Any]:
    """JSON summary: per-lambda medians and per-seed outcomes."""
    doc: Dict[str, Any] = {}
    for lam, outcomes in result.outcomes.items():
        doc[f"{lam:g}"] = {
            "median": {
                metric: result.median(lam, metric)
                for metric in ("nme", "nme_normal", "nme_tangent", "bias_rate")
            },
            "seeds": [
                {
                    "seed": o.seed,
                    "nme": o.nme,
                    "nme_normal": o.nme_normal,
                    "nme_tangent": o.nme_tangent,
                    "bias_rate": o.bias_rate,
                    "final_loss": o.final_loss,
                }
                for o in outcomes
            ],
        }
    return {"lambdas": doc}


def write_traces_csv(path: PathLike, result: BiasExperimentResult) -> Path:
    return _write_csv(path, ("lambda", "seed", "step", "loss"), trace_rows(result))
