"""
Evaluation metrics for landmark predictions.

NME normalizes the mean landmark error by a face-scale distance d and is
reported in percent. Directional NMEs average the absolute normal and tangent
error projections; the bias rate compares the two.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .direction import DirectionFrame, decompose_errors, direction_frame
from .exceptions import (
    ConfigError,
    DimensionError,
    DuplicateIdError,
    InputError,
    JoinError,
    UndefinedRateError,
)
from .scheme import LandmarkScheme, PointsLike, as_coords

logger = logging.getLogger(__name__)

NORM_KINDS = ("interocular", "interpupil")
DEFAULT_THRESHOLDS = (5.0, 10.0)

# Below this many pairs (or this short radius) an ellipse fit is flagged degenerate
MIN_ELLIPSE_PAIRS = 3
MIN_SHORT_RADIUS = 1e-12


@dataclass(frozen=True, eq=False)
class EvalSample:
    """One face: predicted and true landmarks plus its normalization distance."""

    id: str
    pred: np.ndarray
    truth: np.ndarray
    d: float

    def __post_init__(self) -> None:
        pred = as_coords(self.pred, name="pred")
        truth = as_coords(self.truth, name="truth")
        if pred.shape != truth.shape or pred.ndim != 2:
            raise DimensionError(
                f"sample {self.id}: pred shape {pred.shape} differs from truth shape {truth.shape}"
            )
        if not math.isfinite(self.d) or self.d <= 0:
            raise InputError(f"sample {self.id}: normalization distance must be positive, got {self.d}")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "truth", truth)

    @property
    def n_points(self) -> int:
        return self.truth.shape[0]


@dataclass(frozen=True)
class EdgeRow:
    """Overall, normal and tangent NME (percent) over one group of landmarks."""

    name: str
    nme: float
    nme_normal: float
    nme_tangent: float
    bias_rate: Optional[float]


@dataclass(frozen=True)
class PerEdgeReport:
    edges: Tuple[EdgeRow, ...]
    face: EdgeRow


@dataclass(frozen=True)
class EvalReport:
    """Aggregate evaluation of a sample set."""

    n_samples: int
    nme: float
    nme_normal: float
    nme_tangent: float
    fr: Dict[float, float]
    auc: Dict[float, float]
    bias_rate: Optional[float]
    per_edge: PerEdgeReport
    norm: str = "interocular"
    sample_nme: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class EllipseFit:
    """Per-landmark covariance ellipse of error offsets: radii a >= b and major-axis angle."""

    a: np.ndarray
    b: np.ndarray
    angle: np.ndarray
    degenerate: np.ndarray


@dataclass(frozen=True, eq=False)
class ErrorScatter:
    """
    Normalized (e_normal, e_tangent) offsets, arrays shaped (n_samples, n_points).

    Samples are ordered by id.
    """

    ids: Tuple[str, ...]
    e_normal: np.ndarray
    e_tangent: np.ndarray
    ellipses: EllipseFit

    def pairs(self, landmark: int) -> np.ndarray:
        """All (e_normal, e_tangent) pairs of one landmark, shape (n_samples, 2)."""
        return np.stack([self.e_normal[:, landmark], self.e_tangent[:, landmark]], axis=-1)

    def rows(self) -> Iterable[Tuple[int, str, float, float]]:
        """(landmark_index, sample_id, e_normal, e_tangent) in landmark-major order."""
        for i in range(self.e_normal.shape[1]):
            for s, sample_id in enumerate(self.ids):
                yield i, sample_id, float(self.e_normal[s, i]), float(self.e_tangent[s, i])


def normalization_distance(scheme: LandmarkScheme, truth: PointsLike, kind: str = "interocular") -> float:
    """
    Face-scale distance d from the ground truth.

    interocular is the distance between the two outer eye corners; interpupil the
    distance between the centroids of the two eye contours.
    """
    coords = as_coords(truth, scheme.n_points, "truth")
    spec = scheme.norm_spec
    if kind == "interocular":
        i, j = spec.inter_ocular
        return float(np.linalg.norm(coords[i] - coords[j]))
    if kind == "interpupil":
        left, right = spec.inter_pupil
        return float(np.linalg.norm(coords[list(left)].mean(axis=0) - coords[list(right)].mean(axis=0)))
    raise ConfigError(f"unknown normalization: {kind} (expected one of {', '.join(NORM_KINDS)})")


def make_sample(
    sample_id: str, pred: PointsLike, truth: PointsLike, scheme: LandmarkScheme, norm: str = "interocular"
) -> EvalSample:
    """Build an EvalSample whose d comes from the scheme's normalization spec."""
    truth_arr = as_coords(truth, scheme.n_points, "truth")
    pred_arr = as_coords(pred, scheme.n_points, "pred")
    return EvalSample(sample_id, pred_arr, truth_arr, normalization_distance(scheme, truth_arr, norm))


def join_samples(
    predictions: Mapping[str, PointsLike],
    annotations: Mapping[str, PointsLike],
    scheme: LandmarkScheme,
    norm: str = "interocular",
) -> List[EvalSample]:
    """
    Pair predictions with annotations by id, sorted by id.

    Raises:
        JoinError: If the two id sets differ
    """
    missing = set(annotations) - set(predictions)
    extra = set(predictions) - set(annotations)
    if missing or extra:
        raise JoinError(missing, extra)
    return [make_sample(k, predictions[k], annotations[k], scheme, norm) for k in sorted(annotations)]


def nme(sample: EvalSample) -> float:
    """Mean landmark error over d, in percent."""
    errors = np.linalg.norm(sample.pred - sample.truth, axis=-1)
    return float(np.mean(errors) / sample.d * 100.0)


def directional_nme(sample: EvalSample, frame: DirectionFrame) -> Tuple[float, float]:
    """(normal NME, tangent NME) in percent, from mean absolute projections."""
    parts = decompose_errors(frame, sample.truth, sample.pred)
    scale = 100.0 / sample.d
    return (
        float(np.mean(np.abs(parts.e_normal)) * scale),
        float(np.mean(np.abs(parts.e_tangent)) * scale),
    )


def _nme_values(nmes: Sequence[float], threshold: float) -> np.ndarray:
    values = np.asarray(nmes, dtype=np.float64)
    if values.size == 0:
        raise InputError("no NME values to aggregate")
    if not threshold > 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    return values


def failure_rate(nmes: Sequence[float], threshold: float) -> float:
    """Fraction of samples whose NME exceeds the threshold."""
    values = _nme_values(nmes, threshold)
    return float(np.count_nonzero(values > threshold) / values.size)


def auc_ced(nmes: Sequence[float], threshold: float) -> float:
    """
    Area under the cumulative error distribution up to the threshold, over threshold.

    The CED is a step function, so its integral on [0, T] is exact: each sample
    contributes the length max(T - nme, 0).
    """
    values = np.sort(_nme_values(nmes, threshold))
    return float(np.sum(np.clip(threshold - values, 0.0, None)) / (values.size * threshold))


def bias_rate(nme_normal: float, nme_tangent: float) -> float:
    """(tangent - normal) / normal, in percent."""
    if nme_normal == 0:
        raise UndefinedRateError("bias rate is undefined for a zero normal NME")
    return (nme_tangent - nme_normal) / nme_normal * 100.0


def _optional_bias_rate(nme_normal: float, nme_tangent: float) -> Optional[float]:
    try:
        return bias_rate(nme_normal, nme_tangent)
    except UndefinedRateError:
        return None


def _sorted_samples(samples: Iterable[EvalSample]) -> List[EvalSample]:
    ordered = sorted(samples, key=lambda s: s.id)
    if not ordered:
        raise InputError("no samples to evaluate")
    for a, b in zip(ordered[:-1], ordered[1:]):
        if a.id == b.id:
            raise DuplicateIdError(f"duplicate sample id: {a.id}")
    return ordered


def _stack(samples: List[EvalSample], scheme: LandmarkScheme):
    truth = np.stack([s.truth for s in samples])
    pred = np.stack([s.pred for s in samples])
    if truth.shape[1] != scheme.n_points:
        raise DimensionError(f"samples have {truth.shape[1]} points, scheme has {scheme.n_points}")
    d = np.array([s.d for s in samples])
    frame = direction_frame(scheme, truth, pred)
    parts = decompose_errors(frame, truth, pred)
    scale = (100.0 / d)[:, None]
    return (
        parts.e_norm * scale,
        np.abs(parts.e_normal) * scale,
        np.abs(parts.e_tangent) * scale,
    )


def _row(name: str, overall: np.ndarray, normal: np.ndarray, tangent: np.ndarray) -> EdgeRow:
    n, t = float(np.mean(normal)), float(np.mean(tangent))
    return EdgeRow(name, float(np.mean(overall)), n, t, _optional_bias_rate(n, t))


def per_edge_report(samples: Iterable[EvalSample], scheme: LandmarkScheme) -> PerEdgeReport:
    """
    Overall/normal/tangent NME and bias rate per edge, plus the whole-face row.

    A landmark on several edges counts toward each of them. Bias rates that are
    undefined (zero normal NME) are None.
    """
    overall, normal, tangent = _stack(_sorted_samples(samples), scheme)
    rows = []
    for j, edge in enumerate(scheme.edges):
        idx = scheme.edge_points(j)
        rows.append(_row(edge.name, overall[:, idx], normal[:, idx], tangent[:, idx]))
    return PerEdgeReport(edges=tuple(rows), face=_row("Whole Face", overall, normal, tangent))


def fit_covariance_ellipse(pairs: np.ndarray) -> EllipseFit:
    """
    Fit a covariance ellipse per landmark.

    Args:
        pairs: Offsets shaped (n_samples, n_points, 2)

    Returns:
        EllipseFit with radii sqrt of the covariance eigenvalues (descending)
        and the major axis angle measured from the first coordinate axis
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise DimensionError(f"pairs must have shape (n_samples, n_points, 2), got {arr.shape}")
    n_points = arr.shape[1]
    if arr.shape[0] == 0:
        zeros = np.zeros(n_points)
        return EllipseFit(zeros, zeros.copy(), zeros.copy(), np.ones(n_points, dtype=bool))

    centered = arr - arr.mean(axis=0)
    cov = np.einsum("spi,spj->pij", centered, centered) / arr.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    a = np.sqrt(eigvals[:, 1])
    b = np.sqrt(eigvals[:, 0])
    major = eigvecs[:, :, 1]
    angle = np.arctan2(major[:, 1], major[:, 0])
    degenerate = (b < MIN_SHORT_RADIUS) | (arr.shape[0] < MIN_ELLIPSE_PAIRS)
    return EllipseFit(a=a, b=b, angle=angle, degenerate=degenerate)


def error_scatter(samples: Iterable[EvalSample], scheme: LandmarkScheme) -> ErrorScatter:
    """Per-landmark (e_normal, e_tangent) offsets divided by d, with ellipse fits."""
    ordered = _sorted_samples(samples)
    truth = np.stack([s.truth for s in ordered])
    pred = np.stack([s.pred for s in ordered])
    d = np.array([s.d for s in ordered])[:, None]
    frame = direction_frame(scheme, truth, pred)
    parts = decompose_errors(frame, truth, pred)
    e_normal = parts.e_normal / d
    e_tangent = parts.e_tangent / d
    ellipses = fit_covariance_ellipse(np.stack([e_normal, e_tangent], axis=-1))
    return ErrorScatter(
        ids=tuple(s.id for s in ordered), e_normal=e_normal, e_tangent=e_tangent, ellipses=ellipses
    )


def evaluate(
    samples: Iterable[EvalSample],
    scheme: LandmarkScheme,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    norm: str = "interocular",
) -> EvalReport:
    """
    Full evaluation: NMEs, FR and AUC per threshold, bias rate and per-edge table.

    Samples are reduced in id order, so the report does not depend on input order.
    """
    ordered = _sorted_samples(samples)
    overall, normal, tangent = _stack(ordered, scheme)
    per_sample = overall.mean(axis=1)
    report_edges = per_edge_report(ordered, scheme)
    nme_normal = float(np.mean(normal))
    nme_tangent = float(np.mean(tangent))
    rate = _optional_bias_rate(nme_normal, nme_tangent)
    if rate is None:
        logger.warning("normal NME is zero; bias rate left undefined")

    report = EvalReport(
        n_samples=len(ordered),
        nme=float(np.mean(per_sample)),
        nme_normal=nme_normal,
        nme_tangent=nme_tangent,
        fr={float(t): failure_rate(per_sample, t) for t in thresholds},
        auc={float(t): auc_ced(per_sample, t) for t in thresholds},
        bias_rate=rate,
        per_edge=report_edges,
        norm=norm,
        sample_nme={s.id: float(v) for s, v in zip(ordered, per_sample)},
    )
    logger.info(
        "evaluated %d samples: NME %.4f%% (normal %.4f%%, tangent %.4f%%)",
        report.n_samples,
        report.nme,
        report.nme_normal,
        report.nme_tangent,
    )
    return report

