"""
Desk-scale fitting experiments.

Synthetic faces are annotated k times with noise that is wider along each
landmark's tangent than along its normal. A learner then fits landmark
coordinates to those annotations, either directly (coordinate path) or through
free heatmaps decoded by soft-argmax (heatmap path), and the fitted points are
scored with the directional metrics.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .direction import DirectionFrame, direction_frame
from .exceptions import (
    ConfigError,
    DegeneracyError,
    DimensionError,
    DivergenceError,
    InputError,
)
from .heatmap import (
    Heatmap,
    HeatmapGeometry,
    decode,
    e2p_transform,
    gen_edge_heatmap,
    gen_point_heatmap,
)
from .loss import (
    ADLConfig,
    AWingConfig,
    CompositeWeights,
    LambdaLike,
    awing,
    composite_loss,
    smooth_adl1,
)
from .metrics import (
    EllipseFit,
    ErrorScatter,
    fit_covariance_ellipse,
    make_sample,
    per_edge_report,
)
from .scheme import LandmarkScheme, PointSet, PointsLike, as_coords, builtin_300w, e2p_matrix
from .shapes import ShapeBasis, curve_basis

__all__ = [
    "EllipseFit",
    "SynthConfig",
    "SyntheticSet",
    "FitConfig",
    "FitResult",
    "HeatmapProblem",
    "LambdaEstimate",
    "SeedOutcome",
    "BiasExperimentResult",
    "load_template",
    "standard_synth_config",
    "gen_synthetic",
    "fit_coordinates",
    "fit_heatmap_logits",
    "estimate_lambda",
    "lambda_strategy",
    "heatmap_problem",
    "initial_params",
    "run_bias_experiment",
    "trace_rows",
]

logger = logging.getLogger(__name__)

PATHS = ("coordinate", "heatmap")
LAMBDA_STRATEGIES = ("uniform", "contour", "ellipse")

# Path-specific step sizes and budgets used when FitConfig leaves them unset
DEFAULT_LEARNING_RATE = {"coordinate": 0.5, "heatmap": 50.0}
DEFAULT_MAX_ITERS = {"coordinate": 500, "heatmap": 2000}
DEFAULT_TOLERANCE = {"coordinate": 1e-12, "heatmap": 1e-12}

DIVERGENCE_LIMIT = 1e6
LAMBDA_RANGE = (1.0, 16.0)

# Unit template to heatmap pixels on the default 64x64 grid
TEMPLATE_SCALE = 40.0
TEMPLATE_OFFSET = (12.0, 10.0)


def load_template(
    scale: float = TEMPLATE_SCALE, offset: Tuple[float, float] = TEMPLATE_OFFSET
) -> PointSet:
    """The canonical 68-point face template, mapped to heatmap units."""
    text = resources.files("landmarkbias").joinpath("data/face_template_68.json").read_text("utf-8")
    unit = np.array(json.loads(text)["points"], dtype=np.float64)
    return PointSet(unit * scale + np.asarray(offset), unit="heatmap")


@dataclass(frozen=True, eq=False)
class SynthConfig:
    """
    Synthetic annotation generator settings.

    Truth faces are the base shape deformed along its curve basis, with every
    orthonormal mode coefficient drawn with standard deviation shape_spread. Each
    of the k annotations adds sigma_normal noise along the landmark normal and
    sigma_tangent noise along its tangent.
    """

    scheme: LandmarkScheme
    base_shape: PointSet
    sigma_normal: float = 0.15
    sigma_tangent: float = 0.3
    k_annotations: int = 8
    n_faces: int = 32
    seed: int = 0
    shape_spread: float = 0.5

    def __post_init__(self) -> None:
        if len(self.base_shape) != self.scheme.n_points:
            raise DimensionError(
                f"base shape has {len(self.base_shape)} points, scheme has {self.scheme.n_points}"
            )
        if self.sigma_normal < 0 or self.sigma_tangent < self.sigma_normal:
            raise ConfigError("expected sigma_tangent >= sigma_normal >= 0")
        if self.k_annotations < 1 or self.n_faces < 1:
            raise ConfigError("k_annotations and n_faces must be at least 1")
        if self.shape_spread < 0:
            raise ConfigError("shape_spread must be non-negative")

    @cached_property
    def basis(self) -> ShapeBasis:
        """Curve modes of the scheme around the base shape."""
        return curve_basis(self.scheme, self.base_shape.coords)


def standard_synth_config(seed: int = 0, **overrides) -> SynthConfig:
    """The 300W scheme on the canonical template with sigma_t = 2 sigma_n and k = 8."""
    return replace(SynthConfig(scheme=builtin_300w(), base_shape=load_template(), seed=seed), **overrides)


@dataclass(frozen=True, eq=False)
class SyntheticSet:
    """truth: (n_faces, n_points, 2); annotations: (n_faces, k, n_points, 2)."""

    truth: np.ndarray
    annotations: np.ndarray


def gen_synthetic(cfg: SynthConfig) -> SyntheticSet:
    """
    Draw truth faces and their noisy annotations.

    Every truth face lies in the span of cfg.basis, so a learner on that basis
    can reproduce it exactly and its error comes from annotation noise alone.
    Noise directions come from the truth frame. Landmarks without a usable frame
    get isotropic noise with the RMS of the two sigmas.
    """
    rng = np.random.default_rng(cfg.seed)
    basis = cfg.basis
    truth = basis.shape(cfg.shape_spread * rng.standard_normal((cfg.n_faces, basis.n_modes)))

    frame = direction_frame(cfg.scheme, truth, truth)
    framed = frame.has_basis[:, None, :, None]
    xi = rng.standard_normal((cfg.n_faces, cfg.k_annotations, cfg.scheme.n_points, 2))

    directional = (
        cfg.sigma_normal * xi[..., 0:1] * frame.normal[:, None]
        + cfg.sigma_tangent * xi[..., 1:2] * frame.tangent[:, None]
    )
    rms = math.sqrt((cfg.sigma_normal ** 2 + cfg.sigma_tangent ** 2) / 2.0)
    noise = np.where(framed, directional, rms * xi)
    return SyntheticSet(truth=truth, annotations=truth[:, None] + noise)


@dataclass(frozen=True, eq=False)
class FitConfig:
    """
    Gradient-descent fit settings.

    learning_rate, max_iters and tolerance default per path. The fit stops once
    the loss changes by less than tolerance between iterations.
    """

    lam: LambdaLike = 2.0
    path: str = "coordinate"
    learning_rate: Optional[float] = None
    max_iters: Optional[int] = None
    tolerance: Optional[float] = None
    seed: int = 0
    supervise_attention: bool = False
    weights: CompositeWeights = field(default_factory=CompositeWeights)
    awing: AWingConfig = field(default_factory=AWingConfig)

    def __post_init__(self) -> None:
        if self.path not in PATHS:
            raise ConfigError(f"unknown fit path: {self.path}")
        ADLConfig(lam=self.lam)
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.tolerance is not None and self.tolerance < 0:
            raise ConfigError(f"tolerance must be non-negative, got {self.tolerance}")

    @property
    def step_size(self) -> float:
        return DEFAULT_LEARNING_RATE[self.path] if self.learning_rate is None else self.learning_rate

    @property
    def iterations(self) -> int:
        return DEFAULT_MAX_ITERS[self.path] if self.max_iters is None else self.max_iters

    @property
    def stop_tolerance(self) -> float:
        return DEFAULT_TOLERANCE[self.path] if self.tolerance is None else self.tolerance

    def adl(self) -> ADLConfig:
        return ADLConfig(lam=self.lam, n=1)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted points in heatmap units with the per-iteration loss trace."""

    points: np.ndarray
    trace: Tuple[float, ...]
    iterations: int
    converged: bool

    def point_sets(self) -> List[PointSet]:
        pts = self.points if self.points.ndim == 3 else self.points[None]
        return [PointSet(p, unit="heatmap") for p in pts]


def _descend(
    value_grad: Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]],
    params: Dict[str, np.ndarray],
    lr: float,
    max_iters: int,
    tolerance: float,
    label: str,
) -> Tuple[Dict[str, np.ndarray], List[float], bool]:
    trace: List[float] = []
    previous = None
    for step in range(max_iters):
        value, grads = value_grad(params)
        if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise DivergenceError(f"{label} fit diverged (loss {value:g})", step)
        trace.append(value)
        if previous is not None and abs(previous - value) < tolerance:
            logger.debug("%s fit converged at step %d, loss %.6g", label, step, value)
            return params, trace, True
        previous = value
        params = {k: v - lr * grads[k] for k, v in params.items()}
        if step % 100 == 0:
            logger.debug("%s fit step %d: loss %.6g", label, step, value)
    return params, trace, False


def fit_coordinates(
    annotations: np.ndarray,
    scheme: LandmarkScheme,
    fit: FitConfig,
    init: Optional[PointsLike] = None,
    basis: Optional[ShapeBasis] = None,
) -> FitResult:
    """
    Fit landmark coordinates to k noisy annotations per face with Smooth ADL1.

    Each face follows gradient descent on its loss summed over landmarks and
    averaged over its k annotations, so one landmark under lambda = 1 sees a
    unit-curvature quadratic near the annotation mean. Without a basis every
    coordinate is free and the direction frame comes from the annotation mean.
    With a basis the face descends on its mode coefficients, and the frame comes
    from the annotation mean projected onto the basis.

    Args:
        annotations: (k, n_points, 2) for one face or (n_faces, k, n_points, 2)
        scheme: Landmark scheme
        fit: Fit settings; only the coordinate path is accepted
        init: Starting points, (n_points, 2) or one per face. Defaults to the
            basis reference when a basis is given, the canonical template for
            68-point schemes, otherwise the annotation mean
        basis: Optional shape basis constraining every face

    Raises:
        DivergenceError: If the loss exceeds 1e6 or stops being finite
    """
    if fit.path != "coordinate":
        raise ConfigError(f"fit_coordinates needs the coordinate path, got {fit.path}")
    ann = np.asarray(annotations, dtype=np.float64)
    single = ann.ndim == 3
    if single:
        ann = ann[None]
    if ann.ndim != 4:
        raise DimensionError(f"annotations must have shape (n_faces, k, n_points, 2), got {ann.shape}")
    as_coords(ann, scheme.n_points, "annotations")
    if basis is not None and basis.n_points != scheme.n_points:
        raise DimensionError(f"basis covers {basis.n_points} points, scheme has {scheme.n_points}")
    consensus = ann.mean(axis=1)

    if init is not None:
        start = np.broadcast_to(as_coords(init, scheme.n_points, "init"), consensus.shape).copy()
    elif basis is not None:
        start = np.broadcast_to(basis.reference, consensus.shape).copy()
    elif scheme.n_points == 68:
        start = np.broadcast_to(load_template().coords, consensus.shape).copy()
    else:
        logger.info("no template for %d points, starting from the annotation mean", scheme.n_points)
        start = consensus.copy()

    cfg = fit.adl()
    n_faces = ann.shape[0]
    scale = n_faces * scheme.n_points
    anchor = consensus if basis is None else basis.shape(basis.project(consensus))

    def loss(pred):
        frame = direction_frame(scheme, anchor, pred)
        per_face = DirectionFrame(
            frame.normal[:, None], frame.tangent[:, None], frame.on_edge[:, None], frame.degenerate[:, None]
        )
        lv = smooth_adl1(np.broadcast_to(pred[:, None], ann.shape), ann, per_face, cfg)
        # Undo the mean over faces and landmarks, keep the mean over annotations
        return lv.value, scale * lv.grad.sum(axis=1)

    if basis is None:

        def value_grad(params):
            value, grad = loss(params["points"])
            return value, {"points": grad}

        params = {"points": start}
    else:

        def value_grad(params):
            value, grad = loss(basis.shape(params["coeffs"]))
            return value, {"coeffs": basis.pull_back(grad)}

        params = {"coeffs": basis.project(start)}

    params, trace, converged = _descend(
        value_grad, params, fit.step_size, fit.iterations, fit.stop_tolerance, "coordinate"
    )
    fitted = params["points"] if basis is None else basis.shape(params["coeffs"])
    points = fitted[0] if single else fitted
    logger.debug("coordinate fit finished after %d steps, final loss %.6g", len(trace), trace[-1])
    return FitResult(points=points, trace=tuple(trace), iterations=len(trace), converged=converged)


@dataclass(frozen=True, eq=False)
class HeatmapProblem:
    """
    The heatmap-path objective as a function of squared-parameter grids.

    params["landmarks"] = Z with H_landmarks = Z^2. With a fixed mask the
    objective is Smooth ADL1 of the soft-argmax decode. With attention
    supervision, params also hold "point" (n_points channels) and "edge"
    (n_edges channels) grids whose squares form the mask point^2 * E2P(edge^2),
    and AWing terms pull both squares toward the generated targets.
    """

    scheme: LandmarkScheme
    geometry: HeatmapGeometry
    targets: np.ndarray
    adl: ADLConfig
    mask: Optional[np.ndarray] = None
    point_target: Optional[np.ndarray] = None
    edge_target: Optional[np.ndarray] = None
    awing: AWingConfig = field(default_factory=AWingConfig)
    weights: CompositeWeights = field(default_factory=CompositeWeights)

    @property
    def joint(self) -> bool:
        return self.mask is None

    def compose_mask(self, params: Dict[str, np.ndarray]) -> np.ndarray:
        if not self.joint:
            return self.mask
        e2p = e2p_matrix(self.scheme)
        return params["point"] ** 2 * e2p_transform(params["edge"] ** 2, e2p)

    def decode(self, params: Dict[str, np.ndarray]):
        return decode(params["landmarks"] ** 2, self.compose_mask(params), self.geometry)

    def value_and_grad(self, params: Dict[str, np.ndarray]) -> Tuple[float, Dict[str, np.ndarray]]:
        """Objective value and its gradient w.r.t. every parameter grid."""
        z = params["landmarks"]
        result = self.decode(params)
        frame = direction_frame(self.scheme, self.targets, result.points)
        coord = smooth_adl1(result.points, self.targets, frame, self.adl)
        grads = {"landmarks": 2.0 * z * result.backward(coord.grad)}
        if not self.joint:
            return coord.value, grads

        e2p = e2p_matrix(self.scheme)
        zp, ze = params["point"], params["edge"]
        hp, he = zp ** 2, ze ** 2
        edge_p = e2p_transform(he, e2p)
        edge_term = awing(he, self.edge_target, self.awing)
        point_term = awing(hp, self.point_target, self.awing)
        total = composite_loss(coord, edge_term, point_term, self.weights)
        _, edge_grad, point_grad = total.grad

        g_mask = result.backward_mask(coord.grad)
        g_hp = g_mask * edge_p + point_grad
        g_he = np.einsum("pe,phw->ehw", e2p.entries, g_mask * hp) + edge_grad
        grads["point"] = 2.0 * zp * g_hp
        grads["edge"] = 2.0 * ze * g_he
        return total.value, grads


def _target_coords(targets: PointsLike, geom: HeatmapGeometry, scheme: LandmarkScheme) -> np.ndarray:
    if isinstance(targets, PointSet):
        targets = targets.to_heatmap(geom.stride)
    coords = as_coords(targets, scheme.n_points, "targets")
    if coords.ndim != 2:
        raise DimensionError(f"targets must have shape (n_points, 2), got {coords.shape}")
    if not np.all(geom.contains(coords)):
        raise InputError("heatmap-path targets must lie inside the grid")
    return coords


def heatmap_problem(
    targets: PointsLike,
    scheme: LandmarkScheme,
    geom: HeatmapGeometry,
    fit: FitConfig,
    mask: Optional[Union[Heatmap, np.ndarray]] = None,
) -> HeatmapProblem:
    """
    Build the heatmap-path objective.

    Without attention supervision the mask defaults to the point-edge fusion of
    the targets' own point and edge heatmaps.
    """
    coords = _target_coords(targets, geom, scheme)
    point_target = gen_point_heatmap(scheme, coords, geom).data
    edge_target = gen_edge_heatmap(scheme, coords, geom).data
    if fit.supervise_attention:
        fixed = None
    elif mask is None:
        fixed = point_target * e2p_transform(edge_target, e2p_matrix(scheme))
    else:
        fixed = mask.data if isinstance(mask, Heatmap) else np.asarray(mask, dtype=np.float64)
        if fixed.shape != (scheme.n_points,) + geom.shape:
            raise DimensionError(f"mask shape {fixed.shape} does not match the landmark heatmaps")
    return HeatmapProblem(
        scheme=scheme,
        geometry=geom,
        targets=coords,
        adl=fit.adl(),
        mask=fixed,
        point_target=point_target,
        edge_target=edge_target,
        awing=fit.awing,
        weights=fit.weights,
    )


def initial_params(problem: HeatmapProblem, seed: int = 0) -> Dict[str, np.ndarray]:
    """Near-uniform positive grids, Z = 1 + U(-0.01, 0.01), drawn from seed."""
    rng = np.random.default_rng(seed)
    shape = problem.geometry.shape
    n_points, n_edges = problem.scheme.n_points, problem.scheme.n_edges
    params = {"landmarks": 1.0 + 0.01 * rng.uniform(-1.0, 1.0, (n_points,) + shape)}
    if problem.joint:
        params["point"] = 1.0 + 0.01 * rng.uniform(-1.0, 1.0, (n_points,) + shape)
        params["edge"] = 1.0 + 0.01 * rng.uniform(-1.0, 1.0, (n_edges,) + shape)
    return params


def fit_heatmap_logits(
    targets: PointsLike,
    scheme: LandmarkScheme,
    geom: HeatmapGeometry,
    fit: FitConfig,
    mask: Optional[Union[Heatmap, np.ndarray]] = None,
) -> FitResult:
    """
    Optimize free landmark heatmaps so their masked soft-argmax hits the targets.

    Raises:
        DegeneracyError: If a channel has no masked mass at initialization
        InputError: If a target lies outside the grid
        DivergenceError: If the loss blows up
    """
    if fit.path != "heatmap":
        raise ConfigError(f"fit_heatmap_logits needs the heatmap path, got {fit.path}")
    problem = heatmap_problem(targets, scheme, geom, fit, mask)
    params = initial_params(problem, fit.seed)
    start = problem.decode(params)
    if np.any(start.degenerate):
        bad = np.flatnonzero(start.degenerate).tolist()
        raise DegeneracyError(f"mask leaves no mass for landmark channel(s) {bad}")

    params, trace, converged = _descend(
        problem.value_and_grad,
        params,
        fit.step_size,
        fit.iterations,
        fit.stop_tolerance,
        "heatmap",
    )
    decoded = problem.decode(params).points
    logger.debug("heatmap fit finished after %d steps, final loss %.6g", len(trace), trace[-1])
    return FitResult(points=decoded, trace=tuple(trace), iterations=len(trace), converged=converged)


@dataclass(frozen=True, eq=False)
class LambdaEstimate:
    """Per-landmark lambda = a / b from the error ellipse, with degeneracy flags."""

    lam: np.ndarray
    ellipses: EllipseFit
    degenerate: np.ndarray


def estimate_lambda(scatter: Union[ErrorScatter, np.ndarray]) -> LambdaEstimate:
    """
    Estimate lambda_i = a_i / b_i per landmark, clamped to [1, 16].

    Args:
        scatter: An ErrorScatter or (n_samples, n_points, 2) offset pairs

    Landmarks with fewer than 3 pairs, or a short radius below 1e-12, are
    flagged degenerate; a landmark with no spread at all gets lambda 1.

    Raises:
        InputError: If there are no pairs
    """
    if isinstance(scatter, ErrorScatter):
        pairs = np.stack([scatter.e_normal, scatter.e_tangent], axis=-1)
    else:
        pairs = np.asarray(scatter, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[0] == 0 or pairs.shape[1] == 0:
        raise InputError("lambda estimation needs at least one pair per landmark")

    ellipses = fit_covariance_ellipse(pairs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = ellipses.a / ellipses.b
    ratio = np.where(ellipses.a > 0, ratio, 1.0)
    ratio = np.where(pairs.shape[0] < 3, 1.0, ratio)
    lam = np.clip(np.nan_to_num(ratio, nan=1.0, posinf=LAMBDA_RANGE[1]), *LAMBDA_RANGE)
    if np.any(ellipses.degenerate):
        logger.warning("%d landmark(s) have a degenerate error ellipse", int(ellipses.degenerate.sum()))
    return LambdaEstimate(lam=lam, ellipses=ellipses, degenerate=ellipses.degenerate.copy())


def lambda_strategy(
    scheme: LandmarkScheme,
    name: str,
    scatter: Optional[Union[ErrorScatter, np.ndarray]] = None,
    base: float = 2.0,
    contour: float = 4.0,
    contour_edge: str = "Face Contour",
) -> np.ndarray:
    """
    Per-landmark lambda vector for a named strategy.

    uniform gives every landmark `base`; contour raises the landmarks of
    `contour_edge` to `contour`; ellipse uses estimate_lambda on `scatter`.
    """
    if name == "uniform":
        return np.full(scheme.n_points, float(base))
    if name == "contour":
        lam = np.full(scheme.n_points, float(base))
        try:
            lam[list(scheme.edge(contour_edge).vertices)] = contour
        except KeyError:
            raise ConfigError(f"scheme {scheme.name} has no edge named {contour_edge!r}")
        return lam
    if name == "ellipse":
        if scatter is None:
            raise ConfigError("the ellipse strategy needs an error scatter")
        lam = estimate_lambda(scatter).lam
        if lam.shape != (scheme.n_points,):
            raise DimensionError(f"scatter covers {lam.shape[0]} landmarks, scheme has {scheme.n_points}")
        return lam
    raise ConfigError(f"unknown lambda strategy: {name} (expected one of {', '.join(LAMBDA_STRATEGIES)})")


@dataclass(frozen=True)
class SeedOutcome:
    """Face-averaged NMEs (percent) of one seed fitted at one lambda."""

    seed: int
    lam: float
    nme: float
    nme_normal: float
    nme_tangent: float
    bias_rate: Optional[float]
    final_loss: float


@dataclass(frozen=True, eq=False)
class BiasExperimentResult:
    """Paired-seed outcomes per lambda, each list ordered by seed."""

    outcomes: Dict[float, Tuple[SeedOutcome, ...]]
    traces: Dict[Tuple[float, int], Tuple[float, ...]]

    def median(self, lam: float, metric: str) -> float:
        values = [getattr(o, metric) for o in self.outcomes[lam]]
        values = [v for v in values if v is not None]
        return float(np.median(values)) if values else float("nan")

    def normal_wins(self, lam: float, baseline: float) -> int:
        """Seeds where `lam` reaches a strictly lower normal NME than `baseline`."""
        return sum(
            a.nme_normal < b.nme_normal for a, b in zip(self.outcomes[lam], self.outcomes[baseline])
        )


def _run_seed(
    seed: int,
    synth: SynthConfig,
    fit: FitConfig,
    lambdas: Sequence[float],
    norm: str,
    strategy: Optional[Callable[[float], LambdaLike]],
) -> List[Tuple[SeedOutcome, Tuple[float, ...]]]:
    data = gen_synthetic(replace(synth, seed=seed))
    scheme = synth.scheme
    rows = []
    for lam in lambdas:
        setting = replace(fit, lam=strategy(lam) if strategy else lam)
        result = fit_coordinates(data.annotations, scheme, setting, init=synth.base_shape, basis=synth.basis)
        samples = [
            make_sample(f"face{i:04d}", result.points[i], data.truth[i], scheme, norm)
            for i in range(data.truth.shape[0])
        ]
        face = per_edge_report(samples, scheme).face
        outcome = SeedOutcome(
            seed=seed,
            lam=float(lam),
            nme=face.nme,
            nme_normal=face.nme_normal,
            nme_tangent=face.nme_tangent,
            bias_rate=face.bias_rate,
            final_loss=result.trace[-1],
        )
        rows.append((outcome, result.trace))
    return rows


def run_bias_experiment(
    synth: SynthConfig,
    fit: FitConfig,
    lambdas: Sequence[float] = (1.0, 2.0),
    seeds: Sequence[int] = tuple(range(20)),
    workers: int = 1,
    norm: str = "interocular",
    on_seed: Optional[Callable[[int], None]] = None,
    strategy: Optional[Callable[[float], LambdaLike]] = None,
) -> BiasExperimentResult:
    """
    Fit the same synthetic data at several lambdas for every seed.

    The learner works in the curve basis of synth, so truth is reachable and
    fitted errors come from the annotation noise. When strategy is given, each
    entry of lambdas is passed through it and the fit uses the returned value or
    per-landmark vector; outcomes stay keyed by the entry.

    Seeds run in a thread pool when workers > 1; outcomes are collected in seed
    order either way, so the result does not depend on the worker count.
    """
    if not lambdas or not seeds:
        raise ConfigError("need at least one lambda and one seed")
    logger.debug("learner basis: %d modes over %d parts", synth.basis.n_modes, len(synth.basis.parts))
    run = lambda s: _run_seed(s, synth, fit, lambdas, norm, strategy)  # noqa: E731

    per_seed: List[List[Tuple[SeedOutcome, Tuple[float, ...]]]] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for seed, rows in zip(seeds, pool.map(run, seeds)):
                per_seed.append(rows)
                if on_seed:
                    on_seed(seed)
    else:
        for seed in seeds:
            per_seed.append(run(seed))
            if on_seed:
                on_seed(seed)

    outcomes: Dict[float, List[SeedOutcome]] = {float(lam): [] for lam in lambdas}
    traces: Dict[Tuple[float, int], Tuple[float, ...]] = {}
    for rows in per_seed:
        for outcome, trace in rows:
            outcomes[outcome.lam].append(outcome)
            traces[(outcome.lam, outcome.seed)] = trace

    result = BiasExperimentResult(outcomes={k: tuple(v) for k, v in outcomes.items()}, traces=traces)
    for lam in outcomes:
        logger.info(
            "lambda %g: median normal NME %.4f%%, tangent NME %.4f%%, bias rate %.2f%%",
            lam,
            result.median(lam, "nme_normal"),
            result.median(lam, "nme_tangent"),
            result.median(lam, "bias_rate"),
        )
    return result


def trace_rows(result: BiasExperimentResult) -> List[Tuple[float, int, int, float]]:
    """(lambda, seed, step, loss) rows for trace export."""
    return [
        (lam, seed, step, value)
        for (lam, seed), trace in sorted(result.traces.items())
        for step, value in enumerate(trace)
    ]
