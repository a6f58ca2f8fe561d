"""
Central finite-difference checks of the analytic gradients.

Each check perturbs the input of a (value, grad) function by +-h and compares
the numeric slopes against the analytic gradient. Random inputs are drawn away
from the loss branch points so the functions are smooth around them.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .direction import direction_frame
from .fitlab import FitConfig, heatmap_problem
from .heatmap import HeatmapGeometry, decode
from .loss import AWingConfig, ADLConfig, LossValueGrad, adl_n, awing, l_n, smooth_adl1, smooth_l1
from .scheme import EdgeDef, LandmarkScheme, NormalizationSpec, builtin_300w

logger = logging.getLogger(__name__)

H_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-5
MAX_COORDS = 200

# Inputs closer than this to a branch point are redrawn
BRANCH_MARGIN = 1e-3

ValueGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    rel_error: float
    tolerance: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| over max |numeric|, floored at 1e-8."""
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_gradient(fn: ValueGrad, x: np.ndarray, indices: np.ndarray, h: float = H_STEP) -> np.ndarray:
    """Central differences of fn's value at the given flat indices of x."""
    flat = np.array(x, dtype=np.float64).ravel()
    out = np.empty(len(indices))
    for n, i in enumerate(indices):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(flat.reshape(x.shape))[0]
        flat[i] = keep - h
        down = fn(flat.reshape(x.shape))[0]
        flat[i] = keep
        out[n] = (up - down) / (2.0 * h)
    return out


def check_gradient(
    name: str,
    fn: ValueGrad,
    x: np.ndarray,
    rng: np.random.Generator,
    tolerance: float = DEFAULT_TOLERANCE,
    h: float = H_STEP,
    max_coords: int = MAX_COORDS,
) -> GradcheckResult:
    """Compare fn's analytic gradient at x with central differences."""
    x = np.asarray(x, dtype=np.float64)
    _, analytic = fn(x)
    size = x.size
    if size > max_coords:
        indices = np.sort(rng.choice(size, size=max_coords, replace=False))
    else:
        indices = np.arange(size)
    numeric = numeric_gradient(fn, x, indices, h)
    result = GradcheckResult(
        name=name,
        rel_error=relative_error(np.asarray(analytic).ravel()[indices], numeric),
        tolerance=tolerance,
        n_coords=len(indices),
    )
    logger.debug("gradcheck %s: relative error %.3g over %d coords", name, result.rel_error, result.n_coords)
    return result


def _vg(lv: LossValueGrad) -> Tuple[float, np.ndarray]:
    return lv.value, lv.grad


def _coordinate_errors(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Random errors with |e| in [0.05, 3], none within the margin of |e| = 1."""
    angle = rng.uniform(0.0, 2.0 * np.pi, shape[:-1])
    radius = rng.uniform(0.05, 3.0, shape[:-1])
    near = np.abs(radius - 1.0) < BRANCH_MARGIN
    radius[near] += 10 * BRANCH_MARGIN
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1) * radius[..., None]


def _coordinate_cases(rng: np.random.Generator) -> Dict[str, Tuple[ValueGrad, np.ndarray]]:
    scheme = builtin_300w()
    truth = rng.uniform(10.0, 50.0, (scheme.n_points, 2))
    pred = truth + _coordinate_errors(rng, truth.shape)
    frame = direction_frame(scheme, truth, pred)
    lam = 2.0
    return {
        "l_1": (lambda p: _vg(l_n(p, truth, 1)), pred),
        "l_2": (lambda p: _vg(l_n(p, truth, 2)), pred),
        "smooth_l1": (lambda p: _vg(smooth_l1(p, truth)), pred),
        "adl_1": (lambda p: _vg(adl_n(p, truth, frame, ADLConfig(lam=lam, n=1))), pred),
        "adl_2": (lambda p: _vg(adl_n(p, truth, frame, ADLConfig(lam=lam, n=2))), pred),
        "smooth_adl1": (lambda p: _vg(smooth_adl1(p, truth, frame, ADLConfig(lam=lam))), pred),
    }


def _awing_case(rng: np.random.Generator) -> Tuple[ValueGrad, np.ndarray]:
    cfg = AWingConfig()
    truth = rng.uniform(0.0, 1.0, (3, 8, 8))
    pred = rng.uniform(0.0, 1.0, truth.shape)
    for _ in range(100):
        d = np.abs(pred - truth)
        bad = (np.abs(d - cfg.theta) < BRANCH_MARGIN) | (d < 1e-2)
        if not bad.any():
            break
        pred[bad] = rng.uniform(0.0, 1.0, int(bad.sum()))
    return (lambda y: _vg(awing(y, truth, cfg))), pred


def _soft_argmax_case(rng: np.random.Generator) -> Tuple[ValueGrad, np.ndarray]:
    geom = HeatmapGeometry(width=8, height=8)
    mask = rng.uniform(0.0, 1.0, (3, 8, 8))
    weights = rng.standard_normal((3, 2))
    h0 = rng.uniform(0.1, 1.0, mask.shape)

    def fn(h):
        result = decode(h, mask, geom)
        return float(np.sum(weights * result.points)), result.backward(weights)

    return fn, h0


def toy_scheme() -> LandmarkScheme:
    """Four landmarks on an open arc and a tail sharing landmark 2."""
    return LandmarkScheme(
        name="toy",
        n_points=4,
        edges=(EdgeDef("arc", (0, 1, 2)), EdgeDef("tail", (2, 3))),
        norm_spec=NormalizationSpec(inter_ocular=(0, 2), inter_pupil=((0,), (2,))),
    )


def _chain_case(rng: np.random.Generator, joint: bool) -> Tuple[ValueGrad, np.ndarray]:
    scheme = toy_scheme()
    geom = HeatmapGeometry(width=12, height=12)
    fit = FitConfig(lam=2.0, path="heatmap", supervise_attention=joint)

    for _ in range(100):
        targets = rng.uniform(3.0, 8.0, (scheme.n_points, 2))
        problem = heatmap_problem(targets, scheme, geom, fit)
        params = {"landmarks": rng.uniform(0.5, 1.5, (scheme.n_points,) + geom.shape)}
        if joint:
            params["point"] = rng.uniform(0.5, 1.5, (scheme.n_points,) + geom.shape)
            params["edge"] = rng.uniform(0.5, 1.5, (scheme.n_edges,) + geom.shape)
        r = np.linalg.norm(problem.decode(params).points - targets, axis=-1)
        if np.all(np.abs(r - 1.0) > BRANCH_MARGIN) and np.all(r > 1e-2):
            break

    keys = sorted(params)
    shapes = [params[k].shape for k in keys]
    sizes = [params[k].size for k in keys]
    flat = np.concatenate([params[k].ravel() for k in keys])

    def fn(x):
        parts = np.split(x, np.cumsum(sizes)[:-1])
        value, grads = problem.value_and_grad({k: p.reshape(s) for k, p, s in zip(keys, parts, shapes)})
        return value, np.concatenate([grads[k].ravel() for k in keys])

    return fn, flat


def run_gradcheck(
    seed: int = 0, tolerance: float = DEFAULT_TOLERANCE, only: Optional[List[str]] = None
) -> List[GradcheckResult]:
    """
    Run the gradient suite: coordinate losses, AWing, soft-argmax and the
    heatmap-path chain with a fixed and with a supervised mask.
    """
    rng = np.random.default_rng(seed)
    cases: Dict[str, Tuple[ValueGrad, np.ndarray]] = dict(_coordinate_cases(rng))
    cases["awing"] = _awing_case(rng)
    cases["soft_argmax"] = _soft_argmax_case(rng)
    cases["heatmap_chain"] = _chain_case(rng, joint=False)
    cases["heatmap_chain_joint"] = _chain_case(rng, joint=True)

    results = []
    for name, (fn, x) in cases.items():
        if only and name not in only:
            continue
        results.append(check_gradient(name, fn, x, rng, tolerance))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning("gradient check failed for: %s", ", ".join(failed))
    return results


CASE_NAMES = (
    "l_1",
    "l_2",
    "smooth_l1",
    "adl_1",
    "adl_2",
    "smooth_adl1",
    "awing",
    "soft_argmax",
    "heatmap_chain",
    "heatmap_chain_joint",
)
