"""
Landmark and heatmap losses with analytic gradients.

Coordinate losses take predictions and ground truth of shape (..., n_points, 2)
and report the mean over all landmarks; heatmap losses report the mean over all
pixels. Every loss returns a LossValueGrad whose gradient is taken with respect
to the prediction and already includes the mean reduction.
"""

import math
from dataclasses import dataclass
from typing import Any, Tuple, Union

import numpy as np

from .direction import DirectionFrame
from .exceptions import ConfigError, DimensionError, InputError
from .scheme import PointsLike, as_coords

LambdaLike = Union[float, np.ndarray]


@dataclass(frozen=True, eq=False)
class ADLConfig:
    """Anisotropic direction loss settings: exponent n and scalar or per-landmark lambda."""

    lam: LambdaLike = 2.0
    n: int = 1

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=np.float64)
        if lam.ndim > 1:
            raise ConfigError("lambda must be a scalar or a per-landmark vector")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.n not in (1, 2):
            raise ConfigError(f"n must be 1 or 2, got {self.n}")

    def weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """Normal and tangent weights (2 lambda / (1 + lambda), 2 / (1 + lambda))."""
        lam = np.asarray(self.lam, dtype=np.float64)
        return 2.0 * lam / (1.0 + lam), 2.0 / (1.0 + lam)


@dataclass(frozen=True)
class AWingConfig:
    """Adaptive wing loss hyperparameters."""

    omega: float = 14.0
    epsilon: float = 1.0
    alpha: float = 2.1
    theta: float = 0.5

    def __post_init__(self) -> None:
        for name in ("omega", "epsilon", "alpha", "theta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")

    def constants(self, truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-pixel A and C making both branches meet at |y - y_hat| = theta."""
        power = self.alpha - truth
        ratio = self.theta / self.epsilon
        a = (
            self.omega
            * (1.0 / (1.0 + ratio ** power))
            * power
            * ratio ** (power - 1.0)
            / self.epsilon
        )
        c = self.theta * a - self.omega * np.log1p(ratio ** power)
        return a, c


@dataclass(frozen=True)
class CompositeWeights:
    """Weights of the edge and point heatmap terms in the holistic loss."""

    alpha_edge: float = 10.0
    beta_point: float = 10.0

    def __post_init__(self) -> None:
        if self.alpha_edge < 0 or self.beta_point < 0:
            raise ConfigError("composite weights must be non-negative")


@dataclass(frozen=True, eq=False)
class LossValueGrad:
    """A loss value and its gradient with respect to the prediction."""

    value: float
    grad: Any


def _errors(pred: PointsLike, truth: PointsLike) -> np.ndarray:
    p = as_coords(pred, name="pred")
    t = as_coords(truth, name="truth")
    if p.shape != t.shape:
        raise DimensionError(f"pred shape {p.shape} differs from truth shape {t.shape}")
    return p - t


def _check_frame(frame: DirectionFrame, e: np.ndarray) -> None:
    if frame.normal.shape[-2:] != e.shape[-2:]:
        raise DimensionError(
            f"frame covers {frame.normal.shape[-2]} landmarks, errors cover {e.shape[-2]}"
        )


def _quadratic_form(e: np.ndarray, frame: DirectionFrame, cfg: ADLConfig):
    """
    q = a (N.e)^2 + b (T.e)^2 and its half-gradient Q e.

    Landmarks without an orthonormal basis use the isotropic split, which
    makes q = |e|^2 for every lambda.
    """
    a, b = cfg.weights()
    basis = frame.has_basis[..., None]
    en = np.sum(frame.normal * e, axis=-1)
    et = np.sum(frame.tangent * e, axis=-1)
    q_frame = a * en ** 2 + b * et ** 2
    qe_frame = (a * en)[..., None] * frame.normal + (b * et)[..., None] * frame.tangent
    q = np.where(basis[..., 0], q_frame, np.sum(e * e, axis=-1))
    qe = np.where(basis, qe_frame, e)
    return q, qe


def _reduce(per: np.ndarray, grad: np.ndarray) -> LossValueGrad:
    count = per.size
    return LossValueGrad(value=float(np.mean(per)), grad=grad / count)


def l_n(pred: PointsLike, truth: PointsLike, n: int = 2) -> LossValueGrad:
    """Mean |p - p_hat|^n over landmarks."""
    if n not in (1, 2):
        raise ConfigError(f"n must be 1 or 2, got {n}")
    e = _errors(pred, truth)
    r = np.linalg.norm(e, axis=-1)
    if n == 2:
        return _reduce(r ** 2, 2.0 * e)
    safe = np.where(r > 0, r, 1.0)[..., None]
    return _reduce(r, np.where(r[..., None] > 0, e / safe, 0.0))


def smooth_l1(pred: PointsLike, truth: PointsLike) -> LossValueGrad:
    """0.5 |e|^2 inside the unit disc, |e| - 0.5 outside."""
    e = _errors(pred, truth)
    r = np.linalg.norm(e, axis=-1)
    inner = r < 1.0
    per = np.where(inner, 0.5 * r ** 2, r - 0.5)
    safe = np.where(inner, 1.0, r)[..., None]
    grad = np.where(inner[..., None], e, e / safe)
    return _reduce(per, grad)


def adl_n(pred: PointsLike, truth: PointsLike, frame: DirectionFrame, cfg: ADLConfig) -> LossValueGrad:
    """
    Anisotropic direction loss ADL_n.

    The frame is a constant projection basis; no gradient flows through it.
    """
    e = _errors(pred, truth)
    _check_frame(frame, e)
    q, qe = _quadratic_form(e, frame, cfg)
    if cfg.n == 2:
        return _reduce(q, 2.0 * qe)
    root = np.sqrt(q)
    safe = np.where(root > 0, root, 1.0)[..., None]
    return _reduce(root, np.where(root[..., None] > 0, qe / safe, 0.0))


def smooth_adl1(pred: PointsLike, truth: PointsLike, frame: DirectionFrame, cfg: ADLConfig) -> LossValueGrad:
    """
    Smooth ADL1: 0.5 ADL_2 when |p - p_hat| < 1, ADL_1 - 0.5 otherwise.

    The branch is chosen on the raw error magnitude, so the loss jumps at
    |e| = 1 whenever lambda != 1 (see smooth_adl1_gap). At exactly |e| = 1 both
    the value and the gradient come from the outer branch. cfg.n is ignored.
    """
    e = _errors(pred, truth)
    _check_frame(frame, e)
    q, qe = _quadratic_form(e, frame, cfg)
    r = np.linalg.norm(e, axis=-1)
    root = np.sqrt(q)
    per = np.where(r < 1.0, 0.5 * q, root - 0.5)
    safe = np.where(root > 0, root, 1.0)[..., None]
    grad = np.where((r < 1.0)[..., None], qe, qe / safe)
    return _reduce(per, grad)


def smooth_adl1_gap(lam: float) -> float:
    """Largest jump of Smooth ADL1 across |e| = 1 over all error directions."""
    a, b = ADLConfig(lam=lam).weights()
    return float(max(0.5 * (math.sqrt(a) - 1.0) ** 2, 0.5 * (math.sqrt(b) - 1.0) ** 2))


def awing(pred: np.ndarray, truth: np.ndarray, cfg: AWingConfig = AWingConfig()) -> LossValueGrad:
    """
    Adaptive wing loss over heatmap pixels, mean-reduced.

    The exponent alpha - y_hat uses the ground-truth pixel value.

    Raises:
        DimensionError: If the two heatmaps differ in shape
        InputError: If a ground-truth value lies outside [0, 1]
    """
    y = np.asarray(pred, dtype=np.float64)
    y_hat = np.asarray(truth, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"pred shape {y.shape} differs from truth shape {y_hat.shape}")
    if np.any(y_hat < 0) or np.any(y_hat > 1) or not np.all(np.isfinite(y_hat)):
        raise InputError("ground-truth heatmap values must lie in [0, 1]")

    diff = y - y_hat
    d = np.abs(diff)
    power = cfg.alpha - y_hat
    a, c = cfg.constants(y_hat)
    inner = d < cfg.theta

    scaled = d / cfg.epsilon
    with np.errstate(divide="ignore", invalid="ignore"):
        lifted = scaled ** power
        per = np.where(inner, cfg.omega * np.log1p(lifted), a * d - c)
        slope_inner = cfg.omega * power * scaled ** (power - 1.0) / cfg.epsilon / (1.0 + lifted)
    slope_inner = np.where(d > 0, slope_inner, 0.0)
    slope = np.where(inner, slope_inner, a)
    return _reduce(per, slope * np.sign(diff))


def composite_loss(
    coord_term: LossValueGrad,
    awing_edge: LossValueGrad,
    awing_point: LossValueGrad,
    w: CompositeWeights = CompositeWeights(),
) -> LossValueGrad:
    """
    Holistic loss SmoothADL1 + alpha AWing_edge + beta AWing_point.

    The three terms differentiate with respect to different inputs, so the
    gradient is the tuple (coord, alpha * edge, beta * point).
    """
    value = coord_term.value + w.alpha_edge * awing_edge.value + w.beta_point * awing_point.value
    grad = (
        coord_term.grad,
        None if awing_edge.grad is None else w.alpha_edge * awing_edge.grad,
        None if awing_point.grad is None else w.beta_point * awing_point.grad,
    )
    return LossValueGrad(value=float(value), grad=grad)
