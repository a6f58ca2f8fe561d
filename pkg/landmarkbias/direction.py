"""
Per-landmark normal/tangent frames and directional error decomposition.

For a landmark on an edge the normal is the normalized second difference of its
template neighbors, N = (p_pre + p_next - 2p) / |p_pre + p_next - 2p|, and the
tangent is T = S N with the skew-symmetric S = [[0, 1], [-1, 0]]. Landmarks that
sit on no edge use the unit error vector for both directions.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .scheme import (
    ROLE_END,
    ROLE_INTERIOR,
    ROLE_OFF_EDGE,
    ROLE_START,
    LandmarkScheme,
    PointsLike,
    as_coords,
)

SKEW = np.array([[0.0, 1.0], [-1.0, 0.0]])

# Magnitude below which a defining vector is treated as zero (declared units)
DEGENERACY_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class DirectionFrame:
    """Unit normal and tangent per landmark, with on-edge and degeneracy flags."""

    normal: np.ndarray
    tangent: np.ndarray
    on_edge: np.ndarray
    degenerate: np.ndarray

    @property
    def has_basis(self) -> np.ndarray:
        """Landmarks whose error is projected on an orthonormal (N, T) basis."""
        return self.on_edge & (np.linalg.norm(self.normal, axis=-1) > 0.5)


@dataclass(frozen=True, eq=False)
class ErrorDecomposition:
    """Signed normal/tangent error components and error magnitude per landmark."""

    e_normal: np.ndarray
    e_tangent: np.ndarray
    e_norm: np.ndarray


def rotate_to_tangent(normal: np.ndarray) -> np.ndarray:
    """T = S N."""
    return normal @ SKEW.T


def normal_from_tangent(tangent: np.ndarray) -> np.ndarray:
    """The unit normal N with S N = T."""
    return tangent @ SKEW


def _unit(v: np.ndarray):
    mag = np.linalg.norm(v, axis=-1)
    ok = mag >= DEGENERACY_EPS
    return v / np.where(ok, mag, 1.0)[..., None], ok


def direction_frame(scheme: LandmarkScheme, truth: PointsLike, pred: PointsLike) -> DirectionFrame:
    """
    Compute the direction frame of every landmark.

    Neighbors come from the ground truth (template adjacency); only landmarks that
    lie on no edge depend on the prediction. Open-curve endpoints use the single
    adjacent segment as tangent. A vanishing second difference falls back to the
    chord perpendicular and is flagged degenerate, as is a zero error on a
    landmark off every edge.

    Args:
        scheme: Landmark scheme providing the edge topology
        truth: Ground-truth points, shape (..., n_points, 2)
        pred: Predicted points, same shape as truth

    Returns:
        DirectionFrame with arrays shaped like the inputs

    Raises:
        DimensionError: If point counts or shapes disagree
    """
    t = as_coords(truth, scheme.n_points, "truth")
    p = as_coords(pred, scheme.n_points, "pred")
    if t.shape != p.shape:
        raise DimensionError(f"truth shape {t.shape} differs from pred shape {p.shape}")

    prev, nxt, role = scheme.neighbors
    normal = np.zeros_like(t)
    tangent = np.zeros_like(t)
    degenerate = np.zeros(t.shape[:-1], dtype=bool)

    idx = np.flatnonzero(role == ROLE_INTERIOR)
    if idx.size:
        hc, hp, hn = t[..., idx, :], t[..., prev[idx], :], t[..., nxt[idx], :]
        n_sec, ok = _unit(hp + hn - 2.0 * hc)
        t_chord, chord_ok = _unit(hn - hp)
        n_i = np.where(ok[..., None], n_sec, normal_from_tangent(t_chord))
        t_i = np.where(ok[..., None], rotate_to_tangent(n_sec), t_chord)
        collapsed = (~ok & ~chord_ok)[..., None]
        normal[..., idx, :] = np.where(collapsed, 0.0, n_i)
        tangent[..., idx, :] = np.where(collapsed, 0.0, t_i)
        degenerate[..., idx] = ~ok

    for which, seg_of in (
        (ROLE_START, lambda i: t[..., nxt[i], :] - t[..., i, :]),
        (ROLE_END, lambda i: t[..., i, :] - t[..., prev[i], :]),
    ):
        idx = np.flatnonzero(role == which)
        if idx.size:
            t_seg, ok = _unit(seg_of(idx))
            tangent[..., idx, :] = np.where(ok[..., None], t_seg, 0.0)
            normal[..., idx, :] = np.where(ok[..., None], normal_from_tangent(t_seg), 0.0)
            degenerate[..., idx] = ~ok

    idx = np.flatnonzero(role == ROLE_OFF_EDGE)
    if idx.size:
        e_unit, ok = _unit(p[..., idx, :] - t[..., idx, :])
        normal[..., idx, :] = np.where(ok[..., None], e_unit, 0.0)
        tangent[..., idx, :] = normal[..., idx, :]
        degenerate[..., idx] = ~ok

    on_edge = np.broadcast_to(role != ROLE_OFF_EDGE, degenerate.shape).copy()
    return DirectionFrame(normal=normal, tangent=tangent, on_edge=on_edge, degenerate=degenerate)


def decompose_errors(frame: DirectionFrame, truth: PointsLike, pred: PointsLike) -> ErrorDecomposition:
    """
    Project the errors e = pred - truth on the frame.

    Landmarks with an orthonormal basis get e_normal = N.e and e_tangent = T.e.
    Landmarks off every edge (and on-edge landmarks whose neighbors all coincide)
    split the error isotropically, e_normal = e_tangent = |e| / sqrt(2).

    Raises:
        DimensionError: If the frame and the points disagree in shape
    """
    t = as_coords(truth, name="truth")
    p = as_coords(pred, name="pred")
    if t.shape != p.shape or frame.normal.shape != t.shape:
        raise DimensionError(
            f"frame shape {frame.normal.shape}, truth shape {t.shape}, pred shape {p.shape}"
        )
    e = p - t
    e_norm = np.linalg.norm(e, axis=-1)
    basis = frame.has_basis
    iso = e_norm / math.sqrt(2.0)
    e_normal = np.where(basis, np.sum(frame.normal * e, axis=-1), iso)
    e_tangent = np.where(basis, np.sum(frame.tangent * e, axis=-1), iso)
    return ErrorDecomposition(e_normal=e_normal, e_tangent=e_tangent, e_norm=e_norm)
