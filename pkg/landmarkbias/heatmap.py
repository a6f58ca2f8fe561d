"""
Heatmap targets, point-edge attention and soft-argmax decoding.

Heatmaps are (C, H, W) float64 arrays. Pixel (ix, iy) sits at the continuous
heatmap coordinate (ix, iy), so a delta map decodes exactly to its pixel.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError, InputError
from .scheme import DEFAULT_STRIDE, E2PMatrix, LandmarkScheme, PointSet, PointsLike, as_coords

logger = logging.getLogger(__name__)

KINDS = ("point", "edge", "point_edge", "landmarks")

# Added to the masked mass before dividing in soft-argmax
SOFT_ARGMAX_EPS = 1e-8


@dataclass(frozen=True)
class HeatmapGeometry:
    """Grid size, image-to-heatmap stride and target widths."""

    width: int = 64
    height: int = 64
    stride: float = DEFAULT_STRIDE
    sigma_point: float = 1.5
    edge_width: float = 1.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.sigma_point <= 0 or self.edge_width <= 0:
            raise ConfigError("sigma_point and edge_width must be positive")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.width - 1) / 2.0, (self.height - 1) / 2.0])

    def pixel_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """x and y coordinates of every pixel center, each shaped (H, W)."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return xs.astype(np.float64), ys.astype(np.float64)

    def contains(self, coords: np.ndarray) -> np.ndarray:
        return (
            (coords[..., 0] >= 0)
            & (coords[..., 0] <= self.width - 1)
            & (coords[..., 1] >= 0)
            & (coords[..., 1] <= self.height - 1)
        )


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Multi-channel nonnegative grid with its geometry and role."""

    data: np.ndarray
    geometry: HeatmapGeometry
    kind: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1:] != self.geometry.shape:
            raise DimensionError(
                f"heatmap must have shape (C, {self.geometry.height}, {self.geometry.width}), "
                f"got {arr.shape}"
            )
        if self.kind not in KINDS:
            raise InputError(f"unknown heatmap kind: {self.kind}")
        if not np.all(np.isfinite(arr)):
            raise InputError("heatmap contains non-finite values")
        if np.any(arr < 0):
            raise InputError("heatmap contains negative values")
        object.__setattr__(self, "data", arr)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]


def _heatmap_coords(scheme: LandmarkScheme, truth: PointsLike, geom: HeatmapGeometry) -> np.ndarray:
    if isinstance(truth, PointSet):
        truth = truth.to_heatmap(geom.stride)
    coords = as_coords(truth, scheme.n_points, "truth")
    if coords.ndim != 2:
        raise DimensionError(f"expected one face of shape (n, 2), got {coords.shape}")
    return coords


def _peak_normalize(channel: np.ndarray) -> np.ndarray:
    peak = channel.max()
    return channel / peak if peak > 0 else channel


def gen_point_heatmap(scheme: LandmarkScheme, truth: PointsLike, geom: HeatmapGeometry) -> Heatmap:
    """
    One Gaussian channel per landmark with standard deviation geom.sigma_point.

    Channels of landmarks inside the grid are scaled to peak exactly 1.
    Image-unit PointSets are converted with geom.stride first.
    """
    coords = _heatmap_coords(scheme, truth, geom)
    xs, ys = geom.pixel_grid()
    dx = xs[None] - coords[:, 0, None, None]
    dy = ys[None] - coords[:, 1, None, None]
    data = np.exp(-(dx ** 2 + dy ** 2) / (2.0 * geom.sigma_point ** 2))
    for i in np.flatnonzero(geom.contains(coords)):
        data[i] = _peak_normalize(data[i])
    return Heatmap(data, geom, "point")


def polyline_distance_sq(xs: np.ndarray, ys: np.ndarray, vertices: np.ndarray, closed: bool) -> np.ndarray:
    """Squared Euclidean distance from every pixel to a piecewise-linear curve."""
    starts = vertices
    ends = np.roll(vertices, -1, axis=0)
    if not closed:
        starts, ends = starts[:-1], ends[:-1]

    px = np.stack([xs, ys], axis=-1)[..., None, :]
    seg = ends - starts
    length_sq = np.sum(seg ** 2, axis=-1)
    rel = px - starts
    safe = np.where(length_sq > 0, length_sq, 1.0)
    t = np.clip(np.sum(rel * seg, axis=-1) / safe, 0.0, 1.0)
    t = np.where(length_sq > 0, t, 0.0)
    nearest = starts + t[..., None] * seg
    return np.min(np.sum((px - nearest) ** 2, axis=-1), axis=-1)


def gen_edge_heatmap(scheme: LandmarkScheme, truth: PointsLike, geom: HeatmapGeometry) -> Heatmap:
    """
    One channel per edge: exp(-d^2 / 2w^2) with d the distance to the edge polyline.

    Closed edges include the wrap segment. Values are not rescaled, so an edge
    lying between pixel centers peaks below 1.
    """
    coords = _heatmap_coords(scheme, truth, geom)
    xs, ys = geom.pixel_grid()
    data = np.empty((scheme.n_edges,) + geom.shape)
    for j, edge in enumerate(scheme.edges):
        vertices = coords[list(edge.vertices)]
        d_sq = polyline_distance_sq(xs, ys, vertices, edge.closed)
        data[j] = np.exp(-d_sq / (2.0 * geom.edge_width ** 2))
    return Heatmap(data, geom, "edge")


def e2p_transform(edge_data: np.ndarray, mat: E2PMatrix) -> np.ndarray:
    """Per pixel Mat_E2P times the edge vector, on raw (n_edges, H, W) arrays."""
    if edge_data.shape[0] != mat.n_edges:
        raise DimensionError(
            f"edge heatmap has {edge_data.shape[0]} channels, E2P matrix expects {mat.n_edges}"
        )
    return np.einsum("pe,ehw->phw", mat.entries, edge_data)


def apply_e2p(edge_hm: Heatmap, mat: E2PMatrix) -> Heatmap:
    """Map edge channels to point channels. Points on several edges may exceed 1."""
    return Heatmap(e2p_transform(edge_hm.data, mat), edge_hm.geometry, "edge")


def fuse_point_edge(point_hm: Heatmap, edge_hm_p: Heatmap) -> Heatmap:
    """Elementwise product of the point and point-indexed edge heatmaps."""
    if point_hm.data.shape != edge_hm_p.data.shape:
        raise DimensionError(
            f"point heatmap {point_hm.data.shape} and edge heatmap {edge_hm_p.data.shape} differ"
        )
    return Heatmap(point_hm.data * edge_hm_p.data, point_hm.geometry, "point_edge")


@dataclass(frozen=True, eq=False)
class SoftArgmaxResult:
    """
    Decoded coordinates plus what the backward pass needs.

    Channels whose masked mass is zero decode to the grid center and are
    flagged in `degenerate`; they pass no gradient.
    """

    points: np.ndarray
    degenerate: np.ndarray
    landmarks: np.ndarray
    mask: np.ndarray
    mass: np.ndarray
    geometry: HeatmapGeometry

    def as_point_set(self) -> PointSet:
        return PointSet(self.points, unit="heatmap")

    def _pull(self, grad_points: np.ndarray) -> np.ndarray:
        # sum_c g_c (c(x, y) - P_c) / (sum M + eps), per channel and pixel
        g = np.asarray(grad_points, dtype=np.float64)
        if g.shape != self.points.shape:
            raise DimensionError(f"gradient shape {g.shape} differs from {self.points.shape}")
        xs, ys = self.geometry.pixel_grid()
        denom = (self.mass + SOFT_ARGMAX_EPS)[:, None, None]
        weight = (
            g[:, 0, None, None] * (xs[None] - self.points[:, 0, None, None])
            + g[:, 1, None, None] * (ys[None] - self.points[:, 1, None, None])
        ) / denom
        weight[self.degenerate] = 0.0
        return weight

    def backward(self, grad_points: np.ndarray) -> np.ndarray:
        """
        Vector-Jacobian product: gradient w.r.t. the landmark heatmap.

        dP_c/dH(x, y) = mask(x, y) (c(x, y) - P_c) / (sum M + eps).
        """
        return self.mask * self._pull(grad_points)

    def backward_mask(self, grad_points: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product w.r.t. the mask."""
        return self.landmarks * self._pull(grad_points)

    def jacobian(self) -> np.ndarray:
        """Full Jacobian dP/dH, shape (C, 2, H, W); channels are independent."""
        c = self.points.shape[0]
        jac = np.empty((c, 2) + self.geometry.shape)
        for axis in (0, 1):
            unit = np.zeros_like(self.points)
            unit[:, axis] = 1.0
            jac[:, axis] = self.backward(unit)
        return jac


def decode(landmarks: np.ndarray, mask: np.ndarray, geom: HeatmapGeometry) -> SoftArgmaxResult:
    """Soft-argmax on raw (C, H, W) arrays; see soft_argmax."""
    h = np.asarray(landmarks, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if h.shape != m.shape or h.shape[1:] != geom.shape:
        raise DimensionError(f"landmark heatmap {h.shape} and mask {m.shape} differ")
    if np.any(h < 0) or np.any(m < 0):
        raise InputError("soft-argmax inputs must be nonnegative")

    masked = h * m
    mass = masked.sum(axis=(1, 2))
    xs, ys = geom.pixel_grid()
    denom = mass + SOFT_ARGMAX_EPS
    points = np.stack(
        [(masked * xs).sum(axis=(1, 2)) / denom, (masked * ys).sum(axis=(1, 2)) / denom],
        axis=-1,
    )
    degenerate = mass <= 0
    if np.any(degenerate):
        logger.warning("soft-argmax: %d channel(s) carry no masked mass", int(degenerate.sum()))
        points[degenerate] = geom.center
    return SoftArgmaxResult(
        points=points, degenerate=degenerate, landmarks=h, mask=m, mass=mass, geometry=geom
    )


def soft_argmax(landmarks_hm: Heatmap, mask: Heatmap) -> SoftArgmaxResult:
    """
    Decode each channel of H_landmarks (x) mask to its expected pixel coordinate.

    Raises:
        DimensionError: If the two heatmaps differ in shape
        InputError: If either heatmap has a negative value
    """
    return decode(landmarks_hm.data, mask.data, landmarks_hm.geometry)
