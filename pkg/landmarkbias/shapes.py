"""
Low-dimensional shape spaces for the synthetic learner.

Edges that share landmarks form one face part. A part whose edges chain into a
single path or loop deforms as a smooth curve: its x and y displacements are
polynomials of the template arc length along an open part and low Fourier
harmonics of it around a closed one. Parts that branch fall back to affine
modes, and a landmark on no edge moves freely.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

import numpy as np

from .exceptions import DimensionError
from .scheme import LandmarkScheme, PointsLike, as_coords

logger = logging.getLogger(__name__)

CURVE_DEGREE = 2
LOOP_HARMONICS = 2

# Relative singular value below which a mode adds nothing to its part
RANK_EPS = 1e-9


@dataclass(frozen=True)
class FacePart:
    """Landmarks of one connected group of edges, in walking order when chained."""

    indices: Tuple[int, ...]
    closed: bool
    chained: bool


def _components(scheme: LandmarkScheme) -> Tuple[List[Set[int]], Dict[int, Set[int]]]:
    adjacency: Dict[int, Set[int]] = {}
    for edge in scheme.edges:
        for a, b in edge.segments():
            if a == b:
                continue
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
        for v in edge.vertices:
            adjacency.setdefault(v, set())

    seen: Set[int] = set()
    components = []
    for start in sorted(adjacency):
        if start in seen:
            continue
        stack, group = [start], set()
        while stack:
            v = stack.pop()
            if v in group:
                continue
            group.add(v)
            stack.extend(adjacency[v] - group)
        seen |= group
        components.append(group)
    return components, adjacency


def _walk(group: Set[int], adjacency: Dict[int, Set[int]]) -> Tuple[Tuple[int, ...], bool]:
    ends = sorted(v for v in group if len(adjacency[v]) < 2)
    closed = not ends
    order = [ends[0] if ends else min(group)]
    while len(order) < len(group):
        options = sorted(adjacency[order[-1]] - set(order))
        if not options:
            break
        order.append(options[0])
    return tuple(order), closed


def face_parts(scheme: LandmarkScheme) -> Tuple[FacePart, ...]:
    """
    Split the scheme into connected edge groups plus one part per off-edge landmark.

    Parts are ordered by their smallest landmark index.
    """
    components, adjacency = _components(scheme)
    parts = []
    for group in components:
        degrees = [len(adjacency[v]) for v in group]
        if len(group) > 1 and max(degrees) <= 2:
            order, closed = _walk(group, adjacency)
            if len(order) == len(group):
                parts.append(FacePart(order, closed, True))
                continue
        parts.append(FacePart(tuple(sorted(group)), False, False))
    on_edge = set(adjacency)
    parts.extend(FacePart((i,), False, False) for i in range(scheme.n_points) if i not in on_edge)
    return tuple(sorted(parts, key=lambda p: min(p.indices)))


def _arc_length(points: np.ndarray, closed: bool) -> Tuple[np.ndarray, float]:
    chain = np.vstack([points, points[:1]]) if closed else points
    steps = np.linalg.norm(np.diff(chain, axis=0), axis=-1)
    cumulative = np.concatenate([[0.0], np.cumsum(steps)])
    return cumulative[: len(points)], float(cumulative[-1])


def _part_profiles(part: FacePart, points: np.ndarray, degree: int, harmonics: int) -> np.ndarray:
    """Scalar displacement profiles of one part, (n_part, n_profiles)."""
    if part.chained:
        s, total = _arc_length(points, part.closed)
        if total > 0:
            if part.closed:
                theta = 2.0 * math.pi * s / total
                columns = [np.ones_like(theta)]
                for h in range(1, harmonics + 1):
                    columns += [np.cos(h * theta), np.sin(h * theta)]
                return np.stack(columns, axis=-1)
            u = 2.0 * s / total - 1.0
            return np.stack([u ** d for d in range(degree + 1)], axis=-1)
    centered = points - points.mean(axis=0)
    return np.column_stack([np.ones(len(points)), centered])


@dataclass(frozen=True, eq=False)
class ShapeBasis:
    """
    Orthonormal displacement modes around a reference shape.

    modes has shape (n_points * 2, n_modes) with rows in coordinate order
    (x0, y0, x1, y1, ...); each column is supported on a single part.
    """

    reference: np.ndarray
    modes: np.ndarray
    parts: Tuple[FacePart, ...]

    @property
    def n_points(self) -> int:
        return self.reference.shape[0]

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    def displacement(self, coeffs: np.ndarray) -> np.ndarray:
        """(..., n_modes) coefficients to (..., n_points, 2) displacements."""
        c = np.asarray(coeffs, dtype=np.float64)
        return (c @ self.modes.T).reshape(c.shape[:-1] + (self.n_points, 2))

    def shape(self, coeffs: np.ndarray) -> np.ndarray:
        return self.reference + self.displacement(coeffs)

    def project(self, points: PointsLike) -> np.ndarray:
        """Least-squares coefficients of (..., n_points, 2) shapes."""
        coords = as_coords(points, self.n_points, "points")
        offset = (coords - self.reference).reshape(coords.shape[:-2] + (2 * self.n_points,))
        return offset @ self.modes

    def pull_back(self, grad: np.ndarray) -> np.ndarray:
        """Chain a (..., n_points, 2) coordinate gradient onto the coefficients."""
        g = np.asarray(grad, dtype=np.float64)
        return g.reshape(g.shape[:-2] + (2 * self.n_points,)) @ self.modes


def curve_basis(
    scheme: LandmarkScheme,
    reference: PointsLike,
    degree: int = CURVE_DEGREE,
    harmonics: int = LOOP_HARMONICS,
) -> ShapeBasis:
    """
    Per-part curve modes around `reference`, orthonormalized part by part.

    A part with no more landmarks than its mode budget moves freely.

    Raises:
        DimensionError: If the reference does not match the scheme
    """
    ref = as_coords(reference, scheme.n_points, "reference")
    if ref.ndim != 2:
        raise DimensionError(f"reference must have shape (n_points, 2), got {ref.shape}")

    parts = face_parts(scheme)
    blocks = []
    for part in parts:
        idx = np.array(part.indices)
        profiles = _part_profiles(part, ref[idx], degree, harmonics)
        n_prof = profiles.shape[1]
        local = np.zeros((len(idx), 2, 2 * n_prof))
        local[:, 0, 0::2] = profiles
        local[:, 1, 1::2] = profiles
        u, s, _ = np.linalg.svd(local.reshape(2 * len(idx), 2 * n_prof), full_matrices=False)
        keep = s > RANK_EPS * s[0]
        block = np.zeros((2 * scheme.n_points, int(keep.sum())))
        block[(2 * idx[:, None] + np.arange(2)).ravel()] = u[:, keep]
        blocks.append(block)

    modes = np.hstack(blocks)
    logger.debug(
        "curve basis: %d parts, %d modes for %d coordinates", len(parts), modes.shape[1], modes.shape[0]
    )
    return ShapeBasis(reference=ref.copy(), modes=modes, parts=parts)
