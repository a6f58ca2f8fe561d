"""
Landmark topology: points, edges, adjacency and normalization distances.

This module defines the landmark scheme a face is annotated with, ships the
built-in 300W 68-point scheme and reads/writes the JSON scheme file grammar:

    {
        "name": "300w",
        "n_points": 68,
        "edges": [{"name": "...", "vertices": [0, 1, ...], "closed": false}, ...],
        "norm": {"inter_ocular": [36, 45], "inter_pupil": [[36, ...], [42, ...]]}
    }
"""

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    DimensionError,
    InputError,
    SchemeParseError,
    SchemeValidationError,
)

# Neighbor roles of a landmark inside the scheme's edge graph
ROLE_OFF_EDGE = 0
ROLE_INTERIOR = 1
ROLE_START = 2
ROLE_END = 3

UNITS = ("image", "heatmap")
DEFAULT_STRIDE = 4


@dataclass(frozen=True, eq=False)
class PointSet:
    """One face's 2D landmark coordinates in a declared unit."""

    coords: np.ndarray
    unit: str = "image"

    def __post_init__(self) -> None:
        arr = np.array(self.coords, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise DimensionError(f"point set must have shape (n, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("point set contains non-finite coordinates")
        if self.unit not in UNITS:
            raise InputError(f"unknown coordinate unit: {self.unit}")
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def to_heatmap(self, stride: float = DEFAULT_STRIDE) -> "PointSet":
        """Convert image-pixel coordinates to heatmap-pixel coordinates."""
        if self.unit == "heatmap":
            return self
        return PointSet(self.coords / stride, unit="heatmap")

    def to_image(self, stride: float = DEFAULT_STRIDE) -> "PointSet":
        """Convert heatmap-pixel coordinates to image-pixel coordinates."""
        if self.unit == "image":
            return self
        return PointSet(self.coords * stride, unit="image")


PointsLike = Union[PointSet, np.ndarray, Sequence[Sequence[float]]]


def as_coords(points: PointsLike, n_points: Optional[int] = None, name: str = "points") -> np.ndarray:
    """
    Return landmark coordinates as a float64 array of shape (..., n, 2).

    Raises:
        DimensionError: If the trailing shape is not (n, 2) or n differs from n_points
        InputError: If any coordinate is not finite
    """
    arr = points.coords if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] != 2:
        raise DimensionError(f"{name} must have shape (..., n, 2), got {arr.shape}")
    if n_points is not None and arr.shape[-2] != n_points:
        raise DimensionError(f"{name} has {arr.shape[-2]} points, expected {n_points}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class EdgeDef:
    """A named boundary curve through an ordered list of landmark indices."""

    name: str
    vertices: Tuple[int, ...]
    closed: bool = False

    def segments(self) -> List[Tuple[int, int]]:
        """Consecutive vertex pairs, including the wrap segment of closed edges."""
        pairs = list(zip(self.vertices[:-1], self.vertices[1:]))
        if self.closed:
            pairs.append((self.vertices[-1], self.vertices[0]))
        return pairs


@dataclass(frozen=True)
class NormalizationSpec:
    """Landmark indices defining the face-scale normalization distances."""

    inter_ocular: Tuple[int, int]
    inter_pupil: Tuple[Tuple[int, ...], Tuple[int, ...]]


@dataclass(frozen=True, eq=False)
class E2PMatrix:
    """Binary n_points x n_edges point-to-edge membership matrix."""

    entries: np.ndarray

    @property
    def n_points(self) -> int:
        return self.entries.shape[0]

    @property
    def n_edges(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, E2PMatrix) and np.array_equal(self.entries, other.entries)


@dataclass(frozen=True)
class LandmarkScheme:
    """Landmark count, edge topology and normalization spec of one annotation scheme."""

    name: str
    n_points: int
    edges: Tuple[EdgeDef, ...]
    norm_spec: NormalizationSpec

    def __post_init__(self) -> None:
        _validate(self)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge(self, name: str) -> EdgeDef:
        for edge in self.edges:
            if edge.name == name:
                return edge
        raise KeyError(name)

    def edge_points(self, index: int) -> np.ndarray:
        """Sorted unique landmark indices lying on edge `index`."""
        return np.array(sorted(set(self.edges[index].vertices)), dtype=np.intp)

    @cached_property
    def on_edge(self) -> np.ndarray:
        mask = np.zeros(self.n_points, dtype=bool)
        for edge in self.edges:
            mask[list(edge.vertices)] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def neighbors(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Template neighbors of every landmark.

        Each landmark takes its neighbors from the first edge that contains it. An
        endpoint of an open edge borrows the missing neighbor from another edge that
        starts or ends at the same landmark, which reconstructs closed loops written as
        two margins (eyes, lips).

        Returns:
            Tuple of (prev, next, role) arrays; missing neighbors are -1
        """
        prev = np.full(self.n_points, -1, dtype=np.intp)
        nxt = np.full(self.n_points, -1, dtype=np.intp)
        role = np.full(self.n_points, ROLE_OFF_EDGE, dtype=np.int8)

        for i in range(self.n_points):
            owner = next((j for j, e in enumerate(self.edges) if i in e.vertices), None)
            if owner is None:
                continue
            verts = self.edges[owner].vertices
            closed = self.edges[owner].closed
            k = verts.index(i)
            p = verts[k - 1] if k > 0 else (verts[-1] if closed else -1)
            q = verts[k + 1] if k < len(verts) - 1 else (verts[0] if closed else -1)
            if p < 0:
                p = self._continuation(i, owner, at_end=True, exclude=q)
            if q < 0:
                q = self._continuation(i, owner, at_end=False, exclude=p)

            prev[i], nxt[i] = p, q
            if p >= 0 and q >= 0:
                role[i] = ROLE_INTERIOR
            elif q >= 0:
                role[i] = ROLE_START
            else:
                role[i] = ROLE_END

        for arr in (prev, nxt, role):
            arr.setflags(write=False)
        return prev, nxt, role

    def _continuation(self, i: int, owner: int, at_end: bool, exclude: int) -> int:
        # Prefer edges continuing in the same direction, then reversed ones
        for want_last in (at_end, not at_end):
            for j, edge in enumerate(self.edges):
                if j == owner or edge.closed:
                    continue
                verts = edge.vertices
                if want_last and verts[-1] == i and verts[-2] != exclude:
                    return verts[-2]
                if not want_last and verts[0] == i and verts[1] != exclude:
                    return verts[1]
        return -1

    def to_document(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n_points": self.n_points,
            "edges": [
                {"name": e.name, "vertices": list(e.vertices), "closed": e.closed}
                for e in self.edges
            ],
            "norm": {
                "inter_ocular": list(self.norm_spec.inter_ocular),
                "inter_pupil": [list(g) for g in self.norm_spec.inter_pupil],
            },
        }


def _validate(scheme: LandmarkScheme) -> None:
    if not isinstance(scheme.n_points, int) or scheme.n_points < 1:
        raise SchemeValidationError(f"n_points must be a positive integer, got {scheme.n_points}")

    seen = set()
    for edge in scheme.edges:
        if edge.name in seen:
            raise SchemeValidationError("duplicate edge name", edge=edge.name)
        seen.add(edge.name)
        verts = edge.vertices
        if len(verts) < 2:
            raise SchemeValidationError("needs at least 2 vertices", edge=edge.name)
        for v in verts:
            if not 0 <= v < scheme.n_points:
                raise SchemeValidationError(
                    f"vertex {v} outside [0, {scheme.n_points})", edge=edge.name
                )
        for a, b in zip(verts[:-1], verts[1:]):
            if a == b:
                raise SchemeValidationError(f"immediate duplicate vertex {a}", edge=edge.name)
        if edge.closed and verts[0] == verts[-1]:
            raise SchemeValidationError(
                "closed edge must not repeat its first vertex", edge=edge.name
            )

    norm = scheme.norm_spec
    indices = list(norm.inter_ocular) + [i for g in norm.inter_pupil for i in g]
    for i in indices:
        if not 0 <= i < scheme.n_points:
            raise SchemeValidationError(f"normalization index {i} outside [0, {scheme.n_points})")
    left, right = norm.inter_pupil
    if not left or not right:
        raise SchemeValidationError("inter_pupil groups must be non-empty")
    if set(left) & set(right):
        raise SchemeValidationError("inter_pupil groups must be disjoint")


_TABLE_300W = (
    ("Face Contour", tuple(range(0, 17))),
    ("Right Eyebrow", tuple(range(17, 22))),
    ("Left Eyebrow", tuple(range(22, 27))),
    ("Nose Middle Line", tuple(range(27, 31))),
    ("Nose Bottom Line", tuple(range(31, 36))),
    ("Right Eye Superior Margin", (36, 37, 38, 39)),
    ("Right Eye Inferior Margin", (39, 40, 41, 36)),
    ("Left Eye Superior Margin", (42, 43, 44, 45)),
    ("Left Eye Inferior Margin", (45, 46, 47, 42)),
    ("Outer Lip Superior Margin", tuple(range(48, 55))),
    ("Outer Lip Inferior Margin", (54, 55, 56, 57, 58, 59, 48)),
    ("Inner Lip Superior Margin", tuple(range(60, 65))),
    ("Inner Lip Inferior Margin", (64, 65, 66, 67, 60)),
)


def builtin_300w() -> LandmarkScheme:
    """The 68-point 300W scheme with its 13 edges."""
    return LandmarkScheme(
        name="300w",
        n_points=68,
        edges=tuple(EdgeDef(name, verts, closed=False) for name, verts in _TABLE_300W),
        norm_spec=NormalizationSpec(
            inter_ocular=(36, 45),
            inter_pupil=(tuple(range(36, 42)), tuple(range(42, 48))),
        ),
    )


BUILTIN_SCHEMES = {"300w": builtin_300w}


def e2p_matrix(scheme: LandmarkScheme) -> E2PMatrix:
    """Binary matrix with entry (i, j) = 1 iff point i lies on edge j."""
    entries = np.zeros((scheme.n_points, scheme.n_edges), dtype=np.float64)
    for j, edge in enumerate(scheme.edges):
        entries[list(edge.vertices), j] = 1.0
    entries.setflags(write=False)
    return E2PMatrix(entries)


_TOP_KEYS = {"name", "n_points", "edges", "norm"}
_EDGE_KEYS = {"name", "vertices", "closed"}
_NORM_KEYS = {"inter_ocular", "inter_pupil"}


def _require_keys(obj: Any, keys: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemeParseError("expected an object", field=where)
    unknown = set(obj) - keys
    if unknown:
        raise SchemeParseError(f"unknown fields {sorted(unknown)}", field=where)
    missing = keys - set(obj)
    if missing:
        raise SchemeParseError(f"missing fields {sorted(missing)}", field=where)


def _int_list(value: Any, where: str) -> Tuple[int, ...]:
    if not isinstance(value, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        raise SchemeParseError("expected a list of integers", field=where)
    return tuple(value)


def load_scheme(document: Union[str, bytes]) -> LandmarkScheme:
    """
    Parse a scheme document.

    Args:
        document: UTF-8 JSON text following the scheme file grammar

    Returns:
        Validated LandmarkScheme

    Raises:
        SchemeParseError: If the document is not valid JSON or breaks the grammar
        SchemeValidationError: If an index is out of range or an edge is malformed
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        raise SchemeParseError(f"invalid JSON: {e.msg}", line=e.lineno)

    _require_keys(data, _TOP_KEYS, "scheme")
    if not isinstance(data["name"], str):
        raise SchemeParseError("expected a string", field="name")
    if not isinstance(data["n_points"], int) or isinstance(data["n_points"], bool):
        raise SchemeParseError("expected an integer", field="n_points")
    if not isinstance(data["edges"], list):
        raise SchemeParseError("expected a list", field="edges")

    edges = []
    for k, raw in enumerate(data["edges"]):
        where = f"edges[{k}]"
        _require_keys(raw, _EDGE_KEYS, where)
        if not isinstance(raw["name"], str):
            raise SchemeParseError("expected a string", field=f"{where}.name")
        if not isinstance(raw["closed"], bool):
            raise SchemeParseError("expected a boolean", field=f"{where}.closed")
        edges.append(EdgeDef(raw["name"], _int_list(raw["vertices"], f"{where}.vertices"), raw["closed"]))

    norm = data["norm"]
    _require_keys(norm, _NORM_KEYS, "norm")
    ocular = _int_list(norm["inter_ocular"], "norm.inter_ocular")
    if len(ocular) != 2:
        raise SchemeParseError("expected exactly two indices", field="norm.inter_ocular")
    pupil = norm["inter_pupil"]
    if not isinstance(pupil, list) or len(pupil) != 2:
        raise SchemeParseError("expected two index groups", field="norm.inter_pupil")
    groups = tuple(_int_list(g, "norm.inter_pupil") for g in pupil)

    return LandmarkScheme(
        name=data["name"],
        n_points=data["n_points"],
        edges=tuple(edges),
        norm_spec=NormalizationSpec(inter_ocular=(ocular[0], ocular[1]), inter_pupil=groups),
    )


def dump_scheme(scheme: LandmarkScheme) -> str:
    """Serialize a scheme to canonical JSON (sorted keys, trailing newline)."""
    return json.dumps(scheme.to_document(), sort_keys=True, indent=2) + "\n"
