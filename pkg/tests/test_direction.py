"""
Tests for direction frames and error decomposition.
"""

import math

import numpy as np
import pytest

from landmarkbias.direction import (
    DirectionFrame,
    decompose_errors,
    direction_frame,
    normal_from_tangent,
    rotate_to_tangent,
)
from landmarkbias.exceptions import DimensionError
from landmarkbias.scheme import EdgeDef, LandmarkScheme, NormalizationSpec


def _line_scheme(n_points=3, edges=((0, 1, 2),)):
    return LandmarkScheme(
        name="line",
        n_points=n_points,
        edges=tuple(EdgeDef(f"e{k}", v) for k, v in enumerate(edges)),
        norm_spec=NormalizationSpec(inter_ocular=(0, 1), inter_pupil=((0,), (1,))),
    )


class TestRotation:
    def test_tangent_is_normal_rotated(self):
        n = np.array([0.0, -1.0])
        assert np.allclose(rotate_to_tangent(n), [-1.0, 0.0])
        assert np.allclose(normal_from_tangent(rotate_to_tangent(n)), n)


class TestDirectionFrame:
    def test_interior_point_from_second_difference(self):
        scheme = _line_scheme()
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        frame = direction_frame(scheme, truth, truth)
        assert np.allclose(frame.normal[1], [0.0, -1.0])
        assert np.allclose(frame.tangent[1], [-1.0, 0.0])
        assert not frame.degenerate[1]

    def test_frames_are_orthonormal(self, scheme_300w, template, rng):
        truth = template.coords + rng.normal(0, 0.5, template.coords.shape)
        frame = direction_frame(scheme_300w, truth, truth + 1.0)
        assert np.allclose(np.linalg.norm(frame.normal, axis=-1), 1.0)
        assert np.allclose(np.sum(frame.normal * frame.tangent, axis=-1), 0.0)
        assert frame.has_basis.all()

    def test_endpoints_use_adjacent_segment(self):
        scheme = _line_scheme()
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 1.0]])
        frame = direction_frame(scheme, truth, truth)
        assert np.allclose(frame.tangent[0], np.array([1.0, 1.0]) / math.sqrt(2.0))
        assert np.allclose(frame.tangent[2], [1.0, 0.0])
        assert np.allclose(rotate_to_tangent(frame.normal[2]), frame.tangent[2])

    def test_collinear_interior_is_degenerate(self):
        scheme = _line_scheme()
        truth = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        frame = direction_frame(scheme, truth, truth)
        assert frame.degenerate[1]
        # Falls back to the chord: tangent along x, normal perpendicular to it
        assert np.allclose(np.abs(frame.tangent[1]), [1.0, 0.0])
        assert np.allclose(np.abs(frame.normal[1]), [0.0, 1.0])

    def test_off_edge_landmark_follows_error(self):
        scheme = _line_scheme(n_points=4)
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [5.0, 5.0]])
        pred = truth.copy()
        pred[3] += [3.0, 4.0]
        frame = direction_frame(scheme, truth, pred)
        assert not frame.on_edge[3]
        assert np.allclose(frame.normal[3], [0.6, 0.8])
        assert np.allclose(frame.tangent[3], frame.normal[3])
        assert not frame.degenerate[3]

    def test_off_edge_zero_error_is_degenerate(self):
        scheme = _line_scheme(n_points=4)
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [5.0, 5.0]])
        frame = direction_frame(scheme, truth, truth)
        assert frame.degenerate[3]

    def test_vectorized_over_faces(self, scheme_300w, template, rng):
        faces = template.coords + rng.normal(0, 0.5, (3,) + template.coords.shape)
        batched = direction_frame(scheme_300w, faces, faces)
        single = direction_frame(scheme_300w, faces[1], faces[1])
        assert batched.normal.shape == (3, 68, 2)
        assert np.allclose(batched.normal[1], single.normal)

    def test_shape_mismatch(self, scheme_300w, template):
        with pytest.raises(DimensionError):
            direction_frame(scheme_300w, template.coords, template.coords[:10])


class TestDecomposeErrors:
    def test_projection_on_basis(self):
        scheme = _line_scheme()
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        pred = truth + np.array([[0.0, 0.0], [0.5, -2.0], [0.0, 0.0]])
        parts = decompose_errors(direction_frame(scheme, truth, pred), truth, pred)
        assert parts.e_normal[1] == pytest.approx(2.0)
        assert parts.e_tangent[1] == pytest.approx(-0.5)
        assert parts.e_norm[1] == pytest.approx(math.hypot(0.5, 2.0))

    def test_components_recover_magnitude(self, scheme_300w, template, rng):
        truth = template.coords
        pred = truth + rng.normal(0, 1.0, truth.shape)
        parts = decompose_errors(direction_frame(scheme_300w, truth, pred), truth, pred)
        assert np.allclose(parts.e_normal ** 2 + parts.e_tangent ** 2, parts.e_norm ** 2)

    def test_isotropic_split_without_basis(self):
        frame = DirectionFrame(
            normal=np.zeros((1, 2)),
            tangent=np.zeros((1, 2)),
            on_edge=np.array([False]),
            degenerate=np.array([False]),
        )
        parts = decompose_errors(frame, [[0.0, 0.0]], [[1.0, 1.0]])
        assert parts.e_normal[0] == pytest.approx(1.0)
        assert parts.e_tangent[0] == pytest.approx(1.0)


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


class TestFrameSymmetry:
    @pytest.mark.parametrize("seed", range(5))
    def test_rotating_the_face_rotates_the_frame(self, scheme_300w, template, seed):
        rng = np.random.default_rng(seed)
        truth = template.coords + rng.normal(0, 0.3, template.coords.shape)
        pred = truth + rng.normal(0, 1.0, truth.shape)
        rot = _rotation(rng.uniform(0, 2 * math.pi))
        frame = direction_frame(scheme_300w, truth, pred)
        turned = direction_frame(scheme_300w, truth @ rot.T, pred @ rot.T)
        assert np.allclose(turned.normal, frame.normal @ rot.T)
        assert np.allclose(turned.tangent, frame.tangent @ rot.T)
        assert np.array_equal(turned.degenerate, frame.degenerate)

        parts = decompose_errors(frame, truth, pred)
        turned_parts = decompose_errors(turned, truth @ rot.T, pred @ rot.T)
        assert np.allclose(turned_parts.e_normal, parts.e_normal)
        assert np.allclose(turned_parts.e_tangent, parts.e_tangent)

    @pytest.mark.parametrize("seed", range(5))
    def test_translation_leaves_the_frame_alone(self, scheme_300w, template, seed):
        rng = np.random.default_rng(seed)
        truth = template.coords + rng.normal(0, 0.3, template.coords.shape)
        pred = truth + rng.normal(0, 1.0, truth.shape)
        shift = rng.uniform(-50, 50, 2)
        frame = direction_frame(scheme_300w, truth, pred)
        moved = direction_frame(scheme_300w, truth + shift, pred + shift)
        assert np.allclose(moved.normal, frame.normal)
        assert np.allclose(moved.tangent, frame.tangent)

    def test_off_edge_frame_rotates_with_the_error(self):
        scheme = _line_scheme(n_points=4)
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [5.0, 5.0]])
        pred = truth + [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [3.0, 4.0]]
        rot = _rotation(0.7)
        turned = direction_frame(scheme, truth @ rot.T, pred @ rot.T)
        assert np.allclose(turned.normal[3], np.array([0.6, 0.8]) @ rot.T)
