"""
Pytest configuration and shared fixtures for the landmarkbias tests.
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from landmarkbias.fitlab import load_template
from landmarkbias.formats import AnnotationRecord, write_predictions, write_pts
from landmarkbias.gradcheck import toy_scheme
from landmarkbias.scheme import builtin_300w


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files."""
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scheme_300w():
    """The built-in 68-point scheme."""
    return builtin_300w()


@pytest.fixture
def small_scheme():
    """Four landmarks: an open arc 0-1-2 and a tail 2-3."""
    return toy_scheme()


@pytest.fixture
def template():
    """Canonical 68-point face in heatmap pixels."""
    return load_template()


@pytest.fixture
def face_image(template):
    """Canonical face in image pixels (stride 4)."""
    return template.coords * 4.0


@pytest.fixture
def face_pairs(face_image, rng):
    """Three annotated faces and predictions with a few pixels of noise, keyed by id."""
    annotations, predictions = {}, {}
    for n, face_id in enumerate(["face_b", "face_a", "face_c"]):
        truth = face_image + rng.normal(0.0, 1.0, face_image.shape) + n
        annotations[face_id] = truth
        predictions[face_id] = truth + rng.normal(0.0, 2.0, truth.shape)
    return annotations, predictions


@pytest.fixture
def landmark_files(temp_dir, face_pairs):
    """gt.jsonl, pred.jsonl and a gt_pts/ directory holding the same annotations."""
    annotations, predictions = face_pairs
    gt = write_predictions(temp_dir / "gt.jsonl", [AnnotationRecord(k, v) for k, v in annotations.items()])
    pred = write_predictions(
        temp_dir / "pred.jsonl", [AnnotationRecord(k, v) for k, v in predictions.items()]
    )
    pts_dir = temp_dir / "gt_pts"
    for k, v in annotations.items():
        write_pts(pts_dir / f"{k}.pts", v)
    return {"gt": gt, "pred": pred, "pts_dir": pts_dir}
