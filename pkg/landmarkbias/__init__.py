"""
📐 landmarkbias - Landmark geometry and directional error toolkit
=================================================================

Loss functions, heatmap math and evaluation metrics for facial landmark
alignment, built around the observation that landmark errors spread along the
facial boundary (tangent) more than across it (normal).

Features:
    • 📏 L1/L2, Smooth L1 and the anisotropic direction loss (ADL, Smooth ADL1)
    • 🔥 Point/edge heatmap targets, E2P transform, point-edge fusion, soft-argmax
    • 🎯 Adaptive wing loss and the holistic heatmap loss
    • 📊 NME, FR, AUC, directional NME, bias rate and per-edge reports
    • 🧪 Synthetic fitting lab reproducing the normal/tangent error bias
    • ✅ Finite-difference gradient checks for every analytic gradient
    • 🎨 Rich-powered CLI

Basic Usage:
    >>> from landmarkbias import builtin_300w, direction_frame, smooth_adl1, ADLConfig
    >>>
    >>> scheme = builtin_300w()
    >>> frame = direction_frame(scheme, truth, pred)
    >>> loss = smooth_adl1(pred, truth, frame, ADLConfig(lam=2.0))
    >>> print(loss.value, loss.grad.shape)

CLI Usage:
    $ landmarkbias scheme show --scheme 300w
    $ landmarkbias eval --gt gt.jsonl --pred pred.jsonl --report report.json
    $ landmarkbias bias-report --gt gt.jsonl --pred pred.jsonl --output scatter.csv
    $ landmarkbias fit --lambda 1 --lambda 2 --seeds 20 --output bias.json
    $ landmarkbias gradcheck
"""

# Package metadata
__version__ = "0.1.0"
__title__ = "landmarkbias"
__description__ = "📐 Anisotropic direction loss, point-edge heatmaps and directional landmark metrics"
__license__ = "MIT"

# Core imports
from .direction import DirectionFrame, ErrorDecomposition, decompose_errors, direction_frame
from .exceptions import (
    ConfigError,
    DegeneracyError,
    DimensionError,
    DivergenceError,
    DuplicateIdError,
    InputError,
    JoinError,
    LandmarkError,
    SchemeError,
    SchemeParseError,
    SchemeValidationError,
    UndefinedRateError,
)
from .heatmap import (
    Heatmap,
    HeatmapGeometry,
    apply_e2p,
    fuse_point_edge,
    gen_edge_heatmap,
    gen_point_heatmap,
    soft_argmax,
)
from .loss import (
    ADLConfig,
    AWingConfig,
    CompositeWeights,
    LossValueGrad,
    adl_n,
    awing,
    composite_loss,
    l_n,
    smooth_adl1,
    smooth_adl1_gap,
    smooth_l1,
)
from .metrics import (
    EvalReport,
    EvalSample,
    auc_ced,
    bias_rate,
    directional_nme,
    error_scatter,
    evaluate,
    failure_rate,
    nme,
    normalization_distance,
    per_edge_report,
)
from .scheme import (
    E2PMatrix,
    EdgeDef,
    LandmarkScheme,
    NormalizationSpec,
    PointSet,
    builtin_300w,
    dump_scheme,
    e2p_matrix,
    load_scheme,
)
from .shapes import FacePart, ShapeBasis, curve_basis, face_parts

# Public API
__all__ = [
    # Scheme and geometry
    "PointSet",
    "EdgeDef",
    "NormalizationSpec",
    "LandmarkScheme",
    "E2PMatrix",
    "builtin_300w",
    "e2p_matrix",
    "load_scheme",
    "dump_scheme",
    "DirectionFrame",
    "ErrorDecomposition",
    "direction_frame",
    "decompose_errors",
    # Shape spaces
    "FacePart",
    "ShapeBasis",
    "face_parts",
    "curve_basis",
    # Losses
    "ADLConfig",
    "AWingConfig",
    "CompositeWeights",
    "LossValueGrad",
    "l_n",
    "smooth_l1",
    "adl_n",
    "smooth_adl1",
    "smooth_adl1_gap",
    "awing",
    "composite_loss",
    # Heatmaps
    "HeatmapGeometry",
    "Heatmap",
    "gen_point_heatmap",
    "gen_edge_heatmap",
    "apply_e2p",
    "fuse_point_edge",
    "soft_argmax",
    # Metrics
    "EvalSample",
    "EvalReport",
    "nme",
    "directional_nme",
    "failure_rate",
    "auc_ced",
    "bias_rate",
    "normalization_distance",
    "per_edge_report",
    "error_scatter",
    "evaluate",
    # Exceptions
    "LandmarkError",
    "SchemeError",
    "SchemeParseError",
    "SchemeValidationError",
    "DimensionError",
    "ConfigError",
    "InputError",
    "DuplicateIdError",
    "JoinError",
    "DegeneracyError",
    "DivergenceError",
    "UndefinedRateError",
    # Utility functions
    "evaluate_predictions",
    "directional_bias",
    # Package info
    "__version__",
    "__title__",
    "__description__",
    "__license__",
]


def evaluate_predictions(predictions, annotations, scheme=None, norm="interocular", thresholds=(5.0, 10.0)):
    """
    Convenience function to evaluate id-keyed predictions against annotations.

    Args:
        predictions: Mapping of id to (n_points, 2) predicted coordinates
        annotations: Mapping of id to (n_points, 2) ground-truth coordinates
        scheme: Landmark scheme (defaults to the built-in 300W scheme)
        norm: "interocular" or "interpupil"
        thresholds: FR/AUC thresholds in percent

    Returns:
        EvalReport

    Raises:
        JoinError: If the two id sets differ

    Example:
        >>> from landmarkbias import evaluate_predictions
        >>> report = evaluate_predictions({"a": pred}, {"a": truth})
        >>> print(f"NME {report.nme:.2f}%, bias rate {report.bias_rate:.1f}%")
    """
    from .metrics import join_samples

    scheme = scheme or builtin_300w()
    samples = join_samples(predictions, annotations, scheme, norm)
    return evaluate(samples, scheme, thresholds=thresholds, norm=norm)


def directional_bias(pred, truth, scheme=None, norm="interocular"):
    """
    Convenience function returning (normal NME %, tangent NME %, bias rate %) for one face.

    The bias rate is None when the normal NME is zero.
    """
    from .metrics import make_sample

    scheme = scheme or builtin_300w()
    sample = make_sample("face", pred, truth, scheme, norm)
    normal, tangent = directional_nme(sample, direction_frame(scheme, sample.truth, sample.pred))
    try:
        rate = bias_rate(normal, tangent)
    except UndefinedRateError:
        rate = None
    return normal, tangent, rate
