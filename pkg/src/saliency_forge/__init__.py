"""Robust aggregation of feature-attribution maps via per-pixel RBM
ensembles, plus insertion/deletion and IROF evaluation metrics."""

from .core import (
    AttributionMap,
    AttributionStack,
    ImageTensor,
    add_noise_maps,
    make_noise_map,
    normalize_map,
    normalize_stack,
    reduce_channels,
)
from .ensembles import (
    AggregatedMap,
    EnsembleConfig,
    aggregate,
    apply_flip,
    flip_detect,
    mean_ensemble,
    metric_optimize_flip,
    rbm_aggregate,
    variance_ensemble,
)
from .io import load_stack, save_stack
from .metrics import (
    MetricSpec,
    PerturbationCurve,
    deletion_curve,
    evaluate_batch,
    insertion_curve,
    irof_score,
)
from .oracle import OracleEndpoint, OracleScore, check_health, make_stub, score_batch
from .rbm import RbmParams, TrainConfig, hidden_posterior, train_cd, visible_posterior
from .superpixels import SuperpixelSegmentation, segment_relevance, slic

__version__ = "0.1.0"

__all__ = [
    "AggregatedMap",
    "AttributionMap",
    "AttributionStack",
    "EnsembleConfig",
    "ImageTensor",
    "MetricSpec",
    "OracleEndpoint",
    "OracleScore",
    "PerturbationCurve",
    "RbmParams",
    "SuperpixelSegmentation",
    "TrainConfig",
    "add_noise_maps",
    "aggregate",
    "apply_flip",
    "check_health",
    "deletion_curve",
    "evaluate_batch",
    "flip_detect",
    "hidden_posterior",
    "insertion_curve",
    "irof_score",
    "load_stack",
    "make_noise_map",
    "make_stub",
    "mean_ensemble",
    "metric_optimize_flip",
    "normalize_map",
    "normalize_stack",
    "rbm_aggregate",
    "reduce_channels",
    "save_stack",
    "score_batch",
    "segment_relevance",
    "slic",
    "train_cd",
    "variance_ensemble",
    "visible_posterior",
]
