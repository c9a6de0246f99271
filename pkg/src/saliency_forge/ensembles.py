"""Aggregation of attribution stacks: mean, variance, and RBM ensembles.

The RBM route treats an image's H*W pixels as training samples over N
visible units (one per baseline explanation) and reads the aggregate off
the per-pixel hidden posterior. The one-hidden-unit parametrization is
symmetric under complementation, so the posterior is identifiable only up
to a global flip; two policies resolve it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import AttributionMap, AttributionStack, ImageTensor, normalize_map, reduce_channels
from .errors import ValidationError
from .metrics import MetricSpec, is_improvement, metric_value
from .oracle import OracleEndpoint
from .rbm import RbmParams, TrainConfig, complement_params, hidden_posterior, train_cd

FLIP_POLICIES = ("flip_detection", "metric_optimization", "none")

ENSEMBLE_METHODS = ("mean", "variance", "rbm")

DEFAULT_EPSILON = 1e-6
DEFAULT_FLIP_FRACTION = 0.05


@dataclass(frozen=True)
class EnsembleConfig:
    method: str = "rbm"
    epsilon: float = DEFAULT_EPSILON
    rbm_train: TrainConfig = field(default_factory=TrainConfig)
    flip_policy: str = "flip_detection"
    flip_fraction: float = DEFAULT_FLIP_FRACTION
    include_original_image: bool = False

    def __post_init__(self) -> None:
        if self.method not in ENSEMBLE_METHODS:
            raise ValidationError(f"method must be one of {ENSEMBLE_METHODS}, got {self.method!r}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.flip_policy not in FLIP_POLICIES:
            raise ValidationError(
                f"flip_policy must be one of {FLIP_POLICIES}, got {self.flip_policy!r}"
            )
        if not 0.0 < self.flip_fraction <= 0.5:
            raise ValidationError(
                f"flip_fraction must lie in (0, 0.5], got {self.flip_fraction}"
            )


@dataclass(frozen=True)
class AggregatedMap:
    """Final ensemble output plus a per-run diagnostics record."""

    map: AttributionMap
    flipped: bool
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.map.normalized:
            raise ValidationError("aggregated map must be normalized")


def _require_ensemble_stack(stack: AttributionStack) -> None:
    if len(stack) < 2:
        raise ValidationError(f"ensemble operations need N >= 2 maps, got {len(stack)}")
    for i, m in enumerate(stack.maps):
        if not m.normalized:
            raise ValidationError(f"map {i} ({m.source!r}) is not normalized")


def _raw_stack(stack: AttributionStack) -> np.ndarray:
    return np.stack([m.scores for m in stack.maps])


def with_original_image(stack: AttributionStack) -> AttributionStack:
    """Append the channel-reduced, normalized input image as one more
    baseline explanation."""
    original = normalize_map(reduce_channels(stack.image.data, source="original_image"))
    return AttributionStack(maps=stack.maps + (original,), image=stack.image)


def mean_ensemble(stack: AttributionStack) -> AggregatedMap:
    """Pixel-wise arithmetic mean over the N maps."""
    _require_ensemble_stack(stack)
    raw = _raw_stack(stack).mean(axis=0)
    out = normalize_map(AttributionMap(scores=raw, source="mean"))
    return AggregatedMap(map=out, flipped=False, diagnostics={"n_maps": len(stack)})


def variance_ensemble(stack: AttributionStack, epsilon: float = DEFAULT_EPSILON) -> AggregatedMap:
    """Mean divided by the pixel-wise population standard deviation plus
    epsilon: pixels the explanations disagree on are attenuated."""
    _require_ensemble_stack(stack)
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    arr = _raw_stack(stack)
    raw = arr.mean(axis=0) / (arr.std(axis=0) + epsilon)
    out = normalize_map(AttributionMap(scores=raw, source="variance"))
    return AggregatedMap(
        map=out, flipped=False, diagnostics={"n_maps": len(stack), "epsilon": epsilon}
    )


def stack_to_samples(stack: AttributionStack) -> np.ndarray:
    """Sample matrix of shape (H*W, N): one row per pixel, one column per
    baseline explanation.

    Columns are canonically ordered by (source tag, content digest) so the
    RBM result is invariant to the stack's map order.
    """
    _require_ensemble_stack(stack)
    ordered = sorted(
        stack.maps,
        key=lambda m: (m.source, hashlib.sha256(m.scores.tobytes()).hexdigest()),
    )
    return np.stack([m.scores.ravel() for m in ordered], axis=1)


def _top_bottom_sets(scores: np.ndarray, k: int) -> tuple[set[int], set[int]]:
    flat = scores.ravel()
    idx = np.arange(flat.size)
    top = np.lexsort((idx, -flat))[:k]
    bottom = np.lexsort((idx, flat))[:k]
    return set(top.tolist()), set(bottom.tolist())


def flip_disagreement(
    candidate: AttributionMap, reference: AttributionMap, fraction: float = DEFAULT_FLIP_FRACTION
) -> tuple[int, int]:
    """(cross, agree) overlap counts between the top/bottom `fraction`
    pixel sets of candidate and reference."""
    if candidate.shape != reference.shape:
        raise ValidationError(
            f"candidate shape {candidate.shape} does not match reference {reference.shape}"
        )
    if not 0.0 < fraction <= 0.5:
        raise ValidationError(f"fraction must lie in (0, 0.5], got {fraction}")
    k = int(np.ceil(fraction * candidate.scores.size))
    top_c, bot_c = _top_bottom_sets(candidate.scores, k)
    top_r, bot_r = _top_bottom_sets(reference.scores, k)
    cross = len(top_c & bot_r) + len(bot_c & top_r)
    agree = len(top_c & top_r) + len(bot_c & bot_r)
    return cross, agree


def flip_detect(
    candidate: AttributionMap, reference: AttributionMap, fraction: float = DEFAULT_FLIP_FRACTION
) -> bool:
    """True when the candidate's extremes land on the reference's opposite
    extremes more often than on matching ones."""
    cross, agree = flip_disagreement(candidate, reference, fraction)
    return cross > agree


def apply_flip(attribution: AttributionMap) -> AttributionMap:
    """Invert importance: 1 - value per pixel. An involution on normalized
    maps (degenerate constant maps stay all-zero)."""
    if not attribution.normalized:
        raise ValidationError("apply_flip requires a normalized map")
    return normalize_map(
        AttributionMap(scores=1.0 - attribution.scores, source=attribution.source)
    )


def metric_optimize_flip(
    attribution: AttributionMap,
    image: ImageTensor,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    flipped: AttributionMap | None = None,
    seed: int = 0,
) -> AggregatedMap:
    """Evaluate the map and its flip under the chosen metric; keep the
    better one (unflipped wins ties)."""
    if flipped is None:
        flipped = apply_flip(attribution)
    value = metric_value(image, attribution, endpoint, spec, seed)
    value_flipped = metric_value(image, flipped, endpoint, spec, seed)
    use_flip = is_improvement(spec.kind, value_flipped, value)
    diagnostics = {
        "flip_policy": "metric_optimization",
        "metric": spec.kind,
        "metric_unflipped": value,
        "metric_flipped": value_flipped,
        "tie": value == value_flipped,
    }
    return AggregatedMap(
        map=flipped if use_flip else attribution, flipped=use_flip, diagnostics=diagnostics
    )


def finish_rbm_pipeline(
    params: RbmParams,
    stack: AttributionStack,
    config: EnsembleConfig,
    endpoint: OracleEndpoint | None = None,
    metric_spec: MetricSpec | None = None,
) -> AggregatedMap:
    """Turn trained RBM params into the final aggregated map.

    Both flip candidates are derived from the two symmetric
    parametrizations (exact logit negation), so either parametrization of
    the same trained RBM yields a bit-identical final map once a policy
    resolves the orientation.
    """
    h, w = stack.spatial_shape
    samples = stack_to_samples(stack)
    posterior = hidden_posterior(params, samples)[:, 0].reshape(h, w)
    posterior_flip = hidden_posterior(complement_params(params), samples)[:, 0].reshape(h, w)
    candidate = normalize_map(AttributionMap(scores=posterior, source="rbm"))
    candidate_flip = normalize_map(AttributionMap(scores=posterior_flip, source="rbm"))

    diagnostics: dict[str, Any] = {
        "n_maps": len(stack),
        "flip_policy": config.flip_policy,
        "train": {
            "learning_rate": config.rbm_train.learning_rate,
            "batch_size": config.rbm_train.batch_size,
            "n_iterations": config.rbm_train.n_iterations,
            "cd_steps": config.rbm_train.cd_steps,
            "seed": config.rbm_train.seed,
        },
    }

    if config.flip_policy == "none":
        return AggregatedMap(map=candidate, flipped=False, diagnostics=diagnostics)

    if config.flip_policy == "flip_detection":
        reference = mean_ensemble(stack).map
        cross, agree = flip_disagreement(candidate, reference, config.flip_fraction)
        flipped = cross > agree
        diagnostics["disagreement"] = {"cross": cross, "agree": agree}
        return AggregatedMap(
            map=candidate_flip if flipped else candidate,
            flipped=flipped,
            diagnostics=diagnostics,
        )

    if endpoint is None or metric_spec is None:
        raise ValidationError(
            "flip_policy 'metric_optimization' requires an oracle endpoint and a metric spec"
        )
    chosen = metric_optimize_flip(
        candidate,
        stack.image,
        endpoint,
        metric_spec,
        flipped=candidate_flip,
        seed=config.rbm_train.seed,
    )
    diagnostics.update(chosen.diagnostics)
    return AggregatedMap(map=chosen.map, flipped=chosen.flipped, diagnostics=diagnostics)


def rbm_aggregate(
    stack: AttributionStack,
    config: EnsembleConfig,
    endpoint: OracleEndpoint | None = None,
    metric_spec: MetricSpec | None = None,
) -> AggregatedMap:
    """Train one RBM (n = N visible, m = 1 hidden) on the pixel rows and
    emit the per-pixel hidden posterior, flip-resolved and normalized."""
    samples = stack_to_samples(stack)
    params = train_cd(samples, config.rbm_train, m=1)
    return finish_rbm_pipeline(params, stack, config, endpoint, metric_spec)


def aggregate(
    stack: AttributionStack,
    config: EnsembleConfig,
    endpoint: OracleEndpoint | None = None,
    metric_spec: MetricSpec | None = None,
) -> AggregatedMap:
    """Dispatch on config.method, honoring include_original_image."""
    if config.include_original_image:
        stack = with_original_image(stack)
    if config.method == "mean":
        return mean_ensemble(stack)
    if config.method == "variance":
        return variance_ensemble(stack, config.epsilon)
    return rbm_aggregate(stack, config, endpoint, metric_spec)
