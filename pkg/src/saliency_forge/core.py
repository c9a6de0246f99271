"""Data model for images and attribution maps, plus the normalization pipeline.

All array state is 64-bit float and frozen after construction; every
operation here is a pure function, and randomness is injected through
explicit integer seeds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Any value in [0, 2**64) is a valid seed; identical seeds give
# bit-identical stochastic outputs.
RngSeed = int

MAX_SEED = 2**64


def make_rng(seed: RngSeed) -> np.random.Generator:
    """Return a fresh generator owned by the caller."""
    if not isinstance(seed, (int, np.integer)):
        raise ValidationError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= int(seed) < MAX_SEED:
        raise ValidationError(f"seed must be in [0, 2**64), got {seed}")
    return np.random.default_rng(int(seed))


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64).copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageTensor:
    """A C x H x W image with values in [0, 1] and its target class index."""

    data: np.ndarray
    label: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValidationError(f"image must be C x H x W, got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3):
            raise ValidationError(f"channel count must be 1 or 3, got {c}")
        if h < 1 or w < 1:
            raise ValidationError(f"image dimensions must be positive, got {h}x{w}")
        if not np.all(np.isfinite(arr)):
            idx = np.argwhere(~np.isfinite(arr))[0]
            raise ValidationError(f"non-finite image value at index {tuple(int(v) for v in idx)}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")
        if not isinstance(self.label, (int, np.integer)):
            raise ValidationError("label must be an integer class index")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "label", int(self.label))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class AttributionMap:
    """One explainer's H x W importance grid for a single image."""

    scores: np.ndarray
    source: str
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"attribution map must be H x W, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"map dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            idx = np.argwhere(~np.isfinite(arr))[0]
            raise ValidationError(f"non-finite attribution value at index {tuple(int(v) for v in idx)}")
        if self.normalized:
            lo, hi = arr.min(), arr.max()
            degenerate = hi == 0.0 and lo == 0.0
            if not degenerate and (lo != 0.0 or hi != 1.0):
                raise ValidationError(
                    f"normalized map must span [0, 1] or be all zeros, got [{lo}, {hi}]"
                )
        if not isinstance(self.source, str) or not self.source:
            raise ValidationError("source tag must be a non-empty string")
        object.__setattr__(self, "scores", _freeze(arr))

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class AttributionStack:
    """N aligned attribution maps for one image; the ensemble input."""

    maps: tuple[AttributionMap, ...]
    image: ImageTensor

    def __post_init__(self) -> None:
        maps = tuple(self.maps)
        if len(maps) < 1:
            raise ValidationError("stack must contain at least one map")
        shape = self.image.spatial_shape
        for i, m in enumerate(maps):
            if m.shape != shape:
                raise ValidationError(
                    f"map {i} ({m.source!r}) has shape {m.shape}, image is {shape}"
                )
        object.__setattr__(self, "maps", maps)

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.image.spatial_shape


def normalize_map(attribution: AttributionMap) -> AttributionMap:
    """Clip negative scores to zero, then min-max scale to [0, 1].

    Constant maps collapse to all zeros instead of raising; noise maps and
    saturated explainers can legitimately degenerate, and downstream
    ensembles must tolerate them. Idempotent.
    """
    arr = np.clip(attribution.scores, 0.0, None)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        scaled = np.zeros_like(arr)
    else:
        scaled = (arr - lo) / (hi - lo)
    return AttributionMap(scores=scaled, source=attribution.source, normalized=True)


def reduce_channels(attr: np.ndarray, source: str = "reduced") -> AttributionMap:
    """Collapse a per-channel C x H x W attribution to H x W by channel mean."""
    arr = np.asarray(attr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"expected C x H x W grid, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"zero-size attribution grid: shape {arr.shape}")
    return AttributionMap(scores=arr.mean(axis=0), source=source)


def make_noise_map(shape: tuple[int, int], seed: RngSeed) -> AttributionMap:
    """Draw an H x W map of i.i.d. standard-normal noise."""
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise ValidationError(f"noise map shape must be positive, got {(h, w)}")
    rng = make_rng(seed)
    return AttributionMap(scores=rng.standard_normal((h, w)), source="noise")


def add_noise_maps(stack: AttributionStack, count: int, seed: RngSeed) -> AttributionStack:
    """Append `count` standard-normal noise maps to the stack.

    Noise maps are raw samples; they pass through the same normalize_map
    step as real maps further down the pipeline.
    """
    if count < 1:
        raise ValidationError(f"noise count must be positive, got {count}")
    child_seeds = np.random.SeedSequence(int(seed)).generate_state(count, dtype=np.uint64)
    noise = tuple(
        make_noise_map(stack.spatial_shape, int(s)) for s in child_seeds
    )
    return AttributionStack(maps=stack.maps + noise, image=stack.image)


def normalize_stack(stack: AttributionStack) -> AttributionStack:
    """Apply normalize_map to every map in the stack."""
    return AttributionStack(
        maps=tuple(normalize_map(m) for m in stack.maps), image=stack.image
    )
