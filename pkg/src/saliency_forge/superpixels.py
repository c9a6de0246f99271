"""SLIC superpixel segmentation used by the IROF metric.

K-means-style iteration in combined color+position space. Three-channel
images are compared in CIELAB; single-channel images use raw intensity.
The iteration count is fixed at 10 for determinism and bounded runtime.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttributionMap, ImageTensor, RngSeed
from .errors import ValidationError

SLIC_ITERATIONS = 10

DEFAULT_SEGMENTS = 60
DEFAULT_COMPACTNESS = 10.0

# sRGB (D65) to XYZ.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class SuperpixelSegmentation:
    """Label grid H x W with labels exactly {0, ..., n_segments - 1}."""

    labels: np.ndarray
    n_segments: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels, dtype=np.int64)
        if arr.ndim != 2:
            raise ValidationError(f"labels must be H x W, got shape {arr.shape}")
        present = np.unique(arr)
        expected = np.arange(self.n_segments)
        if present.shape != expected.shape or not np.all(present == expected):
            raise ValidationError(
                f"labels must be exactly 0..{self.n_segments - 1}, got {present}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape  # type: ignore[return-value]


def _rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB in [0,1], shape (H, W, 3) -> CIELAB."""
    srgb = np.clip(rgb, 0.0, 1.0)
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T / _WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _feature_image(image: ImageTensor) -> np.ndarray:
    """(H, W, F) color features: Lab for RGB, raw intensity for grayscale."""
    data = np.moveaxis(image.data, 0, -1)
    if data.shape[-1] == 3:
        return _rgb_to_lab(data)
    return data.astype(np.float64)


def _gradient_magnitude(feat: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(feat, axis=(0, 1))
    return (gy**2 + gx**2).sum(axis=-1)


def _init_centers(feat: np.ndarray, k: int) -> np.ndarray:
    """Regular grid of ~k centers, each perturbed to the strictly
    lowest-gradient pixel in its 3x3 neighborhood (ties keep the grid
    position). Grid positions use pixel-center coordinates so assignment
    boundaries fall between pixels rather than on them."""
    h, w = feat.shape[:2]
    grid_h = min(h, max(1, round(np.sqrt(k * h / w))))
    grid_w = min(w, max(1, round(k / grid_h)))
    grad = _gradient_magnitude(feat)

    centers = []
    for i in range(grid_h):
        for j in range(grid_w):
            r = (i + 0.5) * h / grid_h - 0.5
            c = (j + 0.5) * w / grid_w - 0.5
            ri = min(h - 1, max(0, round(r)))
            ci = min(w - 1, max(0, round(c)))
            best = (r, c)
            best_g = grad[ri, ci]
            for rr in range(max(0, ri - 1), min(h, ri + 2)):
                for cc in range(max(0, ci - 1), min(w, ci + 2)):
                    if grad[rr, cc] < best_g:
                        best = (float(rr), float(cc))
                        best_g = grad[rr, cc]
            centers.append(best)
    return np.array(centers, dtype=np.float64)


def slic(
    image: ImageTensor,
    k: int = DEFAULT_SEGMENTS,
    compactness: float = DEFAULT_COMPACTNESS,
    seed: RngSeed = 0,
) -> SuperpixelSegmentation:
    """Segment `image` into roughly `k` superpixels.

    Distance between a pixel and a center is
    sqrt(d_color**2 + (d_xy / S)**2 * compactness**2) with
    S = sqrt(H*W/k). The algorithm itself is deterministic; the seed is
    accepted for interface uniformity. Resulting segment count may differ
    slightly from `k`.
    """
    h, w = image.spatial_shape
    if not 1 <= k <= h * w:
        raise ValidationError(f"k must be in [1, {h * w}], got {k}")
    if not compactness > 0:
        raise ValidationError(f"compactness must be positive, got {compactness}")

    feat = _feature_image(image)
    spacing = np.sqrt(h * w / k)
    centers_pos = _init_centers(feat, k)
    ri = np.clip(np.round(centers_pos[:, 0]).astype(int), 0, h - 1)
    ci = np.clip(np.round(centers_pos[:, 1]).astype(int), 0, w - 1)
    centers_color = feat[ri, ci].copy()

    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    ratio = (compactness / spacing) ** 2

    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(SLIC_ITERATIONS):
        dist = np.full((h, w), np.inf)
        labels.fill(-1)
        for idx in range(len(centers_pos)):
            cr, cc = centers_pos[idx]
            r0, r1 = max(0, int(cr - 2 * spacing)), min(h, int(cr + 2 * spacing) + 1)
            c0, c1 = max(0, int(cc - 2 * spacing)), min(w, int(cc + 2 * spacing) + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            window = feat[r0:r1, c0:c1]
            d_color = ((window - centers_color[idx]) ** 2).sum(axis=-1)
            d_xy = (rows[r0:r1] - cr) ** 2 + (cols[:, c0:c1] - cc) ** 2
            d = d_color + d_xy * ratio
            patch = dist[r0:r1, c0:c1]
            better = d < patch
            patch[better] = d[better]
            labels[r0:r1, c0:c1][better] = idx

        # Pixels outside every search window: nearest center spatially.
        missing = labels < 0
        if missing.any():
            mr, mc = np.nonzero(missing)
            d_sp = (mr[:, None] - centers_pos[None, :, 0]) ** 2 + (
                mc[:, None] - centers_pos[None, :, 1]
            ) ** 2
            labels[mr, mc] = np.argmin(d_sp, axis=1)

        for idx in range(len(centers_pos)):
            mask = labels == idx
            if not mask.any():
                continue
            rr, cc = np.nonzero(mask)
            centers_pos[idx] = (rr.mean(), cc.mean())
            centers_color[idx] = feat[rr, cc].mean(axis=0)

    labels = _enforce_connectivity(labels)
    return SuperpixelSegmentation(labels=labels, n_segments=int(labels.max()) + 1)


def _connected_components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of equal-label regions, BFS in scan order."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    n_comp = 0
    stack: list[tuple[int, int]] = []
    for r in range(h):
        for c in range(w):
            if comp[r, c] >= 0:
                continue
            lab = labels[r, c]
            comp[r, c] = n_comp
            stack.append((r, c))
            while stack:
                rr, cc = stack.pop()
                for nr, nc in ((rr - 1, cc), (rr + 1, cc), (rr, cc - 1), (rr, cc + 1)):
                    if 0 <= nr < h and 0 <= nc < w and comp[nr, nc] < 0 and labels[nr, nc] == lab:
                        comp[nr, nc] = n_comp
                        stack.append((nr, nc))
            n_comp += 1
    return comp, n_comp


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Merge orphaned fragments into the largest adjacent segment.

    For each raw label the largest connected component keeps it; every
    other fragment is absorbed by the biggest neighboring main segment.
    The output labels are compact, 0-based, and each is 4-connected.
    """
    h, w = labels.shape
    comp, n_comp = _connected_components(labels)
    sizes = np.bincount(comp.ravel(), minlength=n_comp)
    comp_label = np.empty(n_comp, dtype=np.int64)
    comp_label[comp.ravel()] = labels.ravel()

    main_of_label: dict[int, int] = {}
    for cid in range(n_comp):
        lab = int(comp_label[cid])
        if lab not in main_of_label or sizes[cid] > sizes[main_of_label[lab]]:
            main_of_label[lab] = cid
    main_ids = set(main_of_label.values())

    # Segment id per pixel: main components keep theirs, orphans start
    # unassigned.
    out = np.full((h, w), -1, dtype=np.int64)
    for cid in main_ids:
        out[comp == cid] = cid
    seg_sizes = {cid: int(sizes[cid]) for cid in main_ids}

    orphans = [cid for cid in range(n_comp) if cid not in main_ids]
    # Deterministic order: by first pixel in scan order.
    first_pixel = np.full(n_comp, h * w, dtype=np.int64)
    flat = comp.ravel()
    for pos in range(flat.size - 1, -1, -1):
        first_pixel[flat[pos]] = pos
    orphans.sort(key=lambda cid: int(first_pixel[cid]))

    pixels_of = {cid: np.nonzero(comp == cid) for cid in orphans}
    pending = orphans
    while pending:
        deferred = []
        merged_any = False
        for cid in pending:
            rr, cc = pixels_of[cid]
            neighbor_segs: set[int] = set()
            for r, c in zip(rr, cc):
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < h and 0 <= nc < w and out[nr, nc] >= 0:
                        neighbor_segs.add(int(out[nr, nc]))
            if not neighbor_segs:
                deferred.append(cid)
                continue
            target = max(neighbor_segs, key=lambda s: (seg_sizes[s], -s))
            out[rr, cc] = target
            seg_sizes[target] += len(rr)
            merged_any = True
        if deferred and not merged_any:
            # Isolated cluster of orphans (no assigned segment anywhere
            # around): promote the largest to a segment of its own.
            keep = max(deferred, key=lambda cid: (int(sizes[cid]), -cid))
            rr, cc = pixels_of[keep]
            out[rr, cc] = keep
            seg_sizes[keep] = len(rr)
            deferred.remove(keep)
        pending = deferred

    # Relabel consecutively by first appearance in scan order.
    remap: dict[int, int] = {}
    final = np.empty(h * w, dtype=np.int64)
    for pos, seg in enumerate(out.ravel()):
        seg = int(seg)
        if seg not in remap:
            remap[seg] = len(remap)
        final[pos] = remap[seg]
    return final.reshape(h, w)


def segment_relevance(seg: SuperpixelSegmentation, attribution: AttributionMap) -> np.ndarray:
    """Mean attribution score inside each segment, indexed by label."""
    if seg.shape != attribution.shape:
        raise ValidationError(
            f"segmentation shape {seg.shape} does not match map shape {attribution.shape}"
        )
    flat_labels = seg.labels.ravel()
    flat_scores = attribution.scores.ravel()
    sums = np.bincount(flat_labels, weights=flat_scores, minlength=seg.n_segments)
    counts = np.bincount(flat_labels, minlength=seg.n_segments)
    return sums / counts
