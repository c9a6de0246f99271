import numpy as np
import pytest

from saliency_forge.core import AttributionMap, ImageTensor
from saliency_forge.errors import ValidationError
from saliency_forge.superpixels import (
    SuperpixelSegmentation,
    segment_relevance,
    slic,
)


def flood_fill_components(labels):
    """Independent 4-connectivity check via BFS."""
    h, w = labels.shape
    seen = np.zeros((h, w), dtype=bool)
    components = []
    for r in range(h):
        for c in range(w):
            if seen[r, c]:
                continue
            lab = labels[r, c]
            queue = [(r, c)]
            seen[r, c] = True
            member = []
            while queue:
                rr, cc = queue.pop()
                member.append((rr, cc))
                for nr, nc in ((rr - 1, cc), (rr + 1, cc), (rr, cc - 1), (rr, cc + 1)):
                    if 0 <= nr < h and 0 <= nc < w and not seen[nr, nc] and labels[nr, nc] == lab:
                        seen[nr, nc] = True
                        queue.append((nr, nc))
            components.append((lab, member))
    return components


def assert_valid_segmentation(seg: SuperpixelSegmentation):
    labels = seg.labels
    present = np.unique(labels)
    assert present[0] == 0 and present[-1] == seg.n_segments - 1
    assert len(present) == seg.n_segments
    counts = np.bincount(labels.ravel(), minlength=seg.n_segments)
    assert counts.min() >= 1
    assert counts.sum() == labels.size
    components = flood_fill_components(labels)
    assert len(components) == seg.n_segments  # every label is one 4-connected blob


def uniform_image(h=8, w=8, value=0.5):
    return ImageTensor(data=np.full((1, h, w), value), label=0)


class TestSlic:
    def test_uniform_image_four_blocks(self):
        seg = slic(uniform_image(8, 8), k=4)
        assert_valid_segmentation(seg)
        assert seg.n_segments == 4
        counts = np.bincount(seg.labels.ravel())
        assert counts.min() >= 12 and counts.max() <= 20  # near-equal blocks

    def test_single_segment(self):
        seg = slic(uniform_image(6, 9), k=1)
        assert seg.n_segments == 1
        assert np.all(seg.labels == 0)

    def test_two_tone_boundary_follows_color(self):
        data = np.zeros((1, 8, 8))
        data[:, :, 4:] = 1.0
        seg = slic(ImageTensor(data=data, label=0), k=2, compactness=0.1)
        assert_valid_segmentation(seg)
        assert seg.n_segments == 2
        # Color term dominates: the split coincides with the tone boundary.
        left = seg.labels[:, :4]
        right = seg.labels[:, 4:]
        assert len(np.unique(left)) == 1
        assert len(np.unique(right)) == 1
        assert left[0, 0] != right[0, 0]

    def test_determinism(self, rng):
        img = ImageTensor(data=rng.random((3, 12, 12)), label=0)
        a = slic(img, k=6, seed=5)
        b = slic(img, k=6, seed=5)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_k_out_of_range(self):
        with pytest.raises(ValidationError):
            slic(uniform_image(4, 4), k=0)
        with pytest.raises(ValidationError):
            slic(uniform_image(4, 4), k=17)

    def test_random_images_keep_invariants(self, rng):
        for _ in range(10):
            h, w = rng.integers(6, 20), rng.integers(6, 20)
            channels = 3 if rng.random() < 0.5 else 1
            img = ImageTensor(data=rng.random((channels, h, w)), label=0)
            seg = slic(img, k=int(rng.integers(1, 9)))
            assert_valid_segmentation(seg)

    def test_rgb_image(self, rng):
        img = ImageTensor(data=rng.random((3, 10, 10)), label=0)
        seg = slic(img, k=4)
        assert_valid_segmentation(seg)


class TestSegmentRelevance:
    def test_constant_map(self):
        seg = slic(uniform_image(8, 8), k=4)
        relevance = segment_relevance(
            seg, AttributionMap(scores=np.full((8, 8), 0.7), source="c")
        )
        np.testing.assert_allclose(relevance, 0.7)

    def test_single_segment_is_global_mean(self, rng):
        seg = slic(uniform_image(6, 6), k=1)
        scores = rng.random((6, 6))
        relevance = segment_relevance(seg, AttributionMap(scores=scores, source="m"))
        assert relevance[0] == pytest.approx(scores.mean())

    def test_matches_bruteforce_loops(self, rng):
        labels = rng.integers(0, 3, (8, 8))
        labels.flat[:3] = [0, 1, 2]  # keep all three labels present
        seg = SuperpixelSegmentation(labels=labels, n_segments=3)
        scores = rng.random((8, 8))
        relevance = segment_relevance(seg, AttributionMap(scores=scores, source="m"))
        for lab in range(3):
            values = [
                scores[r, c] for r in range(8) for c in range(8) if labels[r, c] == lab
            ]
            assert relevance[lab] == pytest.approx(sum(values) / len(values))

    def test_all_ones_map(self):
        seg = slic(uniform_image(8, 8), k=4)
        relevance = segment_relevance(
            seg, AttributionMap(scores=np.ones((8, 8)), source="m")
        )
        np.testing.assert_array_equal(relevance, np.ones(4))

    def test_shape_mismatch(self):
        seg = slic(uniform_image(8, 8), k=4)
        with pytest.raises(ValidationError):
            segment_relevance(seg, AttributionMap(scores=np.ones((4, 4)), source="m"))


def test_segmentation_label_invariant_enforced():
    with pytest.raises(ValidationError):
        SuperpixelSegmentation(labels=np.array([[0, 2], [0, 2]]), n_segments=3)


def test_segmentation_export(tmp_path):
    from saliency_forge.io import load_array, save_segmentation

    seg = slic(uniform_image(8, 8), k=4)
    save_segmentation(seg.labels, tmp_path / "labels.npy")
    loaded = load_array(tmp_path / "labels.npy")
    assert loaded.dtype == np.int64
    np.testing.assert_array_equal(loaded, seg.labels)
