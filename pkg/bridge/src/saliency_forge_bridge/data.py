"""MNIST-scale digit data for the bridge.

The sandbox cannot download MNIST, so the bundled scikit-learn handwritten
digits (8x8) stand in, upsampled to 16x16. Same domain, same protocol.
"""
from __future__ import annotations

import numpy as np
from sklearn.datasets import load_digits

IMAGE_SIZE = 16
N_CLASSES = 10
_SPLIT_SEED = 0
_N_TEST = 360


def _upsample(images: np.ndarray, factor: int = 2) -> np.ndarray:
    out = np.repeat(np.repeat(images, factor, axis=1), factor, axis=2)
    return out


def load_split() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(train_x, train_y, test_x, test_y); images are (N, 1, 16, 16) in [0, 1].

    The split is a fixed seeded shuffle, so every caller sees the same
    train/test partition.
    """
    digits = load_digits()
    images = _upsample(digits.images / 16.0)[:, None, :, :].astype(np.float32)
    labels = digits.target.astype(np.int64)
    order = np.random.default_rng(_SPLIT_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    return (
        images[_N_TEST:],
        labels[_N_TEST:],
        images[:_N_TEST],
        labels[:_N_TEST],
    )
