"""Baseline attribution generators.

No explainer library is available on the package mirror, so the standard
formulations are implemented here directly on torch autograd (gradients,
integrated gradients, SmoothGrad, gradient-SHAP) plus a grid-superpixel
LIME-style surrogate. Each generator maps one (C, H, W) image to an H x W
score grid; deterministic given its seed.
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.linear_model import Ridge

from .model import DigitCnn

EXPLAINER_NAMES = (
    "lime",
    "guided_backprop",
    "integrated_gradients",
    "gradient_shap",
    "smoothgrad",
)


def _input_gradient(model: DigitCnn, image: torch.Tensor, target: int) -> torch.Tensor:
    x = image.unsqueeze(0).clone().requires_grad_(True)
    score = model(x)[0, target]
    score.backward()
    return x.grad[0]


def saliency(model: DigitCnn, image: np.ndarray, target: int, seed: int = 0) -> np.ndarray:
    """Absolute input gradient of the target logit."""
    grad = _input_gradient(model, torch.from_numpy(image.astype(np.float32)), target)
    return grad.abs().sum(dim=0).numpy().astype(np.float64)


def guided_backprop(model: DigitCnn, image: np.ndarray, target: int, seed: int = 0) -> np.ndarray:
    """Gradient with negative signals suppressed at every ReLU."""

    def clamp_grad(module, grad_input, grad_output):
        return (grad_input[0].clamp(min=0.0),)

    handles = [
        m.register_full_backward_hook(clamp_grad)
        for m in model.modules()
        if isinstance(m, torch.nn.ReLU)
    ]
    try:
        grad = _input_gradient(model, torch.from_numpy(image.astype(np.float32)), target)
    finally:
        for h in handles:
            h.remove()
    return grad.sum(dim=0).numpy().astype(np.float64)


def integrated_gradients(
    model: DigitCnn, image: np.ndarray, target: int, seed: int = 0, steps: int = 32
) -> np.ndarray:
    """Path integral of gradients from a zero baseline (midpoint rule)."""
    x = torch.from_numpy(image.astype(np.float32))
    total = torch.zeros_like(x)
    for i in range(steps):
        alpha = (i + 0.5) / steps
        total += _input_gradient(model, alpha * x, target)
    attribution = (x * total / steps).sum(dim=0)
    return attribution.numpy().astype(np.float64)


def smoothgrad(
    model: DigitCnn,
    image: np.ndarray,
    target: int,
    seed: int = 0,
    samples: int = 25,
    sigma: float = 0.15,
) -> np.ndarray:
    """Mean absolute gradient over Gaussian-perturbed copies."""
    rng = np.random.default_rng(seed)
    x = image.astype(np.float32)
    total = np.zeros(image.shape[1:], dtype=np.float64)
    for _ in range(samples):
        noisy = x + rng.normal(0, sigma, x.shape).astype(np.float32)
        grad = _input_gradient(model, torch.from_numpy(noisy), target)
        total += grad.abs().sum(dim=0).numpy()
    return total / samples


def gradient_shap(
    model: DigitCnn,
    image: np.ndarray,
    target: int,
    seed: int = 0,
    samples: int = 20,
) -> np.ndarray:
    """Expected gradients against random uniform-noise baselines."""
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(image.astype(np.float32))
    total = torch.zeros_like(x)
    for _ in range(samples):
        baseline = torch.from_numpy(rng.random(image.shape).astype(np.float32))
        alpha = float(rng.random())
        point = baseline + alpha * (x - baseline)
        grad = _input_gradient(model, point, target)
        total += grad * (x - baseline)
    return (total / samples).sum(dim=0).numpy().astype(np.float64)


def _grid_segments(h: int, w: int, n_segments: int) -> np.ndarray:
    """Near-square grid partition into at most n_segments cells."""
    n_segments = max(1, min(n_segments, h * w))
    rows = max(1, int(round(np.sqrt(n_segments * h / w))))
    cols = max(1, int(np.ceil(n_segments / rows)))
    rows = min(rows, h)
    cols = min(cols, w)
    r_idx = np.minimum((np.arange(h) * rows) // h, rows - 1)
    c_idx = np.minimum((np.arange(w) * cols) // w, cols - 1)
    return (r_idx[:, None] * cols + c_idx[None, :]).astype(np.int64)


def lime(
    model: DigitCnn,
    image: np.ndarray,
    target: int,
    seed: int = 0,
    n_segments: int = 32,
    n_samples: int | None = None,
) -> np.ndarray:
    """Local surrogate over grid superpixels.

    Random cells are switched to a zero baseline; a weighted ridge
    regression of the target probability on the on/off pattern gives one
    coefficient per cell, broadcast back to pixels.
    """
    c, h, w = image.shape
    segments = _grid_segments(h, w, n_segments)
    k = int(segments.max()) + 1
    if n_samples is None:
        n_samples = min(4 * k + 50, 600)
    rng = np.random.default_rng(seed)

    masks = rng.random((n_samples, k)) < 0.5
    masks[0] = True  # anchor the fully-on image
    batch = np.empty((n_samples, c, h, w), dtype=np.float32)
    pixel_on = masks[:, segments]  # (n_samples, h, w)
    batch[:] = image.astype(np.float32)[None]
    batch[~np.broadcast_to(pixel_on[:, None], batch.shape)] = 0.0

    with torch.no_grad():
        logits = model(torch.from_numpy(batch))
        scores = torch.softmax(logits, dim=1)[:, target].numpy().astype(np.float64)

    similarity = masks.mean(axis=1)  # fraction of cells kept
    weights = np.exp(-((1.0 - similarity) ** 2) / 0.25)
    surrogate = Ridge(alpha=1.0, fit_intercept=True)
    surrogate.fit(masks.astype(np.float64), scores, sample_weight=weights)
    return surrogate.coef_[segments]


GENERATORS = {
    "saliency": saliency,
    "guided_backprop": guided_backprop,
    "integrated_gradients": integrated_gradients,
    "smoothgrad": smoothgrad,
    "gradient_shap": gradient_shap,
    "lime": lime,
}
