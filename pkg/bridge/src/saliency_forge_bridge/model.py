"""Small five-layer convolutional classifier for 16x16 digit images."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import IMAGE_SIZE, N_CLASSES, load_split


class DigitCnn(nn.Module):
    """Three conv layers plus two fully connected ones."""

    def __init__(self) -> None:
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(32 * (IMAGE_SIZE // 4) ** 2, 64),
            nn.ReLU(),
            nn.Linear(64, N_CLASSES),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(x))


def train_model(epochs: int = 8, seed: int = 0) -> tuple[DigitCnn, float]:
    """Train on the fixed digit split; returns (model in eval mode, test accuracy)."""
    torch.manual_seed(seed)
    train_x, train_y, test_x, test_y = load_split()
    model = DigitCnn()
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    x = torch.from_numpy(train_x)
    y = torch.from_numpy(train_y)

    rng = np.random.default_rng(seed)
    model.train()
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), 64):
            idx = order[start : start + 64]
            optimizer.zero_grad()
            loss = loss_fn(model(x[idx]), y[idx])
            loss.backward()
            optimizer.step()

    model.eval()
    with torch.no_grad():
        pred = model(torch.from_numpy(test_x)).argmax(dim=1).numpy()
    return model, float((pred == test_y).mean())


def save_model(model: DigitCnn, path: Path | str) -> None:
    torch.save(model.state_dict(), path)


def load_model(path: Path | str) -> DigitCnn:
    model = DigitCnn()
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model


def predict_probabilities(model: DigitCnn, images: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for a (B, C, H, W) float array."""
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)))
        return torch.softmax(logits, dim=1).numpy().astype(np.float64)
