import numpy as np
import pytest

from saliency_forge.core import AttributionMap, AttributionStack, ImageTensor, normalize_map


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_image(rng):
    return ImageTensor(data=rng.random((1, 8, 8)), label=3)


@pytest.fixture
def rgb_image(rng):
    return ImageTensor(data=rng.random((3, 8, 8)), label=1)


def make_stack(rng, n_maps=3, shape=(8, 8), normalized=True, label=0):
    image = ImageTensor(data=rng.random((1,) + shape), label=label)
    maps = []
    for i in range(n_maps):
        m = AttributionMap(scores=rng.random(shape), source=f"explainer_{i}")
        maps.append(normalize_map(m) if normalized else m)
    return AttributionStack(maps=tuple(maps), image=image)


@pytest.fixture
def stack(rng):
    return make_stack(rng)
