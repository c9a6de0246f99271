"""Generate per-image attribution stacks in the manifest format the
aggregation core consumes.

One stack per image: a JSON manifest (schema_version 1) listing an NPY
image file, its label, and one NPY map per explainer with its source tag.
Written directly against the documented schema; the core package is not
imported.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import load_split
from .explainers import EXPLAINER_NAMES, GENERATORS, lime
from .model import DigitCnn

SCHEMA_VERSION = 1


def _save_npy(path: Path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, np.asarray(arr), version=(1, 0))


def _write_stack(
    directory: Path,
    image: np.ndarray,
    label: int,
    maps: list[tuple[str, np.ndarray]],
) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    _save_npy(directory / "stack_image.npy", image.astype(np.float64))
    entries = []
    for i, (source, scores) in enumerate(maps):
        fname = f"stack_map_{i:03d}.npy"
        _save_npy(directory / fname, scores.astype(np.float64))
        entries.append({"file": fname, "source": source, "normalized": False})
    h, w = image.shape[1:]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "attribution_stack",
        "shape": [h, w],
        "image": {"file": "stack_image.npy", "label": int(label)},
        "maps": entries,
    }
    (directory / "stack.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def generate_stacks(
    model: DigitCnn,
    out_dir: Path | str,
    count: int = 200,
    explainers: Sequence[str] = EXPLAINER_NAMES,
    lime_granularities: Sequence[int] | None = None,
    seed: int = 0,
) -> Path:
    """Write `count` test-image stacks and a dataset manifest.

    With `lime_granularities`, each stack instead holds one LIME map per
    requested superpixel count, tagged lime-<count>.
    """
    for name in explainers:
        if name not in GENERATORS:
            raise ValueError(f"unknown explainer {name!r}; choose from {sorted(GENERATORS)}")
    _, _, test_x, test_y = load_split()
    if not 1 <= count <= len(test_y):
        raise ValueError(f"count must be in [1, {len(test_y)}], got {count}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    rel_paths = []
    for i in range(count):
        image = test_x[i].astype(np.float64)
        label = int(test_y[i])
        maps: list[tuple[str, np.ndarray]] = []
        if lime_granularities:
            for k, granularity in enumerate(lime_granularities):
                scores = lime(
                    model, image, label, seed=int(seeds[i]) + k, n_segments=int(granularity)
                )
                maps.append((f"lime-{int(granularity)}", scores))
        else:
            for k, name in enumerate(explainers):
                scores = GENERATORS[name](model, image, label, seed=int(seeds[i]) + k)
                maps.append((name, scores))
        rel = f"img_{i:04d}"
        _write_stack(out / rel, image, label, maps)
        rel_paths.append(f"{rel}/stack.json")

    dataset = {
        "schema_version": SCHEMA_VERSION,
        "kind": "stack_dataset",
        "stacks": rel_paths,
    }
    (out / "dataset.json").write_text(json.dumps(dataset, indent=2, sort_keys=True) + "\n")
    return out / "dataset.json"
