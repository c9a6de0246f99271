"""NPY v1.0 array files plus JSON sidecar manifests.

Every persisted artifact is one array per .npy file and a manifest that
records file names, source tags, the image label and shape. Manifests
carry ``"schema_version": 1``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import AttributionMap, AttributionStack, ImageTensor
from .errors import StorageError, ValidationError

SCHEMA_VERSION = 1


def save_array(path: Path | str, arr: np.ndarray) -> None:
    """Write a single array as NPY format version 1.0."""
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            np.lib.format.write_array(fh, np.asarray(arr), version=(1, 0))
    except OSError as exc:
        raise StorageError(f"cannot write array to {path}: {exc}") from exc


def load_array(path: Path | str) -> np.ndarray:
    path = Path(path)
    try:
        return np.load(path, allow_pickle=False)
    except OSError as exc:
        raise StorageError(f"cannot read array from {path}: {exc}") from exc
    except ValueError as exc:
        raise StorageError(f"corrupt array file {path}: {exc}") from exc


def _write_manifest(path: Path, payload: dict[str, Any]) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write manifest {path}: {exc}") from exc


def _read_manifest(path: Path, expected_kind: str) -> dict[str, Any]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StorageError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise StorageError(f"manifest {path} must be a JSON object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise StorageError(
            f"manifest {path} has schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    kind = payload.get("kind")
    if kind != expected_kind:
        raise StorageError(f"manifest {path} has kind {kind!r}, expected {expected_kind!r}")
    return payload


def save_stack(stack: AttributionStack, path: Path | str) -> None:
    """Persist a stack as a manifest plus one NPY file per array.

    `path` is the manifest location (a .json file); arrays are written
    next to it, named from the manifest stem.
    """
    path = Path(path)
    if path.suffix != ".json":
        raise ValidationError(f"stack manifest path must end in .json, got {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem

    image_file = f"{stem}_image.npy"
    save_array(path.parent / image_file, stack.image.data)
    maps_entry = []
    for i, m in enumerate(stack.maps):
        map_file = f"{stem}_map_{i:03d}.npy"
        save_array(path.parent / map_file, m.scores)
        maps_entry.append({"file": map_file, "source": m.source, "normalized": m.normalized})

    h, w = stack.spatial_shape
    _write_manifest(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "attribution_stack",
            "shape": [h, w],
            "image": {"file": image_file, "label": stack.image.label},
            "maps": maps_entry,
        },
    )


def load_stack(path: Path | str) -> AttributionStack:
    """Load a stack saved by save_stack; round-trip is lossless for float64."""
    path = Path(path)
    payload = _read_manifest(path, "attribution_stack")
    try:
        shape = tuple(payload["shape"])
        image_entry = payload["image"]
        map_entries = payload["maps"]
    except KeyError as exc:
        raise StorageError(f"manifest {path} is missing field {exc}") from exc

    image = ImageTensor(
        data=load_array(path.parent / image_entry["file"]),
        label=int(image_entry["label"]),
    )
    maps = []
    for entry in map_entries:
        scores = load_array(path.parent / entry["file"])
        if scores.shape != shape or image.spatial_shape != shape:
            raise ValidationError(
                f"map {entry['file']} has shape {scores.shape}, manifest declares {shape}"
            )
        maps.append(
            AttributionMap(
                scores=scores,
                source=str(entry["source"]),
                normalized=bool(entry.get("normalized", False)),
            )
        )
    return AttributionStack(maps=tuple(maps), image=image)


def save_dataset(stack_paths: list[str], path: Path | str) -> None:
    """Write a dataset manifest listing per-image stack manifests."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "stack_dataset",
            "stacks": list(stack_paths),
        },
    )


def load_dataset(path: Path | str) -> list[Path]:
    """Return stack manifest paths (resolved relative to the dataset manifest)."""
    path = Path(path)
    payload = _read_manifest(path, "stack_dataset")
    stacks = payload.get("stacks")
    if not isinstance(stacks, list):
        raise StorageError(f"dataset manifest {path} is missing its stack list")
    return [path.parent / p for p in stacks]


def save_segmentation(labels: np.ndarray, path: Path | str) -> None:
    """Export a segmentation label grid as an integer array file."""
    save_array(path, np.asarray(labels, dtype=np.int64))
