"""Attribution-quality metrics driven by a classifier oracle.

Deletion AUC (lower is better), insertion AUC (higher is better), and
IROF area-over-curve (higher is better). Each metric builds a monotone
perturbation schedule, scores every stage in one batched oracle request,
and integrates the resulting curve with the trapezoid rule.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .core import AttributionMap, ImageTensor, RngSeed, make_rng
from .errors import OracleUnavailableError, ProtocolError, ValidationError
from .oracle import OracleEndpoint, score_batch
from .superpixels import slic, segment_relevance

METRIC_KINDS = ("insertion", "deletion", "irof")
BASELINE_KINDS = ("black", "dataset_mean", "uniform_noise")
SCORE_MODES = ("probability", "normalized_probability")

HIGHER_IS_BETTER = {"insertion": True, "deletion": False, "irof": True}

METRIC_LABELS = {
    "insertion": "Insertion (IAUC)",
    "deletion": "Deletion (DAUC)",
    "irof": "IROF",
}


@dataclass(frozen=True)
class PerturbationCurve:
    """Monotone schedule of (fraction perturbed, oracle score) pairs."""

    points: tuple[tuple[float, float], ...]
    auc: float

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 2:
            raise ValidationError("curve needs at least two points")
        xs = np.array([p[0] for p in pts])
        if xs[0] != 0.0 or xs[-1] != 1.0:
            raise ValidationError("fractions must start at 0.0 and end at 1.0")
        if not np.all(np.diff(xs) > 0):
            raise ValidationError("fractions must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "PerturbationCurve":
        xs = np.array([p[0] for p in points], dtype=np.float64)
        ys = np.array([p[1] for p in points], dtype=np.float64)
        auc = float(np.trapezoid(ys, xs))
        return cls(points=tuple((float(x), float(y)) for x, y in points), auc=auc)


@dataclass(frozen=True)
class MetricSpec:
    """What to measure and how to perturb."""

    kind: str
    step_fraction: float = 0.01
    baseline: str = "black"
    irof_segments: int = 60
    slic_compactness: float = 10.0
    score_mode: str = "normalized_probability"

    def __post_init__(self) -> None:
        if self.kind not in METRIC_KINDS:
            raise ValidationError(f"metric kind must be one of {METRIC_KINDS}, got {self.kind!r}")
        if not 0.0 < self.step_fraction <= 1.0:
            raise ValidationError(f"step_fraction must lie in (0, 1], got {self.step_fraction}")
        if self.baseline not in BASELINE_KINDS:
            raise ValidationError(f"baseline must be one of {BASELINE_KINDS}, got {self.baseline!r}")
        if self.irof_segments < 1:
            raise ValidationError(f"irof_segments must be positive, got {self.irof_segments}")
        if self.score_mode not in SCORE_MODES:
            raise ValidationError(f"score_mode must be one of {SCORE_MODES}, got {self.score_mode!r}")


def _check_inputs(image: ImageTensor, attribution: AttributionMap) -> None:
    if attribution.shape != image.spatial_shape:
        raise ValidationError(
            f"map shape {attribution.shape} does not match image {image.spatial_shape}"
        )
    if not attribution.normalized:
        raise ValidationError("metric inputs must be normalized maps")


def _pixel_order(attribution: AttributionMap) -> np.ndarray:
    """Flat pixel indices by descending score; ties by ascending index."""
    flat = attribution.scores.ravel()
    return np.lexsort((np.arange(flat.size), -flat))


def _schedule(n_pixels: int, step_fraction: float) -> list[int]:
    """Cumulative perturbation counts, ending exactly at n_pixels."""
    per_step = step_fraction * n_pixels
    bounds: list[int] = []
    j = 1
    while True:
        k = min(n_pixels, int(np.ceil(j * per_step)))
        if not bounds or k > bounds[-1]:
            bounds.append(k)
        if k >= n_pixels:
            return bounds
        j += 1


def _baseline_canvas(image: ImageTensor, spec: MetricSpec, seed: RngSeed) -> np.ndarray:
    if spec.baseline == "black":
        return np.zeros_like(image.data)
    if spec.baseline == "dataset_mean":
        per_channel = image.data.mean(axis=(1, 2), keepdims=True)
        return np.broadcast_to(per_channel, image.data.shape).copy()
    rng = make_rng(seed)
    return rng.random(image.data.shape)


def _normalize_scores(raw: np.ndarray, divisor: float, mode: str) -> np.ndarray:
    if mode == "probability":
        return raw
    div = divisor if divisor > 0 else 1.0
    return np.clip(raw / div, 0.0, 1.0)


def _raw_scores(
    endpoint: OracleEndpoint, stages: list[np.ndarray], image: ImageTensor
) -> np.ndarray:
    batch = [ImageTensor(data=s, label=image.label) for s in stages]
    scores = score_batch(endpoint, batch, target_class=image.label)
    return np.array([s.probability for s in scores], dtype=np.float64)


def deletion_curve(
    image: ImageTensor,
    attribution: AttributionMap,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    seed: RngSeed = 0,
) -> PerturbationCurve:
    """Remove the most important pixels first; lower AUC = better map."""
    _check_inputs(image, attribution)
    order = _pixel_order(attribution)
    h, w = image.spatial_shape
    n = h * w
    bounds = _schedule(n, spec.step_fraction)
    baseline = _baseline_canvas(image, spec, seed)

    canvas = image.data.copy()
    flat_canvas = canvas.reshape(canvas.shape[0], -1)
    flat_base = baseline.reshape(baseline.shape[0], -1)
    stages = [canvas.copy()]
    prev = 0
    for k in bounds:
        sel = order[prev:k]
        flat_canvas[:, sel] = flat_base[:, sel]
        stages.append(canvas.copy())
        prev = k

    raw = _raw_scores(endpoint, stages, image)
    ys = _normalize_scores(raw, raw[0], spec.score_mode)
    xs = [0.0] + [k / n for k in bounds]
    return PerturbationCurve.from_points(list(zip(xs, ys)))


def insertion_curve(
    image: ImageTensor,
    attribution: AttributionMap,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    seed: RngSeed = 0,
) -> PerturbationCurve:
    """Insert the most important pixels into a baseline canvas; higher AUC
    = better map."""
    _check_inputs(image, attribution)
    order = _pixel_order(attribution)
    h, w = image.spatial_shape
    n = h * w
    bounds = _schedule(n, spec.step_fraction)

    canvas = _baseline_canvas(image, spec, seed)
    flat_canvas = canvas.reshape(canvas.shape[0], -1)
    flat_orig = image.data.reshape(image.data.shape[0], -1)
    stages = [canvas.copy()]
    prev = 0
    for k in bounds:
        sel = order[prev:k]
        flat_canvas[:, sel] = flat_orig[:, sel]
        stages.append(canvas.copy())
        prev = k

    raw = _raw_scores(endpoint, stages, image)
    # The final stage is the fully restored original; it anchors score
    # normalization for both modes ("divide by the unperturbed score").
    ys = _normalize_scores(raw, raw[-1], spec.score_mode)
    xs = [0.0] + [k / n for k in bounds]
    return PerturbationCurve.from_points(list(zip(xs, ys)))


def irof_curve(
    image: ImageTensor,
    attribution: AttributionMap,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    seed: RngSeed = 0,
) -> PerturbationCurve:
    """Remove whole superpixels in descending mean relevance, one per step."""
    _check_inputs(image, attribution)
    seg = slic(image, k=spec.irof_segments, compactness=spec.slic_compactness, seed=seed)
    relevance = segment_relevance(seg, attribution)
    order = np.lexsort((np.arange(seg.n_segments), -relevance))
    baseline = _baseline_canvas(image, spec, seed)

    canvas = image.data.copy()
    stages = [canvas.copy()]
    for label in order:
        mask = seg.labels == label
        canvas[:, mask] = baseline[:, mask]
        stages.append(canvas.copy())

    raw = _raw_scores(endpoint, stages, image)
    ys = _normalize_scores(raw, raw[0], spec.score_mode)
    xs = np.arange(seg.n_segments + 1) / seg.n_segments
    return PerturbationCurve.from_points(list(zip(xs, ys)))


def irof_score(
    image: ImageTensor,
    attribution: AttributionMap,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    seed: RngSeed = 0,
) -> float:
    """Area over the degradation curve: 1 - AUC. Higher = better."""
    return 1.0 - irof_curve(image, attribution, endpoint, spec, seed).auc


def metric_value(
    image: ImageTensor,
    attribution: AttributionMap,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    seed: RngSeed = 0,
) -> float:
    """The scalar the spec's kind reports: IAUC, DAUC, or IROF AOC."""
    if spec.kind == "insertion":
        return insertion_curve(image, attribution, endpoint, spec, seed).auc
    if spec.kind == "deletion":
        return deletion_curve(image, attribution, endpoint, spec, seed).auc
    return irof_score(image, attribution, endpoint, spec, seed)


def is_improvement(kind: str, candidate: float, incumbent: float) -> bool:
    """True when `candidate` strictly beats `incumbent` for this metric."""
    if kind not in METRIC_KINDS:
        raise ValidationError(f"unknown metric kind {kind!r}")
    if HIGHER_IS_BETTER[kind]:
        return candidate > incumbent
    return candidate < incumbent


@dataclass
class ReportRow:
    method: str
    metric: str
    mean: float
    std: float
    n: int
    incomplete: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "metric": self.metric,
            "mean": self.mean,
            "std": self.std,
            "n": self.n,
            "incomplete": self.incomplete,
        }


@dataclass
class EvalReport:
    """Per-method mean +/- std for each metric, Table-style."""

    rows: list[ReportRow]
    per_image: dict[str, dict[str, list[float | None]]]
    metadata: dict[str, Any] = field(default_factory=dict)
    curves: dict[str, dict[str, list[list[tuple[float, float]]]]] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "schema_version": 1,
            "rows": [r.to_dict() for r in self.rows],
            "per_image": self.per_image,
            "metadata": self.metadata,
        }
        if self.curves:
            payload["curves"] = self.curves
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["method,metric,mean,std,n,incomplete"]
        for r in self.rows:
            lines.append(f"{r.method},{r.metric},{r.mean:.6f},{r.std:.6f},{r.n},{r.incomplete}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        metrics = sorted({r.metric for r in self.rows}, key=METRIC_KINDS.index)
        methods = list(dict.fromkeys(r.method for r in self.rows))
        by_key = {(r.method, r.metric): r for r in self.rows}
        header = ["Method"] + [METRIC_LABELS[m] for m in metrics]
        table = [header]
        for method in methods:
            row = [method]
            for metric in metrics:
                r = by_key.get((method, metric))
                if r is None or r.n == 0:
                    row.append("-")
                else:
                    cell = f"{r.mean:.3f} ± {r.std:.3f}"
                    if r.incomplete:
                        cell += " (incomplete)"
                    row.append(cell)
            table.append(row)
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        lines = []
        for i, row in enumerate(table):
            lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _curve_for(
    img: ImageTensor,
    attribution: AttributionMap,
    endpoint: OracleEndpoint,
    spec: MetricSpec,
    seed: int,
) -> tuple[float, list[tuple[float, float]]]:
    if spec.kind == "insertion":
        curve = insertion_curve(img, attribution, endpoint, spec, seed)
        return curve.auc, list(curve.points)
    if spec.kind == "deletion":
        curve = deletion_curve(img, attribution, endpoint, spec, seed)
        return curve.auc, list(curve.points)
    curve = irof_curve(img, attribution, endpoint, spec, seed)
    return 1.0 - curve.auc, list(curve.points)


def evaluate_batch(
    images: Sequence[ImageTensor],
    maps_by_method: Mapping[str, Sequence[AttributionMap]],
    endpoint: OracleEndpoint,
    specs: Sequence[MetricSpec],
    seed: RngSeed = 0,
    collect_curves: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Score every method's maps under every metric spec.

    Oracle failures are recorded per image and flagged in the report
    rather than aborting the whole run. Distinct images may be evaluated
    concurrently (`workers`); results are deterministic either way.
    """
    images = list(images)
    if not images:
        raise ValidationError("evaluate_batch requires at least one image")
    for method, maps in maps_by_method.items():
        if len(maps) != len(images):
            raise ValidationError(
                f"method {method!r} has {len(maps)} maps for {len(images)} images"
            )
    image_seeds = np.random.SeedSequence(int(seed)).generate_state(len(images), dtype=np.uint64)

    def one_image(task) -> tuple[float | None, list[tuple[float, float]]]:
        img, attribution, spec, img_seed = task
        try:
            return _curve_for(img, attribution, endpoint, spec, int(img_seed))
        except (OracleUnavailableError, ProtocolError):
            return None, []

    rows: list[ReportRow] = []
    per_image: dict[str, dict[str, list[float | None]]] = {}
    curves: dict[str, dict[str, list[list[tuple[float, float]]]]] = {}
    for method, maps in maps_by_method.items():
        per_image[method] = {}
        curves[method] = {}
        for spec in specs:
            tasks = [
                (img, attribution, spec, img_seed)
                for img, attribution, img_seed in zip(images, maps, image_seeds)
            ]
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(one_image, tasks))
            else:
                outcomes = [one_image(t) for t in tasks]
            values = [v for v, _ in outcomes]
            ok = np.array([v for v in values if v is not None], dtype=np.float64)
            rows.append(
                ReportRow(
                    method=method,
                    metric=spec.kind,
                    mean=float(ok.mean()) if ok.size else float("nan"),
                    std=float(ok.std()) if ok.size else float("nan"),
                    n=int(ok.size),
                    incomplete=len(ok) != len(values),
                )
            )
            per_image[method][spec.kind] = values
            if collect_curves:
                curves[method][spec.kind] = [pts for _, pts in outcomes]
    report = EvalReport(rows=rows, per_image=per_image)
    if collect_curves:
        report.curves = curves
    return report
