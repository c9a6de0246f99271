"""Command-line entry point for reproducible aggregation/evaluation runs.

Configuration comes from one declarative YAML document; CLI flags
override file values, and the fully-resolved config is echoed into the
output directory together with the seed and a content hash of the
inputs, enough to re-run bit-identically.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import click
import numpy as np
import yaml

from . import io as sfio
from .core import AttributionMap, ImageTensor, add_noise_maps, normalize_stack
from .ensembles import EnsembleConfig, aggregate, finish_rbm_pipeline, stack_to_samples
from .errors import OracleUnavailableError, SaliencyForgeError
from .metrics import MetricSpec, evaluate_batch, is_improvement, metric_value
from .oracle import OracleEndpoint, StubOracleServer, check_health, make_stub
from .rbm import TrainConfig, train_cd

SEED_ENV_VAR = "SALIENCY_FORGE_SEED"

EXIT_VALIDATION = 2
EXIT_ORACLE = 3

RBM_PRESETS = {
    "mnist": {"batch_size": 5, "learning_rate": 0.01, "n_iterations": 100},
    "cifar": {"batch_size": 35, "learning_rate": 0.001, "n_iterations": 250},
    "imagenet": {"batch_size": 35, "learning_rate": 0.001, "n_iterations": 250},
}

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "workers": 1,
    "aggregate": {
        "methods": ["mean", "variance", "rbm"],
        "add_noise": 0,
        "include_original_image": False,
        "keep_baselines": False,
        "epsilon": 1e-6,
        "flip_policy": "flip_detection",
        "flip_fraction": 0.05,
        "metric": "deletion",
        "rbm": {
            "preset": None,
            "learning_rate": None,
            "batch_size": None,
            "n_iterations": None,
            "cd_steps": 1,
        },
    },
    "evaluate": {
        "metrics": ["insertion", "deletion", "irof"],
        "step_fraction": 0.01,
        "baseline": "black",
        "irof_segments": 60,
        "slic_compactness": 10.0,
        "score_mode": "normalized_probability",
    },
    "oracle": {
        "transport": "stub",
        "url": None,
        "stub_kind": "constant",
        "stub_value": 1.0,
        "stub_mask": None,
        "stub_baseline": 0.0,
        "timeout": 30.0,
        "max_batch": 32,
    },
}


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        payload = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        _fail(f"cannot read config file {path}: {exc}")
    if payload is None:
        return {}
    if not isinstance(payload, dict):
        _fail(f"config file {path} must hold a mapping")
    return payload


def _resolve_config(config_path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    cfg = _deep_merge(DEFAULTS, _load_config_file(config_path))
    cfg = _deep_merge(cfg, overrides)
    if cfg.get("seed") is None:
        env = os.environ.get(SEED_ENV_VAR)
        cfg["seed"] = int(env) if env else 0
    return cfg


def _fail(message: str, code: int = EXIT_VALIDATION) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _exit_on_errors(fn):
    """Map library failures to the documented exit codes: 3 for an
    unreachable oracle, 2 for any validation or input problem."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OracleUnavailableError as exc:
            _fail(f"oracle unavailable: {exc}", code=EXIT_ORACLE)
        except (SaliencyForgeError, OSError, json.JSONDecodeError) as exc:
            _fail(str(exc))

    return wrapper


def _parse_list(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def _input_hash(paths: list[Path]) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _hash_dataset(stack_paths: list[Path]) -> str:
    files: list[Path] = []
    for manifest in stack_paths:
        files.append(manifest)
        payload = json.loads(manifest.read_text())
        files.append(manifest.parent / payload["image"]["file"])
        files.extend(manifest.parent / m["file"] for m in payload["maps"])
    return _input_hash(files)


def _write_run_metadata(out_dir: Path, cfg: dict[str, Any], input_hash: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    meta = {
        "schema_versions": {"manifest": sfio.SCHEMA_VERSION, "report": 1},
        "seed": cfg["seed"],
        "input_hash": input_hash,
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _build_endpoint(cfg: dict[str, Any]) -> OracleEndpoint:
    ocfg = cfg["oracle"]
    if ocfg["transport"] == "network" or (ocfg["transport"] == "stub" and ocfg.get("url")):
        if not ocfg.get("url"):
            _fail("network oracle requires oracle.url / --oracle-url")
        return OracleEndpoint(
            transport="network",
            address=ocfg["url"],
            timeout=float(ocfg["timeout"]),
            max_batch=int(ocfg["max_batch"]),
        )
    params: dict[str, Any] = {}
    if ocfg["stub_kind"] == "constant":
        params["value"] = float(ocfg["stub_value"])
    else:
        if not ocfg.get("stub_mask"):
            _fail(f"stub kind {ocfg['stub_kind']!r} requires oracle.stub_mask (an NPY bool mask)")
        params["mask"] = sfio.load_array(ocfg["stub_mask"]).astype(bool)
        params["baseline"] = float(ocfg["stub_baseline"])
    endpoint = make_stub(ocfg["stub_kind"], params)
    return OracleEndpoint(
        transport="stub",
        stub_kind=endpoint.stub_kind,
        stub_params=endpoint.stub_params,
        timeout=float(ocfg["timeout"]),
        max_batch=int(ocfg["max_batch"]),
    )


def _check_oracle(endpoint: OracleEndpoint) -> None:
    try:
        check_health(endpoint)
    except (OracleUnavailableError, SaliencyForgeError) as exc:
        _fail(f"oracle unavailable: {exc}", code=EXIT_ORACLE)


def _metric_spec(cfg: dict[str, Any], kind: str) -> MetricSpec:
    ecfg = cfg["evaluate"]
    return MetricSpec(
        kind=kind,
        step_fraction=float(ecfg["step_fraction"]),
        baseline=ecfg["baseline"],
        irof_segments=int(ecfg["irof_segments"]),
        slic_compactness=float(ecfg["slic_compactness"]),
        score_mode=ecfg["score_mode"],
    )


def _train_config(cfg: dict[str, Any], seed: int) -> TrainConfig:
    rcfg = dict(cfg["aggregate"]["rbm"])
    preset = rcfg.get("preset")
    resolved = dict(RBM_PRESETS["cifar"])
    if preset:
        if preset not in RBM_PRESETS:
            _fail(f"unknown preset {preset!r}; choose from {sorted(RBM_PRESETS)}")
        resolved = dict(RBM_PRESETS[preset])
    for key in ("learning_rate", "batch_size", "n_iterations"):
        if rcfg.get(key) is not None:
            resolved[key] = rcfg[key]
    return TrainConfig(
        learning_rate=float(resolved["learning_rate"]),
        batch_size=int(resolved["batch_size"]),
        n_iterations=int(resolved["n_iterations"]),
        cd_steps=int(rcfg.get("cd_steps") or 1),
        seed=seed,
    )


def _load_stack_paths(input_path: str) -> list[Path]:
    path = Path(input_path)
    if not path.exists():
        _fail(f"input manifest {path} does not exist")
    payload = json.loads(path.read_text())
    kind = payload.get("kind")
    if kind == "attribution_stack":
        return [path]
    if kind == "stack_dataset":
        stacks = sfio.load_dataset(path)
        missing = [p for p in stacks if not p.exists()]
        if missing:
            _fail(f"dataset references missing stacks: {missing[:3]}")
        return stacks
    _fail(f"input manifest {path} has unsupported kind {kind!r}")
    raise AssertionError("unreachable")


def _per_image_seeds(seed: int, count: int, streams: int = 2) -> np.ndarray:
    return (
        np.random.SeedSequence(int(seed))
        .generate_state(count * streams, dtype=np.uint64)
        .reshape(count, streams)
    )


# ---------------------------------------------------------------------------
# shared option decorators


def _oracle_options(fn):
    options = [
        click.option("--oracle-url", default=None, help="Base URL of a /predict oracle."),
        click.option("--stub-kind", default=None, help="Stub oracle kind."),
        click.option("--stub-value", type=float, default=None, help="Constant stub value."),
        click.option("--stub-mask", default=None, help="NPY bool mask for mask-based stubs."),
        click.option("--stub-baseline", type=float, default=None, help="Stub baseline value."),
        click.option("--timeout", type=float, default=None, help="Oracle timeout in seconds."),
        click.option("--max-batch", type=int, default=None, help="Oracle batch limit."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _oracle_overrides(
    oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch
) -> dict[str, Any]:
    return {
        "transport": "network" if oracle_url else None,
        "url": oracle_url,
        "stub_kind": stub_kind,
        "stub_value": stub_value,
        "stub_mask": stub_mask,
        "stub_baseline": stub_baseline,
        "timeout": timeout,
        "max_batch": max_batch,
    }


def _metric_spec_options(fn):
    options = [
        click.option("--step-fraction", type=float, default=None),
        click.option("--baseline", type=click.Choice(["black", "dataset_mean", "uniform_noise"]), default=None),
        click.option("--irof-segments", type=int, default=None),
        click.option("--slic-compactness", type=float, default=None),
        click.option("--score-mode", type=click.Choice(["probability", "normalized_probability"]), default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _rbm_options(fn):
    options = [
        click.option("--preset", type=click.Choice(sorted(RBM_PRESETS)), default=None),
        click.option("--learning-rate", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--iterations", type=int, default=None),
        click.option("--cd-steps", type=int, default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Aggregate attribution stacks and score them against an oracle."""


# ---------------------------------------------------------------------------
# aggregate


@main.command("aggregate")
@click.option("--config", "config_path", default=None, help="YAML config file.")
@click.option("--input", "input_path", required=True, help="Dataset or stack manifest.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--methods", default=None, help="Comma list: mean,variance,rbm.")
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option(
    "--add-noise",
    type=int,
    is_flag=False,
    flag_value=15,
    default=None,
    help="Inject K standard-normal noise maps per stack (default 15 when bare).",
)
@click.option("--include-original-image", is_flag=True, default=None)
@click.option("--keep-baselines", is_flag=True, default=None, help="Also emit input maps as methods.")
@click.option("--flip-policy", type=click.Choice(["flip_detection", "metric_optimization", "none"]), default=None)
@click.option("--flip-fraction", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--metric", type=click.Choice(["insertion", "deletion", "irof"]), default=None,
              help="Metric optimized by the metric_optimization flip policy.")
@_rbm_options
@_metric_spec_options
@_oracle_options
@_exit_on_errors
def cmd_aggregate(
    config_path, input_path, out_dir, methods, seed, workers, add_noise,
    include_original_image, keep_baselines, flip_policy, flip_fraction, epsilon, metric,
    preset, learning_rate, batch_size, iterations, cd_steps,
    step_fraction, baseline, irof_segments, slic_compactness, score_mode,
    oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch,
) -> None:
    """Write one aggregated map per image per requested method."""
    overrides = {
        "seed": seed,
        "workers": workers,
        "aggregate": {
            "methods": _parse_list(methods),
            "add_noise": add_noise,
            "include_original_image": include_original_image,
            "keep_baselines": keep_baselines,
            "flip_policy": flip_policy,
            "flip_fraction": flip_fraction,
            "epsilon": epsilon,
            "metric": metric,
            "rbm": {
                "preset": preset,
                "learning_rate": learning_rate,
                "batch_size": batch_size,
                "n_iterations": iterations,
                "cd_steps": cd_steps,
            },
        },
        "evaluate": {
            "step_fraction": step_fraction,
            "baseline": baseline,
            "irof_segments": irof_segments,
            "slic_compactness": slic_compactness,
            "score_mode": score_mode,
        },
        "oracle": _oracle_overrides(
            oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch
        ),
    }
    cfg = _resolve_config(config_path, overrides)
    acfg = cfg["aggregate"]
    for method in acfg["methods"]:
        if method not in ("mean", "variance", "rbm"):
            _fail(f"unknown aggregation method {method!r}")

    stack_paths = _load_stack_paths(input_path)
    input_hash = _hash_dataset(stack_paths)

    endpoint = None
    metric_spec = None
    if "rbm" in acfg["methods"] and acfg["flip_policy"] == "metric_optimization":
        endpoint = _build_endpoint(cfg)
        metric_spec = _metric_spec(cfg, acfg["metric"])
        _check_oracle(endpoint)

    out = Path(out_dir)
    _write_run_metadata(out, cfg, input_hash)
    seeds = _per_image_seeds(cfg["seed"], len(stack_paths))

    def process(item: tuple[int, Path]):
        index, path = item
        stack = sfio.load_stack(path)
        if acfg["add_noise"]:
            stack = add_noise_maps(stack, int(acfg["add_noise"]), int(seeds[index, 0]))
        stack = normalize_stack(stack)
        train_cfg = _train_config(cfg, seed=int(seeds[index, 1]))
        outputs: dict[str, AttributionMap] = {}
        diagnostics: dict[str, Any] = {}
        for method in acfg["methods"]:
            ens_cfg = EnsembleConfig(
                method=method,
                epsilon=float(acfg["epsilon"]),
                rbm_train=train_cfg,
                flip_policy=acfg["flip_policy"],
                flip_fraction=float(acfg["flip_fraction"]),
                include_original_image=bool(acfg["include_original_image"]),
            )
            agg = aggregate(stack, ens_cfg, endpoint, metric_spec)
            outputs[method] = agg.map
            diagnostics[method] = {"flipped": agg.flipped, **agg.diagnostics}
        if acfg["keep_baselines"]:
            seen: dict[str, int] = {}
            for m in stack.maps:
                if m.source == "noise":
                    continue
                seen[m.source] = seen.get(m.source, 0) + 1
                name = m.source if seen[m.source] == 1 else f"{m.source}_{seen[m.source]}"
                outputs[name] = m
        return index, stack, outputs, diagnostics

    n_workers = max(1, int(cfg["workers"]))
    items = list(enumerate(stack_paths))
    if n_workers == 1:
        results = [process(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(process, items))

    manifest_images = []
    for index, stack, outputs, diagnostics in results:
        img_dir = out / f"img_{index:04d}"
        img_dir.mkdir(parents=True, exist_ok=True)
        sfio.save_array(img_dir / "image.npy", stack.image.data)
        method_files = {}
        for name, attribution in outputs.items():
            fname = f"{name}.npy"
            sfio.save_array(img_dir / fname, attribution.scores)
            method_files[name] = f"img_{index:04d}/{fname}"
        (img_dir / "diagnostics.json").write_text(
            json.dumps(diagnostics, indent=2, sort_keys=True) + "\n"
        )
        h, w = stack.spatial_shape
        manifest_images.append(
            {
                "dir": f"img_{index:04d}",
                "image_file": f"img_{index:04d}/image.npy",
                "label": stack.image.label,
                "shape": [h, w],
                "methods": method_files,
            }
        )
    (out / "aggregated.json").write_text(
        json.dumps(
            {
                "schema_version": sfio.SCHEMA_VERSION,
                "kind": "aggregated_dataset",
                "images": manifest_images,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    click.echo(f"aggregated {len(results)} images -> {out / 'aggregated.json'}")


def _load_aggregated(input_path: str) -> tuple[list[ImageTensor], dict[str, list[AttributionMap]]]:
    path = Path(input_path)
    if not path.exists():
        _fail(f"input manifest {path} does not exist")
    payload = json.loads(path.read_text())
    if payload.get("kind") != "aggregated_dataset":
        _fail(f"{path} is not an aggregated-dataset manifest")
    entries = payload.get("images", [])
    if not entries:
        _fail("empty dataset: no images to evaluate")
    images = []
    methods: dict[str, list[AttributionMap]] = {}
    names = list(entries[0]["methods"])
    for entry in entries:
        if list(entry["methods"]) != names:
            _fail("all images must share the same method set")
    for entry in entries:
        images.append(
            ImageTensor(
                data=sfio.load_array(path.parent / entry["image_file"]),
                label=int(entry["label"]),
            )
        )
        for name in names:
            arr = sfio.load_array(path.parent / entry["methods"][name])
            methods.setdefault(name, []).append(
                AttributionMap(scores=arr, source=name, normalized=True)
            )
    return images, methods


# ---------------------------------------------------------------------------
# evaluate


@main.command("evaluate")
@click.option("--config", "config_path", default=None)
@click.option("--input", "input_path", required=True, help="aggregated.json manifest.")
@click.option("--out", "out_dir", required=True)
@click.option("--metrics", default=None, help="Comma list: insertion,deletion,irof.")
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--dump-curves", is_flag=True, default=False)
@click.option("--plots", is_flag=True, default=False)
@_metric_spec_options
@_oracle_options
@_exit_on_errors
def cmd_evaluate(
    config_path, input_path, out_dir, metrics, seed, workers, dump_curves, plots,
    step_fraction, baseline, irof_segments, slic_compactness, score_mode,
    oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch,
) -> None:
    """Score aggregated maps with the configured metrics and oracle."""
    overrides = {
        "seed": seed,
        "workers": workers,
        "evaluate": {
            "metrics": _parse_list(metrics),
            "step_fraction": step_fraction,
            "baseline": baseline,
            "irof_segments": irof_segments,
            "slic_compactness": slic_compactness,
            "score_mode": score_mode,
        },
        "oracle": _oracle_overrides(
            oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch
        ),
    }
    cfg = _resolve_config(config_path, overrides)
    images, methods = _load_aggregated(input_path)
    endpoint = _build_endpoint(cfg)
    _check_oracle(endpoint)

    specs = [_metric_spec(cfg, kind) for kind in cfg["evaluate"]["metrics"]]
    report = evaluate_batch(
        images,
        methods,
        endpoint,
        specs,
        seed=int(cfg["seed"]),
        collect_curves=dump_curves,
        workers=max(1, int(cfg["workers"])),
    )
    report.metadata = {
        "seed": cfg["seed"],
        "n_images": len(images),
        "specs": [
            {
                "kind": s.kind,
                "step_fraction": s.step_fraction,
                "baseline": s.baseline,
                "irof_segments": s.irof_segments,
                "slic_compactness": s.slic_compactness,
                "score_mode": s.score_mode,
            }
            for s in specs
        ],
    }

    out = Path(out_dir)
    _write_run_metadata(out, cfg, _input_hash([Path(input_path)]))
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    table = report.format_table()
    (out / "report.txt").write_text(table + "\n")
    click.echo(table)
    if plots:
        _plot_report(report, out / "plots")


def _plot_report(report, plot_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir.mkdir(parents=True, exist_ok=True)
    metrics = sorted({r.metric for r in report.rows})
    for metric in metrics:
        rows = [r for r in report.rows if r.metric == metric and r.n > 0]
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(
            range(len(rows)),
            [r.mean for r in rows],
            yerr=[r.std for r in rows],
            capsize=3,
        )
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels([r.method for r in rows], rotation=30, ha="right")
        ax.set_ylabel(metric)
        fig.tight_layout()
        fig.savefig(plot_dir / f"{metric}.png", dpi=120)
        plt.close(fig)


# ---------------------------------------------------------------------------
# flip-compare


@main.command("flip-compare")
@click.option("--config", "config_path", default=None)
@click.option("--input", "input_path", required=True, help="Dataset or stack manifest.")
@click.option("--out", "out_dir", required=True)
@click.option("--seed", type=int, default=None)
@click.option("--metric", type=click.Choice(["insertion", "deletion", "irof"]), default=None)
@click.option("--flip-fraction", type=float, default=None)
@_rbm_options
@_metric_spec_options
@_oracle_options
@_exit_on_errors
def cmd_flip_compare(
    config_path, input_path, out_dir, seed, metric, flip_fraction,
    preset, learning_rate, batch_size, iterations, cd_steps,
    step_fraction, baseline, irof_segments, slic_compactness, score_mode,
    oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch,
) -> None:
    """Run both flip policies on identical stacks/seeds and report paired
    metric deltas plus the win/loss distribution."""
    overrides = {
        "seed": seed,
        "aggregate": {
            "flip_fraction": flip_fraction,
            "metric": metric,
            "rbm": {
                "preset": preset,
                "learning_rate": learning_rate,
                "batch_size": batch_size,
                "n_iterations": iterations,
                "cd_steps": cd_steps,
            },
        },
        "evaluate": {
            "step_fraction": step_fraction,
            "baseline": baseline,
            "irof_segments": irof_segments,
            "slic_compactness": slic_compactness,
            "score_mode": score_mode,
        },
        "oracle": _oracle_overrides(
            oracle_url, stub_kind, stub_value, stub_mask, stub_baseline, timeout, max_batch
        ),
    }
    cfg = _resolve_config(config_path, overrides)
    acfg = cfg["aggregate"]
    stack_paths = _load_stack_paths(input_path)
    endpoint = _build_endpoint(cfg)
    _check_oracle(endpoint)
    spec = _metric_spec(cfg, acfg["metric"])

    out = Path(out_dir)
    _write_run_metadata(out, cfg, _hash_dataset(stack_paths))
    seeds = _per_image_seeds(cfg["seed"], len(stack_paths))

    rows = []
    manifest_images = []
    for index, path in enumerate(stack_paths):
        stack = normalize_stack(sfio.load_stack(path))
        train_cfg = _train_config(cfg, seed=int(seeds[index, 1]))
        params = train_cd(stack_to_samples(stack), train_cfg, m=1)
        variants = {}
        for policy in ("flip_detection", "metric_optimization"):
            ens_cfg = EnsembleConfig(
                method="rbm",
                rbm_train=train_cfg,
                flip_policy=policy,
                flip_fraction=float(acfg["flip_fraction"]),
            )
            variants[policy] = finish_rbm_pipeline(params, stack, ens_cfg, endpoint, spec)

        values = {
            policy: metric_value(stack.image, agg.map, endpoint, spec, int(seeds[index, 0]))
            for policy, agg in variants.items()
        }
        delta = values["metric_optimization"] - values["flip_detection"]
        if values["metric_optimization"] == values["flip_detection"]:
            winner = "tie"
        elif is_improvement(
            spec.kind, values["metric_optimization"], values["flip_detection"]
        ):
            winner = "metric_optimization"
        else:
            winner = "flip_detection"
        rows.append(
            {
                "index": index,
                "label": stack.image.label,
                "metric": spec.kind,
                "flip_detection": values["flip_detection"],
                "metric_optimization": values["metric_optimization"],
                "delta": delta,
                "winner": winner,
            }
        )

        img_dir = out / f"img_{index:04d}"
        img_dir.mkdir(parents=True, exist_ok=True)
        sfio.save_array(img_dir / "image.npy", stack.image.data)
        method_files = {}
        for policy, agg in variants.items():
            fname = f"rbm_{policy}.npy"
            sfio.save_array(img_dir / fname, agg.map.scores)
            method_files[f"rbm_{policy}"] = f"img_{index:04d}/{fname}"
        h, w = stack.spatial_shape
        manifest_images.append(
            {
                "dir": f"img_{index:04d}",
                "image_file": f"img_{index:04d}/image.npy",
                "label": stack.image.label,
                "shape": [h, w],
                "methods": method_files,
            }
        )

    summary = {
        "metric": spec.kind,
        "n_images": len(rows),
        "metric_optimization_wins": sum(r["winner"] == "metric_optimization" for r in rows),
        "flip_detection_wins": sum(r["winner"] == "flip_detection" for r in rows),
        "ties": sum(r["winner"] == "tie" for r in rows),
        "mean_delta": float(np.mean([r["delta"] for r in rows])),
    }
    (out / "flip_compare.json").write_text(
        json.dumps({"schema_version": 1, "rows": rows, "summary": summary}, indent=2, sort_keys=True)
        + "\n"
    )
    (out / "aggregated.json").write_text(
        json.dumps(
            {
                "schema_version": sfio.SCHEMA_VERSION,
                "kind": "aggregated_dataset",
                "images": manifest_images,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# gen-noise


@main.command("gen-noise")
@click.option("--input", "input_path", required=True, help="Dataset or stack manifest.")
@click.option("--out", "out_dir", required=True)
@click.option("--count", type=int, default=15, show_default=True)
@click.option("--seed", type=int, default=None)
@_exit_on_errors
def cmd_gen_noise(input_path, out_dir, count, seed) -> None:
    """Copy a dataset, appending standard-normal noise maps to each stack."""
    cfg = _resolve_config(None, {"seed": seed})
    stack_paths = _load_stack_paths(input_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _per_image_seeds(cfg["seed"], len(stack_paths))
    rel_paths = []
    for index, path in enumerate(stack_paths):
        stack = sfio.load_stack(path)
        noisy = add_noise_maps(stack, count, int(seeds[index, 0]))
        rel = f"img_{index:04d}/stack.json"
        sfio.save_stack(noisy, out / rel)
        rel_paths.append(rel)
    sfio.save_dataset(rel_paths, out / "dataset.json")
    click.echo(f"wrote {len(rel_paths)} noisy stacks -> {out / 'dataset.json'}")


# ---------------------------------------------------------------------------
# stub-oracle


@main.command("stub-oracle")
@click.option("--kind", type=click.Choice(["constant", "fraction_remaining", "segment_critical"]), default="constant")
@click.option("--value", type=float, default=1.0, show_default=True)
@click.option("--mask", default=None, help="NPY bool mask for mask-based stubs.")
@click.option("--baseline", type=float, default=0.0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@_exit_on_errors
def cmd_stub_oracle(kind, value, mask, baseline, host, port) -> None:
    """Serve a deterministic stub oracle over the /predict protocol."""
    params: dict[str, Any] = {}
    if kind == "constant":
        params["value"] = value
    else:
        if mask is None:
            _fail(f"stub kind {kind!r} requires --mask")
        params["mask"] = sfio.load_array(mask).astype(bool)
        params["baseline"] = baseline
    server = StubOracleServer(make_stub(kind, params), host=host, port=port)
    click.echo(f"stub oracle ({kind}) listening on {server.address}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
