"""Bernoulli Restricted Boltzmann Machine.

Energy, exact brute-force inference for tiny instances, contrastive
divergence training, and the posterior used for aggregation. Real-valued
inputs in [0, 1] act directly as Bernoulli activation probabilities; the
data is never stochastically binarized.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RngSeed, make_rng
from .errors import CapacityError, StorageError, TrainingDivergedError, ValidationError
from .io import SCHEMA_VERSION, _read_manifest, _write_manifest, load_array, save_array

ENUMERATION_LIMIT = 20


@dataclass(frozen=True)
class RbmParams:
    """Weights (n visible x m hidden) and the two bias vectors."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        a = np.asarray(self.visible_bias, dtype=np.float64)
        b = np.asarray(self.hidden_bias, dtype=np.float64)
        if w.ndim != 2:
            raise ValidationError(f"weights must be n x m, got shape {w.shape}")
        n, m = w.shape
        if n < 1 or m < 1:
            raise ValidationError(f"need n >= 1 and m >= 1, got {n} x {m}")
        if a.shape != (n,):
            raise ValidationError(f"visible bias must have shape ({n},), got {a.shape}")
        if b.shape != (m,):
            raise ValidationError(f"hidden bias must have shape ({m},), got {b.shape}")
        for name, arr in (("weights", w), ("visible_bias", a), ("hidden_bias", b)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite entry in {name}")
        for field_name, arr in (("weights", w), ("visible_bias", a), ("hidden_bias", b)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, field_name, arr)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    """Contrastive-divergence hyperparameters.

    `n_iterations` counts full passes over the sample set; minibatches are
    drawn by seeded shuffling each pass.
    """

    learning_rate: float = 0.001
    batch_size: int = 35
    n_iterations: int = 250
    cd_steps: int = 1
    seed: RngSeed = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if self.n_iterations < 1:
            raise ValidationError(f"n_iterations must be positive, got {self.n_iterations}")
        if self.cd_steps < 1:
            raise ValidationError(f"cd_steps must be positive, got {self.cd_steps}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Negative branch is defined as the exact complement of the positive
    # branch, so sigmoid(-z) == 1 - sigmoid(z) holds bitwise. That keeps
    # the parametrization symmetry of the one-hidden-unit RBM exact; the
    # absolute error this costs for tiny outputs (< 2**-53) is far below
    # every tolerance in this package.
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    out[~pos] = 1.0 - 1.0 / (1.0 + np.exp(z[~pos]))
    return out


def _check_binary(vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValidationError(f"{name} must be a binary vector")
    return arr


def _check_unit_interval(vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return arr


def validate_samples(samples: np.ndarray) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValidationError(f"samples must be S x n with S >= 1, got shape {arr.shape}")
    return _check_unit_interval(arr, "samples")


def energy(params: RbmParams, x: np.ndarray, h: np.ndarray) -> float:
    """-(a.x + b.h + x.W.h) for one binary configuration."""
    x = _check_binary(x, "x")
    h = _check_binary(h, "h")
    if x.shape != (params.n_visible,):
        raise ValidationError(f"x must have shape ({params.n_visible},), got {x.shape}")
    if h.shape != (params.n_hidden,):
        raise ValidationError(f"h must have shape ({params.n_hidden},), got {h.shape}")
    return float(
        -(params.visible_bias @ x + params.hidden_bias @ h + x @ params.weights @ h)
    )


def _guard_enumeration(params: RbmParams) -> None:
    total = params.n_visible + params.n_hidden
    if total > ENUMERATION_LIMIT:
        raise CapacityError(
            f"exhaustive enumeration limited to n + m <= {ENUMERATION_LIMIT}; "
            f"got {total}. Use sampled estimates for larger models."
        )


def _all_states(n: int) -> np.ndarray:
    """All 2**n binary vectors of length n, in lexicographic order."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)), dtype=np.float64)


def partition_function(params: RbmParams) -> float:
    """Sum of exp(-E) over all 2**(n+m) configurations."""
    _guard_enumeration(params)
    xs = _all_states(params.n_visible)
    # Marginalize hidden units analytically: sum_h exp(b.h + x.W.h) factorizes.
    act = params.hidden_bias[None, :] + xs @ params.weights
    per_x = np.exp(xs @ params.visible_bias) * np.prod(1.0 + np.exp(act), axis=1)
    return float(per_x.sum())


def joint_probability(params: RbmParams, x: np.ndarray, h: np.ndarray) -> float:
    """exp(-E(x, h)) / Z."""
    return float(np.exp(-energy(params, x, h)) / partition_function(params))


def hidden_posterior(params: RbmParams, x: np.ndarray) -> np.ndarray:
    """P(H_j = 1 | X = x), componentwise sigmoid(b_j + sum_i x_i W_ij).

    Accepts a single vector (n,) or a batch (S, n).
    """
    return _sigmoid(hidden_logits(params, x))


def hidden_logits(params: RbmParams, x: np.ndarray) -> np.ndarray:
    """Pre-sigmoid activations b + x.W; exposed so callers can negate them
    exactly when resolving the parametrization symmetry."""
    arr = _check_unit_interval(np.asarray(x, dtype=np.float64), "x")
    if arr.shape[-1] != params.n_visible:
        raise ValidationError(
            f"x must have {params.n_visible} visible entries, got shape {arr.shape}"
        )
    return params.hidden_bias + arr @ params.weights


def visible_posterior(params: RbmParams, h: np.ndarray) -> np.ndarray:
    """P(X_i = 1 | H = h), componentwise sigmoid(a_i + sum_j h_j W_ij)."""
    arr = _check_unit_interval(np.asarray(h, dtype=np.float64), "h")
    if arr.shape[-1] != params.n_hidden:
        raise ValidationError(
            f"h must have {params.n_hidden} hidden entries, got shape {arr.shape}"
        )
    return _sigmoid(params.visible_bias + arr @ params.weights.T)


def train_cd(samples: np.ndarray, config: TrainConfig, m: int = 1) -> RbmParams:
    """Fit an RBM with CD-k.

    Hidden states are sampled as Bernoulli draws; the visible
    reconstruction uses probabilities directly (mean-field visible).
    Deterministic given config.seed.
    """
    data = validate_samples(samples)
    if m < 1:
        raise ValidationError(f"hidden unit count must be positive, got {m}")
    s, n = data.shape
    rng = make_rng(config.seed)
    w = rng.normal(0.0, 0.01, size=(n, m))
    a = np.zeros(n)
    b = np.zeros(m)
    lr = config.learning_rate

    for epoch in range(config.n_iterations):
        order = rng.permutation(s)
        for start in range(0, s, config.batch_size):
            v0 = data[order[start : start + config.batch_size]]
            ph0 = _sigmoid(b + v0 @ w)
            h = (rng.random(ph0.shape) < ph0).astype(np.float64)
            for step in range(config.cd_steps):
                vk = _sigmoid(a + h @ w.T)
                phk = _sigmoid(b + vk @ w)
                if step + 1 < config.cd_steps:
                    h = (rng.random(phk.shape) < phk).astype(np.float64)
            scale = lr / v0.shape[0]
            w += scale * (v0.T @ ph0 - vk.T @ phk)
            a += scale * (v0 - vk).sum(axis=0)
            b += scale * (ph0 - phk).sum(axis=0)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise TrainingDivergedError("non-finite parameters during CD training", epoch)
    return RbmParams(weights=w, visible_bias=a, hidden_bias=b)


def exact_log_likelihood(params: RbmParams, samples: np.ndarray) -> float:
    """Mean log P(x) over binary samples, by exact enumeration of Z."""
    _guard_enumeration(params)
    data = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    _check_binary(data, "samples")
    log_z = np.log(partition_function(params))
    act = params.hidden_bias[None, :] + data @ params.weights
    # log sum_h exp(-E(x, h)) = a.x + sum_j softplus(b_j + x.W_j)
    unnorm = data @ params.visible_bias + np.logaddexp(0.0, act).sum(axis=1)
    return float(np.mean(unnorm - log_z))


def exact_log_likelihood_grad(
    params: RbmParams, samples: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of the mean log-likelihood w.r.t. (W, a, b), by enumeration.

    This is the limit the CD update approximates: data statistics minus
    model statistics.
    """
    _guard_enumeration(params)
    data = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    _check_binary(data, "samples")

    ph_data = hidden_posterior(params, data)
    gw_data = data.T @ ph_data / data.shape[0]
    ga_data = data.mean(axis=0)
    gb_data = ph_data.mean(axis=0)

    xs = _all_states(params.n_visible)
    act = params.hidden_bias[None, :] + xs @ params.weights
    log_unnorm = xs @ params.visible_bias + np.logaddexp(0.0, act).sum(axis=1)
    p_x = np.exp(log_unnorm - np.log(partition_function(params)))
    ph_model = _sigmoid(act)
    gw_model = (xs * p_x[:, None]).T @ ph_model
    ga_model = p_x @ xs
    gb_model = p_x @ ph_model

    return gw_data - gw_model, ga_data - ga_model, gb_data - gb_model


def complement_params(params: RbmParams) -> RbmParams:
    """The symmetric parametrization of an m=1 RBM.

    W' = -W, b' = -b, a' = a + W gives hidden_posterior'(x) =
    1 - hidden_posterior(x) for all binary x; this is the root of the
    flipping issue.
    """
    if params.n_hidden != 1:
        raise ValidationError("parametrization symmetry is defined for m = 1")
    return RbmParams(
        weights=-params.weights,
        visible_bias=params.visible_bias + params.weights[:, 0],
        hidden_bias=-params.hidden_bias,
    )


def save_params(params: RbmParams, path: Path | str) -> None:
    """Persist params as three NPY arrays plus a manifest."""
    path = Path(path)
    if path.suffix != ".json":
        raise ValidationError(f"params manifest path must end in .json, got {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    files = {}
    for name, arr in (
        ("weights", params.weights),
        ("visible_bias", params.visible_bias),
        ("hidden_bias", params.hidden_bias),
    ):
        fname = f"{stem}_{name}.npy"
        save_array(path.parent / fname, arr)
        files[name] = fname
    _write_manifest(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "rbm_params",
            "arrays": files,
            "shape": [params.n_visible, params.n_hidden],
        },
    )


def load_params(path: Path | str) -> RbmParams:
    path = Path(path)
    payload = _read_manifest(path, "rbm_params")
    try:
        files = payload["arrays"]
        return RbmParams(
            weights=load_array(path.parent / files["weights"]),
            visible_bias=load_array(path.parent / files["visible_bias"]),
            hidden_bias=load_array(path.parent / files["hidden_bias"]),
        )
    except KeyError as exc:
        raise StorageError(f"params manifest {path} is missing field {exc}") from exc
