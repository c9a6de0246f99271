"""Uniform interface to a black-box classifier.

Batches of (possibly perturbed) images go in, per-class probabilities
come out. Deterministic stub oracles back the test fixtures; the network
client speaks the /predict wire protocol: HTTP POST with a single NPY
v1.0 float32 array of shape B x C x H x W, little-endian, and a JSON
response of either {"scores": [...]} (when target_class is given) or
{"probabilities": [[...], ...]}.
"""
from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np
import requests

from .core import ImageTensor
from .errors import OracleUnavailableError, ProtocolError, ValidationError

RETRY_BACKOFF_S = (0.1, 0.4, 1.6)

STUB_KINDS = ("constant", "fraction_remaining", "segment_critical")


@dataclass(frozen=True)
class OracleScore:
    """Classifier output for one image: the target-class probability and,
    when the oracle returned one, the full class distribution."""

    target_class: int | None
    probability: float
    probabilities: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError(f"probability must lie in [0, 1], got {self.probability}")
        if self.probabilities is not None:
            vec = np.asarray(self.probabilities, dtype=np.float64)
            if vec.ndim != 1 or vec.min() < 0.0 or vec.max() > 1.0:
                raise ValidationError("class probabilities must be a vector in [0, 1]")
            if abs(vec.sum() - 1.0) > 1e-6:
                raise ValidationError(f"class probabilities sum to {vec.sum()}, expected 1")
            vec = vec.copy()
            vec.setflags(write=False)
            object.__setattr__(self, "probabilities", vec)


@dataclass(frozen=True)
class OracleEndpoint:
    """Where scores come from: a /predict server or an analytic stub."""

    transport: str
    address: str | None = None
    stub_kind: str | None = None
    stub_params: dict[str, Any] = field(default_factory=dict)
    timeout: float = 30.0
    max_batch: int = 32

    def __post_init__(self) -> None:
        if self.transport not in ("network", "stub"):
            raise ValidationError(f"transport must be 'network' or 'stub', got {self.transport!r}")
        if self.transport == "network" and not self.address:
            raise ValidationError("network endpoint requires an address")
        if self.transport == "stub" and self.stub_kind not in STUB_KINDS:
            raise ValidationError(f"unknown stub kind {self.stub_kind!r}; choose from {STUB_KINDS}")
        if self.max_batch < 1:
            raise ValidationError(f"max_batch must be >= 1, got {self.max_batch}")


def make_stub(kind: str, params: dict[str, Any] | None = None) -> OracleEndpoint:
    """Build a deterministic stub endpoint.

    Supported kinds: constant(value); fraction_remaining(mask, baseline);
    segment_critical(mask, baseline).
    """
    params = dict(params or {})
    if kind == "constant":
        value = float(params.get("value", 1.0))
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"constant stub value must lie in [0, 1], got {value}")
        params["value"] = value
    elif kind in ("fraction_remaining", "segment_critical"):
        mask = np.asarray(params.get("mask"), dtype=bool)
        if mask.ndim != 2:
            raise ValidationError(f"{kind} stub requires an H x W boolean mask")
        params["mask"] = mask
        params["baseline"] = float(params.get("baseline", 0.0))
    else:
        raise ValidationError(f"unknown stub kind {kind!r}; choose from {STUB_KINDS}")
    return OracleEndpoint(transport="stub", stub_kind=kind, stub_params=params)


def _stub_score_array(kind: str, params: dict[str, Any], data: np.ndarray) -> float:
    """Score one C x H x W array with a stub. Pure and deterministic."""
    if kind == "constant":
        return float(params["value"])
    mask = params["mask"]
    baseline = params["baseline"]
    if data.shape[1:] != mask.shape:
        raise ValidationError(
            f"stub mask shape {mask.shape} does not match image {data.shape[1:]}"
        )
    if not mask.any():
        return 1.0
    # A spatial position is "present" while any channel differs from the
    # baseline replacement value.
    present = (data != baseline).any(axis=0)
    if kind == "fraction_remaining":
        return float(present[mask].sum() / mask.sum())
    # segment_critical: all-or-nothing on the critical region.
    return 1.0 if bool(present[mask].all()) else 0.0


def _scores_from_stub(
    endpoint: OracleEndpoint, images: Sequence[ImageTensor], target_class: int | None
) -> list[OracleScore]:
    out = []
    for img in images:
        p = _stub_score_array(endpoint.stub_kind, endpoint.stub_params, img.data)
        out.append(
            OracleScore(
                target_class=target_class,
                probability=p,
                probabilities=np.array([1.0 - p, p]) if target_class is None else None,
            )
        )
    return out


def _encode_batch(images: Sequence[ImageTensor]) -> bytes:
    arr = np.stack([img.data for img in images]).astype("<f4")
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, version=(1, 0))
    return buf.getvalue()


def _post_with_retries(endpoint: OracleEndpoint, url: str, body: bytes) -> requests.Response:
    last_error: Exception | None = None
    for attempt in range(len(RETRY_BACKOFF_S) + 1):
        if attempt:
            time.sleep(RETRY_BACKOFF_S[attempt - 1])
        try:
            resp = requests.post(
                url,
                data=body,
                headers={"Content-Type": "application/octet-stream"},
                timeout=endpoint.timeout,
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code >= 500:
            last_error = ProtocolError(f"server error {resp.status_code}: {resp.text[:200]}")
            continue
        return resp
    raise OracleUnavailableError(
        f"oracle at {endpoint.address} unavailable after "
        f"{len(RETRY_BACKOFF_S) + 1} attempts: {last_error}"
    )


def _scores_from_network(
    endpoint: OracleEndpoint, images: Sequence[ImageTensor], target_class: int | None
) -> list[OracleScore]:
    url = endpoint.address.rstrip("/") + "/predict"
    if target_class is not None:
        url += f"?target_class={int(target_class)}"
    resp = _post_with_retries(endpoint, url, _encode_batch(images))
    if resp.status_code != 200:
        raise ProtocolError(f"oracle returned HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"oracle response is not JSON: {resp.text[:200]}") from exc

    if target_class is not None:
        scores = payload.get("scores")
        if not isinstance(scores, list) or len(scores) != len(images):
            raise ProtocolError(f"malformed scores payload: {json.dumps(payload)[:200]}")
        return [
            OracleScore(target_class=int(target_class), probability=float(s)) for s in scores
        ]
    probs = payload.get("probabilities")
    if not isinstance(probs, list) or len(probs) != len(images):
        raise ProtocolError(f"malformed probabilities payload: {json.dumps(payload)[:200]}")
    out = []
    for img, vec in zip(images, probs):
        vec = np.asarray(vec, dtype=np.float64)
        out.append(
            OracleScore(
                target_class=None,
                probability=float(vec[img.label]) if 0 <= img.label < vec.size else 0.0,
                probabilities=vec,
            )
        )
    return out


def score_batch(
    endpoint: OracleEndpoint,
    images: Sequence[ImageTensor],
    target_class: int | None = None,
) -> list[OracleScore]:
    """Score every image, order-preserving; batches larger than
    endpoint.max_batch are split transparently."""
    images = list(images)
    if not images:
        return []
    scorer = _scores_from_stub if endpoint.transport == "stub" else _scores_from_network
    out: list[OracleScore] = []
    for start in range(0, len(images), endpoint.max_batch):
        out.extend(scorer(endpoint, images[start : start + endpoint.max_batch], target_class))
    return out


def check_health(endpoint: OracleEndpoint) -> dict[str, Any]:
    """Return the oracle's health document or raise OracleUnavailableError."""
    if endpoint.transport == "stub":
        return {"status": "ok", "model": f"stub:{endpoint.stub_kind}"}
    url = endpoint.address.rstrip("/") + "/healthz"
    try:
        resp = requests.get(url, timeout=endpoint.timeout)
    except requests.RequestException as exc:
        raise OracleUnavailableError(f"health check failed for {url}: {exc}") from exc
    if resp.status_code != 200:
        raise OracleUnavailableError(f"health check returned HTTP {resp.status_code}")
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"health response is not JSON: {resp.text[:200]}") from exc
    if payload.get("status") != "ok":
        raise OracleUnavailableError(f"oracle reports status {payload.get('status')!r}")
    return payload


class _StubRequestHandler(BaseHTTPRequestHandler):
    """Serves a stub oracle over the /predict wire protocol."""

    server: "StubOracleServer"

    def log_message(self, fmt: str, *args: Any) -> None:  # quiet test servers
        pass

    def _send_json(self, status: int, payload: dict[str, Any]) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        if urlparse(self.path).path == "/healthz":
            self._send_json(200, {"status": "ok", "model": f"stub:{self.server.stub_kind}"})
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self) -> None:
        parsed = urlparse(self.path)
        if parsed.path != "/predict":
            self._send_json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            arr = np.load(io.BytesIO(self.rfile.read(length)), allow_pickle=False)
            if arr.ndim != 4:
                raise ValueError(f"expected B x C x H x W array, got shape {arr.shape}")
        except Exception as exc:
            self._send_json(400, {"error": str(exc)})
            return
        query = parse_qs(parsed.query)
        scores = [
            _stub_score_array(self.server.stub_kind, self.server.stub_params, img)
            for img in arr.astype(np.float64)
        ]
        if "target_class" in query:
            self._send_json(200, {"scores": scores})
        else:
            self._send_json(200, {"probabilities": [[1.0 - s, s] for s in scores]})


class StubOracleServer(ThreadingHTTPServer):
    """Local HTTP server exposing a stub oracle; used by integration tests
    and the `stub-oracle` CLI command."""

    def __init__(self, stub: OracleEndpoint, host: str = "127.0.0.1", port: int = 0):
        if stub.transport != "stub":
            raise ValidationError("StubOracleServer requires a stub endpoint")
        self.stub_kind = stub.stub_kind
        self.stub_params = stub.stub_params
        super().__init__((host, port), _StubRequestHandler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"
