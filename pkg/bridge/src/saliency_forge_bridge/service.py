"""Classifier prediction service implementing the /predict wire contract.

POST /predict takes one NPY v1.0 float32 array of shape B x C x H x W;
with ?target_class=c the response is {"scores": [...]}, otherwise
{"probabilities": [[...], ...]}. GET /healthz reports readiness. The model
runs in eval mode, so identical requests get identical responses.
"""
from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, urlparse

import numpy as np

from .model import DigitCnn, predict_probabilities

MODEL_NAME = "digit-cnn"


class _PredictHandler(BaseHTTPRequestHandler):
    server: "BridgeServer"

    def log_message(self, fmt: str, *args: Any) -> None:
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
            self._send_json(200, {"status": "ok", "model": MODEL_NAME})
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
        try:
            with self.server.inference_lock:
                probabilities = predict_probabilities(self.server.model, arr)
        except Exception as exc:  # model failure
            self._send_json(500, {"error": str(exc)})
            return
        query = parse_qs(parsed.query)
        if "target_class" in query:
            target = int(query["target_class"][0])
            if not 0 <= target < probabilities.shape[1]:
                self._send_json(400, {"error": f"target_class {target} out of range"})
                return
            self._send_json(200, {"scores": probabilities[:, target].tolist()})
        else:
            self._send_json(200, {"probabilities": probabilities.tolist()})


class BridgeServer(ThreadingHTTPServer):
    """Serves one model; inference batches are serialized per device."""

    def __init__(self, model: DigitCnn, host: str = "127.0.0.1", port: int = 0):
        self.model = model
        self.inference_lock = threading.Lock()
        super().__init__((host, port), _PredictHandler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"
