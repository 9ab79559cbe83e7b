"""JSON-over-HTTP inference service with a model registry.

The registry binds model names to a loaded model plus its embedding store;
everything is loaded at startup (startup fails on any broken entry) and is
immutable afterwards, so request handling is reentrant and safe under the
threading server.  Request validation and prediction live in
:func:`handle_ner_request`, a pure function over parsed JSON, so the HTTP
layer stays a thin shell.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .corpus import GERMEVAL_CLASSES
from .embeddings import EmbeddingStore, load_store
from .model import NerModel, load_model, predict

__all__ = [
    "ServiceError",
    "RegisteredModel",
    "ModelRegistry",
    "map_labels_combined",
    "map_sentence_labels_combined",
    "handle_ner_request",
    "serve",
]

ENV_BIND = "GNER_BIND"
ENV_PORT = "GNER_PORT"


class ServiceError(Exception):
    pass


_DERIV_CLASSES = {c for c in GERMEVAL_CLASSES if c.endswith("deriv")}
_PART_CLASSES = {c for c in GERMEVAL_CLASSES if c.endswith("part")}
_COMBINED_OK = {"PER", "LOC", "ORG", "OTH", "MISC"}


def map_labels_combined(label: str) -> str:
    """Label mapping for the model trained on both corpora: derived
    sub-classes become MISC, -part sub-classes are dropped, the four main
    classes and O pass through.  Idempotent."""
    if label == "O":
        return "O"
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        marker, cls = label[0], label[2:]
        if cls in _DERIV_CLASSES:
            return f"{marker}-MISC"
        if cls in _PART_CLASSES:
            return "O"
        if cls in _COMBINED_OK:
            return label
    raise ServiceError(f"cannot map unknown label {label!r}")


def map_sentence_labels_combined(labels: list[str]) -> list[str]:
    """Apply the combined mapping to a BIO sequence, repairing chunks whose
    B- tag was dropped (an I- following a dropped B- becomes B-)."""
    mapped = [map_labels_combined(lab) for lab in labels]
    out = []
    prev = "O"
    for lab in mapped:
        if lab.startswith("I-") and prev not in (f"B-{lab[2:]}", f"I-{lab[2:]}"):
            lab = "B-" + lab[2:]
        out.append(lab)
        prev = lab
    return out


@dataclass
class RegisteredModel:
    model: NerModel
    store: EmbeddingStore


class ModelRegistry:
    """Immutable name -> (model, embedding store) binding."""

    def __init__(self, entries: dict[str, RegisteredModel]):
        if not entries:
            raise ServiceError("registry has no models")
        self._entries = dict(entries)

    @classmethod
    def load(cls, config_path: str | Path) -> "ModelRegistry":
        """Load a registry description:

        ``{"models": {name: {"model": path, "embeddings": path,
        "embedding_kind": "plain"|"fasttext"}}}``; paths are relative to the
        config file.  Any unloadable entry fails startup.
        """
        config_path = Path(config_path)
        try:
            config = json.loads(config_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ServiceError(f"cannot read registry {config_path}: {exc}") from exc
        models = config.get("models")
        if not isinstance(models, dict) or not models:
            raise ServiceError(f"{config_path}: expected a non-empty 'models' map")
        base = config_path.parent
        entries = {}
        stores: dict[tuple[str, str], EmbeddingStore] = {}
        for name, spec in models.items():
            try:
                model = load_model(base / spec["model"])
                key = (spec["embeddings"], spec.get("embedding_kind", "plain"))
                if key not in stores:
                    stores[key] = load_store(base / key[0], key[1])
                entries[name] = RegisteredModel(model, stores[key])
            except Exception as exc:
                raise ServiceError(f"registry entry {name!r} failed to load: {exc}") from exc
        return cls(entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def get(self, name: str) -> RegisteredModel:
        try:
            return self._entries[name]
        except KeyError:
            raise ServiceError(f"unknown model {name!r}") from None


def _bad_request(message: str) -> tuple[int, dict]:
    return 400, {"error": message}


def handle_ner_request(registry: ModelRegistry, payload) -> tuple[int, dict]:
    """Validate a request body and run prediction.

    Returns (http_status, response_body).  The response's label lists align
    one-to-one with the request's token lists.
    """
    if not isinstance(payload, dict):
        return _bad_request("request body must be a JSON object")
    name = payload.get("model")
    if not isinstance(name, str):
        return _bad_request("missing or non-string 'model'")
    sentences = payload.get("sentences")
    if not isinstance(sentences, list):
        return _bad_request("'sentences' must be a list of token lists")
    for i, sent in enumerate(sentences):
        if not isinstance(sent, list):
            return _bad_request(f"sentence {i} must be a list of tokens, not {type(sent).__name__}")
        if not sent:
            return _bad_request(f"sentence {i} is empty")
        if any(not isinstance(tok, str) or not tok for tok in sent):
            return _bad_request(f"sentence {i} contains a non-string or empty token")
    try:
        entry = registry.get(name)
    except ServiceError:
        return 404, {"error": f"unknown model {name!r}", "models": registry.names()}

    started = time.perf_counter()
    labels = [predict(entry.model, entry.store, sent) for sent in sentences]
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return 200, {"model": name, "labels": labels, "timing_ms": elapsed_ms}


def _make_handler(registry: ModelRegistry):
    class Handler(BaseHTTPRequestHandler):
        server_version = "gner"

        def _send(self, status: int, body: dict):
            blob = json.dumps(body, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"status": "ok"})
            elif self.path == "/models":
                self._send(200, {"models": registry.names()})
            else:
                self._send(404, {"error": f"no such path {self.path}"})

        def do_POST(self):
            if self.path != "/ner":
                self._send(404, {"error": f"no such path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                self._send(400, {"error": f"malformed JSON body: {exc}"})
                return
            status, body = handle_ner_request(registry, payload)
            self._send(status, body)

        def log_message(self, fmt, *args):  # quiet by default
            pass

    return Handler


def serve(registry: ModelRegistry, bind: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    """Bind the HTTP service; the caller drives ``serve_forever``."""
    try:
        server = ThreadingHTTPServer((bind, port), _make_handler(registry))
    except OSError as exc:
        raise ServiceError(f"cannot bind {bind}:{port}: {exc}") from exc
    return server


def serve_in_thread(registry: ModelRegistry, bind: str = "127.0.0.1", port: int = 0):
    """Start the service on a daemon thread (port 0 picks a free port);
    returns (server, thread)."""
    server = serve(registry, bind, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
