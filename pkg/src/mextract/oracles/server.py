"""HTTP scan service exposing an oracle.

    POST /scan   {"features": [...]} -> {"label": 0|1}
                 {"batch": [[...], ...]} -> {"labels": [...]}
    GET  /stats  -> {"queries": n}

With a query cap, a request that would exceed it gets 429 {"error": "budget"}
and is not counted.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .base import TargetOracle

log = logging.getLogger(__name__)


@dataclass
class OracleServerConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 picks a free port
    delay_ms: float = 0.0
    max_queries: int | None = None

    def __post_init__(self):
        if self.delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        if self.max_queries is not None and self.max_queries < 0:
            raise ValueError("max_queries must be >= 0")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "_Server"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: dict) -> None:
        raw = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_GET(self):
        if self.path == "/stats":
            self._send(200, {"queries": self.server.owner.queries})
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = self.rfile.read(length)
        if self.path != "/scan":
            self._send(404, {"error": "not found"})
            return
        try:
            body = json.loads(payload)
            if "features" in body:
                X, single = np.asarray([body["features"]], dtype=np.float64), True
            elif "batch" in body:
                X, single = np.asarray(body["batch"], dtype=np.float64), False
                if X.size == 0:
                    X = X.reshape(0, self.server.owner.oracle.dim or 0)
            else:
                raise ValueError("body needs 'features' or 'batch'")
            X = self.server.owner.oracle._check(X)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            self._send(400, {"error": str(exc)})
            return
        owner = self.server.owner
        if not owner.reserve(X.shape[0]):
            self._send(429, {"error": "budget"})
            return
        if owner.config.delay_ms:
            time.sleep(owner.config.delay_ms / 1000.0)
        labels = owner.oracle._label(X) if X.shape[0] else np.zeros(0, dtype=np.uint8)
        labels = [int(v) for v in labels]
        self._send(200, {"label": labels[0]} if single else {"labels": labels})


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    owner: "OracleServer"


class OracleServer:
    def __init__(self, oracle: TargetOracle, config: OracleServerConfig | None = None):
        self.oracle = oracle
        self.config = config or OracleServerConfig()
        self.queries = 0
        self._lock = threading.Lock()
        self._httpd = _Server((self.config.host, self.config.port), _Handler)
        self._httpd.owner = self
        self._thread: threading.Thread | None = None

    def reserve(self, n: int) -> bool:
        with self._lock:
            cap = self.config.max_queries
            if cap is not None and self.queries + n > cap:
                return False
            self.queries += n
            return True

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "OracleServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_oracle(oracle: TargetOracle, config: OracleServerConfig | None = None) -> OracleServer:
    """Bind and start the service in a background thread. Raises OSError if the port is busy."""
    return OracleServer(oracle, config).start()
