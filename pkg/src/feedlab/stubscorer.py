"""Stub remote scorer/rewriter server for tests and simulations.

Serves the scoring wire protocol with a configurable artificial delay and a
fixed score table, plus a /rewrite endpoint backed by a substitution map.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubScorerServer:
    def __init__(self, score_table: dict[str, float] | None = None,
                 default_score: float = 0.0, delay_ms: float = 0.0,
                 rewrite_map: dict[str, str] | None = None):
        self.score_table = dict(score_table or {})
        self.default_score = default_score
        self.delay_ms = delay_ms
        self.rewrite_map = dict(rewrite_map or {})
        self.requests_served = 0
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                if stub.delay_ms:
                    time.sleep(stub.delay_ms / 1000.0)
                if self.path == "/score":
                    scores = {p["id"]: stub.score_table.get(p["id"], stub.default_score)
                              for p in body.get("posts", [])}
                    out = {"scores": scores}
                elif self.path == "/rewrite":
                    text = body.get("text", "")
                    for old, new in stub.rewrite_map.items():
                        text = text.replace(old, new)
                    out = {"text": text}
                else:
                    self.send_error(404)
                    return
                stub.requests_served += 1
                payload = json.dumps(out).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def score_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/score"

    @property
    def rewrite_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/rewrite"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
