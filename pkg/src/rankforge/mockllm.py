"""Deterministic mock completion server for offline runs and tests.

Implements the same JSON contract as a real endpoint: POST a
``{model, prompt, temperature, max_tokens, stop}`` body, get back
``{"choices": [{"text": ...}]}``. Completions come from
``querygen.deterministic_completion``, so repeated runs against this
server produce identical output.
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .querygen import deterministic_completion


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (http.server API name)
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            self._reply(400, {"error": "invalid JSON body"})
            return
        text = deterministic_completion(str(body.get("prompt", "")))
        for stop in body.get("stop") or []:
            text = text.split(stop)[0]
        self._reply(200, {"model": body.get("model", "mock"), "choices": [{"text": text}]})

    def _reply(self, status: int, obj: dict) -> None:
        payload = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):  # silence per-request stderr noise
        pass


class MockLLMServer:
    """Context manager that serves the mock endpoint on a background thread."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/completions"

    def __enter__(self) -> "MockLLMServer":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve a deterministic mock completion endpoint.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8631)
    args = parser.parse_args(argv)
    server = ThreadingHTTPServer((args.host, args.port), _Handler)
    print(f"mock LLM listening on http://{args.host}:{args.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
