from __future__ import annotations

import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixturegen import catalog_fixtures  # noqa: E402

from nftaudit.resolve import GatewayMap  # noqa: E402
from nftaudit.throttle import RetryPolicy  # noqa: E402


class FixtureServer:
    """Local HTTP server answering for remote URLs.

    ``http(s)://host/path`` is served at ``/<scheme>/host/path``; ``gateway``
    is the GatewayMap that rewrites remote URLs onto this server.
    """

    def __init__(self):
        self.routes: dict[str, tuple[int, dict, bytes]] = {}
        self.hits: list[str] = []
        self.post_handler = None  # callable(path, body bytes) -> (status, headers, body)
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                server.hits.append(self.path)
                status, headers, body = server.routes.get(self.path, (404, {"Content-Type": "text/plain"}, b"nope"))
                self.send_response(status)
                for key, value in headers.items():
                    self.send_header(key, value)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                server.hits.append(self.path)
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                status, headers, payload = server.post_handler(self.path, body)
                self.send_response(status)
                for key, value in headers.items():
                    self.send_header(key, value)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.base = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @staticmethod
    def local_path(url: str) -> str:
        scheme, rest = url.split("://", 1)
        return f"/{scheme}/{rest}"

    def serve(self, url: str, body: bytes, media_type: str, status: int = 200) -> None:
        self.routes[self.local_path(url)] = (status, {"Content-Type": media_type}, body)

    def redirect(self, url: str, location: str) -> None:
        self.routes[self.local_path(url)] = (302, {"Location": self.base + self.local_path(location)}, b"")

    def serve_fixture_set(self, fx) -> None:
        for url, (status, media_type, body) in fx.http.items():
            self.serve(url, body, media_type, status)

    @property
    def gateway(self) -> GatewayMap:
        return GatewayMap([
            ("ipfs://", f"{self.base}/https/ipfs.io/ipfs/"),
            ("https://", f"{self.base}/https/"),
            ("http://", f"{self.base}/http/"),
        ])

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def fixture_server():
    server = FixtureServer()
    yield server
    server.close()


@pytest.fixture
def catalog_fx():
    return catalog_fixtures()


@pytest.fixture
def catalog_dir(tmp_path, catalog_fx):
    root = tmp_path / "fixtures"
    catalog_fx.write(root)
    return root


@pytest.fixture
def no_wait():
    """Retry policy that records delays instead of sleeping."""
    delays = []
    policy = RetryPolicy(sleep=delays.append)
    policy.delays = delays
    return policy
