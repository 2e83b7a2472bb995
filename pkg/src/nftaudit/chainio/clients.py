"""Explorer and node clients.

Clients only move raw response text; parsing happens in ``nftaudit.chainio.calls``
so that the HTTP and fixture backends are interpreted identically.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import requests

from nftaudit.errors import RateLimitedError, TransportError
from nftaudit.throttle import TokenBucket

DEFAULT_TIMEOUT = 10.0


class ExplorerClient(Protocol):
    def get_abi(self, address: str) -> str:
        """Return the raw explorer response body for ``getabi``."""


class NodeClient(Protocol):
    def call(self, address: str, data: str) -> str:
        """Return the raw JSON-RPC response body of an ``eth_call``."""


def _retry_after(response: requests.Response) -> float | None:
    value = response.headers.get("Retry-After")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


def _check_http(response: requests.Response, endpoint: str) -> None:
    if response.status_code == 429:
        raise RateLimitedError(f"{endpoint} rate limited (HTTP 429)", retry_after=_retry_after(response))
    if response.status_code >= 500:
        raise TransportError(f"{endpoint} returned HTTP {response.status_code}")
    if response.status_code >= 400:
        raise TransportError(f"{endpoint} returned HTTP {response.status_code}", retryable=False)


class _Counted:
    def __init__(self):
        self._calls = 0
        self._count_lock = threading.Lock()

    def _count(self) -> None:
        with self._count_lock:
            self._calls += 1

    @property
    def calls(self) -> int:
        return self._calls


class HttpExplorerClient(_Counted):
    """Etherscan-compatible ``module=contract&action=getabi`` client."""

    def __init__(self, url: str, api_key: str = "", *, limiter: TokenBucket | None = None,
                 session: requests.Session | None = None, timeout: float = DEFAULT_TIMEOUT):
        super().__init__()
        self.url = url
        self.api_key = api_key
        self.limiter = limiter
        self.session = session or requests.Session()
        self.timeout = timeout

    def get_abi(self, address: str) -> str:
        if self.limiter:
            self.limiter.acquire()
        self._count()
        params = {"module": "contract", "action": "getabi", "address": address, "apikey": self.api_key}
        try:
            response = self.session.get(self.url, params=params, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"explorer request failed: {exc}") from exc
        _check_http(response, "explorer")
        return response.text


class HttpNodeClient(_Counted):
    """JSON-RPC ``eth_call`` against the latest block."""

    def __init__(self, url: str, *, limiter: TokenBucket | None = None,
                 session: requests.Session | None = None, timeout: float = DEFAULT_TIMEOUT):
        super().__init__()
        self.url = url
        self.limiter = limiter
        self.session = session or requests.Session()
        self.timeout = timeout

    def call(self, address: str, data: str) -> str:
        if self.limiter:
            self.limiter.acquire()
        self._count()
        payload = {
            "jsonrpc": "2.0",
            "id": 1,
            "method": "eth_call",
            "params": [{"to": address, "data": data}, "latest"],
        }
        try:
            response = self.session.post(self.url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"node request failed: {exc}") from exc
        _check_http(response, "node")
        return response.text


class FixtureExplorerClient(_Counted):
    """Replays ``<root>/explorer/<address>.json`` byte for byte."""

    def __init__(self, root: str | Path, *, limiter: TokenBucket | None = None):
        super().__init__()
        self.root = Path(root)
        self.limiter = limiter

    def get_abi(self, address: str) -> str:
        if self.limiter:
            self.limiter.acquire()
        self._count()
        path = self.root / "explorer" / f"{address.lower()}.json"
        if not path.is_file():
            raise TransportError(f"no explorer fixture for {address}", retryable=False)
        return path.read_bytes().decode("utf-8")


class FixtureNodeClient(_Counted):
    """Replays ``<root>/node/<address>_<token_id>.json``.

    The token id is recovered from the last 32 bytes of the call data.
    """

    def __init__(self, root: str | Path, *, limiter: TokenBucket | None = None):
        super().__init__()
        self.root = Path(root)
        self.limiter = limiter

    def call(self, address: str, data: str) -> str:
        if self.limiter:
            self.limiter.acquire()
        self._count()
        token_id = int(data[-64:], 16)
        path = self.root / "node" / f"{address.lower()}_{token_id}.json"
        if not path.is_file():
            raise TransportError(f"no node fixture for {address} token {token_id}", retryable=False)
        return path.read_bytes().decode("utf-8")


@dataclass
class ClientPair:
    explorer: ExplorerClient
    node: NodeClient
    clock: Callable[[], float] = field(default=time.time)

    @property
    def calls(self) -> int:
        return getattr(self.explorer, "calls", 0) + getattr(self.node, "calls", 0)


def fixture_clients(root: str | Path, *, rate: float | None = None) -> ClientPair:
    """Build a replay client pair with a frozen clock.

    ``<root>/meta.json`` may set ``probe_timestamp``; it defaults to 0 so that
    replays are byte-identical regardless of wall time.
    """
    root = Path(root)
    timestamp = 0
    meta = root / "meta.json"
    if meta.is_file():
        timestamp = int(json.loads(meta.read_text(encoding="utf-8")).get("probe_timestamp", 0))
    explorer_limiter = TokenBucket(rate) if rate else None
    node_limiter = TokenBucket(rate) if rate else None
    return ClientPair(
        FixtureExplorerClient(root, limiter=explorer_limiter),
        FixtureNodeClient(root, limiter=node_limiter),
        clock=lambda: timestamp,
    )


def http_clients(explorer_url: str | None = None, api_key: str | None = None,
                 node_url: str | None = None, *, rate: float | None = None) -> ClientPair:
    """Live clients; missing settings fall back to the environment
    (``EXPLORER_API_URL``, ``EXPLORER_API_KEY``, ``NODE_RPC_URL``)."""
    explorer_url = explorer_url or os.environ.get("EXPLORER_API_URL")
    api_key = api_key if api_key is not None else os.environ.get("EXPLORER_API_KEY", "")
    node_url = node_url or os.environ.get("NODE_RPC_URL")
    if not explorer_url or not node_url:
        raise TransportError("explorer and node endpoints must be configured", retryable=False)
    return ClientPair(
        HttpExplorerClient(explorer_url, api_key, limiter=TokenBucket(rate) if rate else None),
        HttpNodeClient(node_url, limiter=TokenBucket(rate) if rate else None),
    )
