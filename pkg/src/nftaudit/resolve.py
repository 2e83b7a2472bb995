"""Follow a tokenURI to the asset it describes, counting metadata hops.

Each remote fetch that yields a metadata document is one click. Data URIs
decode inline and cost nothing. A trace stops at the first URI that is an
asset (image or video), at a document without an asset field, or when the
fetch budget ``max_depth`` is spent.
"""

from __future__ import annotations

import json
import posixpath
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence
from urllib.parse import urlsplit

import requests

from nftaudit.classify import (
    DEFAULT_CLOUD_KEYWORDS,
    StorageCategory,
    UNREADABLE,
    classify_uri,
    decode_data_uri_payload,
    parse_data_uri,
    split_uri,
)
from nftaudit.errors import DecodeError, EmptyUriError, FetchError
from nftaudit.ingest import TokenRef
from nftaudit.throttle import TokenBucket

DEFAULT_MAX_DEPTH = 5
DEFAULT_TIMEOUT = 10.0
MAX_RESPONSE_BYTES = 16 * 1024 * 1024
DEFAULT_ASSET_FIELDS = ("image", "image_url", "animation_url")

MEDIA_EXTENSIONS = frozenset(
    {
        ".png", ".jpg", ".jpeg", ".gif", ".svg", ".webp", ".bmp", ".avif", ".tif", ".tiff",
        ".mp4", ".webm", ".mov", ".m4v", ".mp3", ".wav", ".ogg", ".glb", ".gltf",
    }
)


class Transport(str, Enum):
    NETWORK_FETCH = "network_fetch"
    INLINE_DECODE = "inline_decode"


class TraceStatus(str, Enum):
    RESOLVED = "resolved"
    BROKEN_LINK = "broken_link"
    DEPTH_EXCEEDED = "depth_exceeded"


@dataclass(frozen=True)
class ResolutionStep:
    uri: str
    transport: Transport
    media_type: str
    byte_size: int


@dataclass
class ResolutionTrace:
    token: TokenRef | None
    steps: list[ResolutionStep]
    final_asset_uri: str | None
    final_category: StorageCategory
    status: TraceStatus
    fetch_count: int = 0
    detail: str | None = None

    @property
    def click_depth(self) -> int:
        return sum(1 for s in self.steps if s.transport is Transport.NETWORK_FETCH)

    def to_record(self) -> dict:
        return {
            "contract_address": self.token.contract_address if self.token else None,
            "token_id": str(self.token.token_id) if self.token else None,
            "status": self.status.value,
            "click_depth": self.click_depth,
            "fetch_count": self.fetch_count,
            "final_asset_uri": self.final_asset_uri,
            "final_category": str(self.final_category),
            "detail": self.detail,
            "steps": [
                {"uri": s.uri, "transport": s.transport.value, "media_type": s.media_type, "byte_size": s.byte_size}
                for s in self.steps
            ],
        }


@dataclass(frozen=True)
class FetchResponse:
    url: str
    status: int
    media_type: str
    body: bytes


class Fetcher(Protocol):
    def fetch(self, url: str) -> FetchResponse:
        """Fetch ``url``; raise FetchError when the host cannot be reached."""


class HttpFetcher:
    """requests-based fetcher with a timeout and a response size cap.

    Transport-level redirects are followed and do not count as clicks.
    """

    def __init__(self, *, timeout: float = DEFAULT_TIMEOUT, max_bytes: int = MAX_RESPONSE_BYTES,
                 limiter: TokenBucket | None = None, session: requests.Session | None = None):
        self.timeout = timeout
        self.max_bytes = max_bytes
        self.limiter = limiter
        self.session = session or requests.Session()
        self.calls = 0

    def fetch(self, url: str) -> FetchResponse:
        if urlsplit(url).scheme not in ("http", "https"):
            raise FetchError("unsupported", f"no transport for {url}")
        if self.limiter:
            self.limiter.acquire()
        self.calls += 1
        try:
            with self.session.get(url, timeout=self.timeout, stream=True) as response:
                body = bytearray()
                for chunk in response.iter_content(64 * 1024):
                    body += chunk
                    if len(body) > self.max_bytes:
                        raise FetchError("oversize", f"{url} exceeds {self.max_bytes} bytes")
                media_type = response.headers.get("Content-Type", "").split(";")[0].strip().lower()
                return FetchResponse(url, response.status_code, media_type, bytes(body))
        except requests.Timeout as exc:
            raise FetchError("timeout", str(exc)) from exc
        except requests.RequestException as exc:
            raise FetchError("unreachable", str(exc)) from exc


class FixtureFetcher:
    """Serves responses from ``<root>/index.json``.

    The index maps a URL to ``{"status": int, "media_type": str, "file": str}``
    (``status`` defaults to 200); ``file`` is relative to ``root``. URLs not in
    the index behave like a dead host.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        index = self.root / "index.json"
        self.index = json.loads(index.read_text(encoding="utf-8")) if index.is_file() else {}
        self.calls = 0

    def fetch(self, url: str) -> FetchResponse:
        self.calls += 1
        entry = self.index.get(url)
        if entry is None:
            raise FetchError("unreachable", f"no fixture for {url}")
        body = (self.root / entry["file"]).read_bytes() if entry.get("file") else b""
        return FetchResponse(url, int(entry.get("status", 200)), entry.get("media_type", ""), body)


@dataclass
class GatewayMap:
    """Prefix rewrites applied just before fetching.

    ``ipfs://ipfs/`` is collapsed to ``ipfs://`` first, then the first rule
    whose prefix matches is applied. Traces always record the original URI.
    """

    rules: list[tuple[str, str]] = field(default_factory=lambda: [("ipfs://", "https://ipfs.io/ipfs/")])

    def apply(self, uri: str) -> str:
        if uri.lower().startswith("ipfs://ipfs/"):
            uri = "ipfs://" + uri[len("ipfs://ipfs/"):]
        for prefix, replacement in self.rules:
            if uri.lower().startswith(prefix.lower()):
                return replacement + uri[len(prefix):]
        return uri

    @classmethod
    def load(cls, path: str | Path) -> "GatewayMap":
        """Parse ``scheme_prefix -> replacement_prefix`` lines; ``#`` starts a comment."""
        rules = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'prefix -> replacement'")
            prefix, replacement = (part.strip() for part in line.split("->", 1))
            rules.append((prefix, replacement))
        # built-in rules stay as fallbacks behind the configured ones
        return cls(rules + [r for r in cls().rules if r[0] not in {p for p, _ in rules}])


DEFAULT_GATEWAY_MAP = GatewayMap()


@dataclass(frozen=True)
class FetchedDocument:
    document: Any
    media_type: str
    byte_size: int


def _is_success(status: int) -> bool:
    return 200 <= status < 300


def fetch_metadata(uri: str, fetcher: Fetcher, gateway_map: GatewayMap = DEFAULT_GATEWAY_MAP) -> FetchedDocument:
    response = fetcher.fetch(gateway_map.apply(uri))
    if not _is_success(response.status):
        raise FetchError("status", f"{uri} returned HTTP {response.status}")
    try:
        document = json.loads(response.body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FetchError("unparseable", f"{uri}: {exc}") from None
    return FetchedDocument(document, response.media_type, len(response.body))


def extract_asset_uri(metadata: Any, fields: Sequence[str] = DEFAULT_ASSET_FIELDS) -> str | None:
    if not isinstance(metadata, Mapping):
        return None
    for name in fields:
        value = metadata.get(name)
        if isinstance(value, str) and value.strip():
            return value.strip()
    return None


def has_media_extension(uri: str) -> bool:
    path = urlsplit(uri).path if "://" in uri else uri
    return posixpath.splitext(path.rstrip("/"))[1].lower() in MEDIA_EXTENSIONS


def _is_asset_media(media_type: str) -> bool:
    return media_type.startswith("image/") or media_type.startswith("video/")


def _is_document_media(media_type: str) -> bool:
    return media_type == "application/json" or media_type.endswith("+json")


def _category(uri: str, keywords: Sequence[str]) -> StorageCategory:
    try:
        return classify_uri(split_uri(uri), keywords)
    except EmptyUriError:
        return UNREADABLE


def trace_asset(
    token_uri: str,
    fetcher: Fetcher,
    *,
    max_depth: int = DEFAULT_MAX_DEPTH,
    gateway_map: GatewayMap = DEFAULT_GATEWAY_MAP,
    asset_fields: Sequence[str] = DEFAULT_ASSET_FIELDS,
    cloud_keywords: Sequence[str] = DEFAULT_CLOUD_KEYWORDS,
    token: TokenRef | None = None,
) -> ResolutionTrace:
    """Walk from ``token_uri`` to its final asset.

    At most ``max_depth`` network fetches are made in total. A candidate whose
    path ends in a known media extension is taken as the asset without being
    fetched; any other remote candidate is fetched and is the asset if the
    server declares an image/video type (that fetch is not a click).
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    steps: list[ResolutionStep] = []
    fetches = 0
    current = token_uri.strip() if isinstance(token_uri, str) else ""

    def finish(status: TraceStatus, final: str | None = None, detail: str | None = None) -> ResolutionTrace:
        category = _category(final if final is not None else current, cloud_keywords)
        return ResolutionTrace(token, steps, final, category, status, fetches, detail)

    if not current:
        return finish(TraceStatus.BROKEN_LINK, detail="empty tokenURI")

    while True:
        data = parse_data_uri(current)
        if data is not None:
            try:
                payload = decode_data_uri_payload(data)
            except DecodeError as exc:
                return finish(TraceStatus.BROKEN_LINK, detail=str(exc))
            steps.append(ResolutionStep(current, Transport.INLINE_DECODE, data.media_type, len(payload)))
            if not _is_document_media(data.media_type):
                return finish(TraceStatus.RESOLVED, current)
            try:
                document = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                return finish(TraceStatus.BROKEN_LINK, detail=f"inline metadata is not JSON: {exc}")
        else:
            if has_media_extension(current):
                return finish(TraceStatus.RESOLVED, current)
            if fetches >= max_depth:
                return finish(TraceStatus.DEPTH_EXCEEDED, detail=f"fetch budget of {max_depth} spent")
            fetches += 1
            try:
                response = fetcher.fetch(gateway_map.apply(current))
            except FetchError as exc:
                return finish(TraceStatus.BROKEN_LINK, detail=str(exc))
            if not _is_success(response.status):
                return finish(TraceStatus.BROKEN_LINK, detail=f"HTTP {response.status}")
            if _is_asset_media(response.media_type):
                return finish(TraceStatus.RESOLVED, current)
            try:
                document = json.loads(response.body.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                return finish(TraceStatus.BROKEN_LINK, detail="response is neither a document nor an asset")
            steps.append(ResolutionStep(current, Transport.NETWORK_FETCH, response.media_type, len(response.body)))

        asset = extract_asset_uri(document, asset_fields)
        if asset is None:
            return finish(TraceStatus.BROKEN_LINK, detail="metadata has no asset field")
        current = asset
