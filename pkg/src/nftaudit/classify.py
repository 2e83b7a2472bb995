"""Storage classification of tokenURIs and decoding of on-chain metadata.

A tokenURI is reduced to its scheme and host root, which decides one of six
storage categories. Those roll up into three permanence classes.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Sequence
from urllib.parse import unquote_to_bytes

from nftaudit.errors import (
    BadPrefixError,
    EmptyUriError,
    InvalidBase64Error,
    UnparseablePayloadError,
)

DEFAULT_CLOUD_KEYWORDS = (
    "heroku",
    "aws",
    "google",
    "s3",
    "azure",
    "microsoft",
    "kyndryl",
    "digitalocean",
    "linode",
    "alibaba",
    "oracle",
    "tencent",
)

_SCHEME_RE = re.compile(r"^([a-zA-Z][a-zA-Z0-9+.\-]*):")
_DATA_URI_RE = re.compile(r"^data:([^,]*),", re.IGNORECASE | re.DOTALL)


class Category(str, Enum):
    IPFS = "ipfs"
    PINATA = "pinata"
    CLOUD_PROVIDER = "cloud_provider"
    PRIVATE_DOMAIN = "private_domain"
    ONCHAIN_BASE64 = "onchain_base64"
    UNREADABLE = "unreadable"


class PermanenceClass(str, Enum):
    PERMANENT = "permanent"
    NON_PERMANENT = "non-permanent"
    NOT_READABLE = "not readable"


@dataclass(frozen=True)
class UriStem:
    scheme: str
    host_root: str
    raw: str

    @property
    def key(self) -> str:
        """Ranking key: the host root, or ``scheme:`` for host-less URIs."""
        if self.host_root:
            return self.host_root
        return f"{self.scheme}:" if self.scheme else ""


@dataclass(frozen=True)
class StorageCategory:
    category: Category
    keyword: str | None = None
    # set for data URIs that are not base64 (counted as private domains)
    anomaly: str | None = field(default=None, compare=False)

    def __str__(self) -> str:
        if self.keyword is not None:
            return f"{self.category.value}({self.keyword})"
        return self.category.value

    @classmethod
    def parse(cls, text: str) -> "StorageCategory":
        m = re.fullmatch(r"(\w+)(?:\((.*)\))?", text.strip())
        if not m:
            raise ValueError(f"not a storage category: {text!r}")
        return cls(Category(m.group(1)), m.group(2))


UNREADABLE = StorageCategory(Category.UNREADABLE)


@dataclass
class OnChainAsset:
    metadata: Any
    image_payload: bytes | None = None
    image_media_type: str | None = None


@dataclass(frozen=True)
class DataUri:
    media_type: str
    parameters: tuple[str, ...]
    is_base64: bool
    payload: str


def parse_data_uri(uri: str) -> DataUri | None:
    """Split ``data:[<media type>][;param]*[;base64],<payload>``; None if not a data URI."""
    m = _DATA_URI_RE.match(uri.strip())
    if not m:
        return None
    parts = [p.strip() for p in m.group(1).split(";")]
    media_type = parts[0].lower() or "text/plain"
    params = [p for p in parts[1:] if p]
    is_base64 = bool(params) and params[-1].lower() == "base64"
    if is_base64:
        params = params[:-1]
    return DataUri(media_type, tuple(params), is_base64, uri.strip()[m.end():])


def b64decode_lenient(payload: str) -> bytes:
    """Decode standard or URL-safe base64, repairing missing padding."""
    text = re.sub(r"\s+", "", payload).rstrip("=")
    text = text.translate(str.maketrans("-_", "+/"))
    if len(text) % 4 == 1:
        raise InvalidBase64Error("base64 payload has impossible length", payload)
    text += "=" * (-len(text) % 4)
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise InvalidBase64Error(f"invalid base64: {exc}", payload) from None


def decode_data_uri_payload(data: DataUri) -> bytes:
    if data.is_base64:
        return b64decode_lenient(data.payload)
    return unquote_to_bytes(data.payload)


# -- splitting and classification ----------------------------------------------


def split_uri(raw: str) -> UriStem:
    """Reduce a tokenURI to ``(scheme, host_root)``, both lowercased.

    ``https://blockdataanalysis.com/v1/22`` gives ``("https",
    "blockdataanalysis.com")``. Data URIs and other non-hierarchical schemes
    have an empty host root; strings without a scheme use their first path
    segment.
    """
    text = raw.strip() if isinstance(raw, str) else ""
    if not text:
        raise EmptyUriError("empty URI")

    m = _SCHEME_RE.match(text)
    if m:
        scheme = m.group(1).lower()
        rest = text[m.end():]
        if rest.startswith("//"):
            authority = re.split(r"[/?#]", rest[2:], maxsplit=1)[0]
            return UriStem(scheme, authority.lower(), raw)
        # "host:8080/path" is a scheme-less host with a port, not a scheme
        if scheme == "data" or not rest[:1].isdigit():
            return UriStem(scheme, "", raw)

    first = re.split(r"[/?#]", text.lstrip("/"), maxsplit=1)[0]
    return UriStem("", first.lower(), raw)


def _first_keyword(host_root: str, keywords: Sequence[str]) -> str | None:
    # leftmost occurrence in the host wins; list order breaks ties
    best = None
    for rank, keyword in enumerate(keywords):
        pos = host_root.find(keyword)
        if pos >= 0 and (best is None or (pos, rank) < best[:2]):
            best = (pos, rank, keyword)
    return best[2] if best else None


def classify_uri(stem: UriStem, cloud_keywords: Sequence[str] = DEFAULT_CLOUD_KEYWORDS) -> StorageCategory:
    """Assign one storage category; the first matching rule wins.

    1. base64 data URI (on-chain)
    2. "pinata" in scheme or host root
    3. ipfs scheme, or "ipfs" in host root
    4. a cloud keyword in the host root
    5. anything else is a private domain
    """
    scheme, host = stem.scheme.lower(), stem.host_root.lower()
    if scheme == "data":
        data = parse_data_uri(stem.raw)
        if data is not None and data.is_base64:
            return StorageCategory(Category.ONCHAIN_BASE64)
        return StorageCategory(Category.PRIVATE_DOMAIN, anomaly="non_base64_data_uri")
    if "pinata" in host or "pinata" in scheme:
        return StorageCategory(Category.PINATA)
    if scheme == "ipfs" or "ipfs" in host:
        return StorageCategory(Category.IPFS)
    keyword = _first_keyword(host, [k.lower() for k in cloud_keywords])
    if keyword is not None:
        return StorageCategory(Category.CLOUD_PROVIDER, keyword)
    return StorageCategory(Category.PRIVATE_DOMAIN)


_PERMANENCE = {
    Category.IPFS: PermanenceClass.PERMANENT,
    Category.PINATA: PermanenceClass.PERMANENT,
    Category.ONCHAIN_BASE64: PermanenceClass.PERMANENT,
    Category.CLOUD_PROVIDER: PermanenceClass.NON_PERMANENT,
    Category.PRIVATE_DOMAIN: PermanenceClass.NON_PERMANENT,
    Category.UNREADABLE: PermanenceClass.NOT_READABLE,
}


def map_permanence(category: StorageCategory | Category) -> PermanenceClass:
    if isinstance(category, StorageCategory):
        category = category.category
    return _PERMANENCE[Category(category)]


def load_keywords(path: str | Path | None = None) -> tuple[str, ...]:
    """Read a keyword list (one per line, ``#`` comments allowed).

    Without a path the bundled default list is returned.
    """
    if path is None:
        text = resources.files("nftaudit").joinpath("data/cloud_keywords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    keywords = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line and line not in keywords:
            keywords.append(line)
    return tuple(keywords)


# -- on-chain decoding ---------------------------------------------------------


def decode_onchain_json(data_uri: str) -> OnChainAsset:
    """Decode the first layer of an on-chain token: base64 JSON metadata."""
    data = parse_data_uri(data_uri) if isinstance(data_uri, str) else None
    if data is None or data.media_type != "application/json" or not data.is_base64:
        raise BadPrefixError("expected a data:application/json;base64, URI", str(data_uri))
    raw = b64decode_lenient(data.payload)
    try:
        metadata = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UnparseablePayloadError(f"metadata is not JSON: {exc}", data.payload) from None
    return OnChainAsset(metadata=metadata)


def decode_onchain_image(asset: OnChainAsset) -> OnChainAsset:
    """Decode the second layer: an inline base64 SVG in the ``image`` field.

    Any other image form (remote URI, other media types, no image at all)
    leaves the payload empty.
    """
    image = asset.metadata.get("image") if isinstance(asset.metadata, dict) else None
    data = parse_data_uri(image) if isinstance(image, str) else None
    if data is None or data.media_type != "image/svg+xml" or not data.is_base64:
        return OnChainAsset(asset.metadata)
    return OnChainAsset(asset.metadata, b64decode_lenient(data.payload), data.media_type)


def export_onchain_asset(asset: OnChainAsset, contract_address: str, token_id: int, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{contract_address}_{token_id}"
    written = [outdir / f"{stem}.json"]
    written[0].write_text(json.dumps(asset.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if asset.image_payload is not None:
        svg = outdir / f"{stem}.svg"
        svg.write_bytes(asset.image_payload)
        written.append(svg)
    return written
