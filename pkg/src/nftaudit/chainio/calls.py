"""ABI retrieval, tokenURI execution and the readability taxonomy."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any

from nftaudit.chainio.clients import ExplorerClient, NodeClient
from nftaudit.errors import (
    InconsistentInputError,
    MalformedAddressError,
    RateLimitedError,
    TransportError,
)
from nftaudit.ingest import MAX_TOKEN_ID, normalize_address
from nftaudit.throttle import RetryPolicy

# keccak256("tokenURI(uint256)")[:4]
TOKEN_URI_SELECTOR = "0xc87b56dd"

METHOD_MISSING_MESSAGE = (
    "(\"The function 'tokenURI' was not found in this contract's abi. \", "
    "'Are you sure you provided the correct contract abi?')"
)


class AbiStatus(str, Enum):
    VERIFIED = "verified"
    NOT_VERIFIED = "not_verified"


class OutcomeKind(str, Enum):
    URI = "uri"
    NONEXISTENT_TOKEN = "nonexistent_token"
    METHOD_MISSING = "method_missing"
    EMPTY_STRING = "empty_string"


class Readability(str, Enum):
    READABLE = "readable"
    BYTECODE_ONLY = "bytecode_only"
    INVALID_ABI_OR_TOKEN_ID = "invalid_abi_or_token_id"
    EMPTY_STRING = "empty_string"


@dataclass(frozen=True)
class AbiResult:
    contract_address: str
    status: AbiStatus
    abi_document: Any | None
    raw_response: str
    message: str = ""

    def describe(self) -> str:
        """Explorer error in ``<result> -- <message>`` form, e.g.
        ``Contract source code not verified -- NOTOK``."""
        return self.message


@dataclass(frozen=True)
class TokenUriOutcome:
    contract_address: str
    token_id: int
    kind: OutcomeKind
    value: str | None = None
    raw_error: str | None = None


def fetch_abi(address: str, client: ExplorerClient, retry: RetryPolicy | None = None) -> AbiResult:
    """Fetch a contract ABI; unverified contracts are a result, not an error.

    Raises MalformedAddressError before any request, TransportError when the
    explorer is unreachable (after retries) and RateLimitedError when the
    limit persists.
    """
    address = normalize_address(address)
    retry = retry or RetryPolicy()
    return retry.run(lambda: _parse_abi_response(address, client.get_abi(address)))


def _parse_abi_response(address: str, raw: str) -> AbiResult:
    try:
        body = json.loads(raw)
        status, message, result = str(body["status"]), str(body.get("message", "")), body["result"]
    except (ValueError, KeyError, TypeError):
        raise TransportError(f"unparseable explorer response for {address}: {raw[:200]!r}") from None

    if status == "1":
        try:
            abi = json.loads(result) if isinstance(result, str) else result
        except ValueError:
            raise TransportError(f"explorer returned an unparseable ABI for {address}") from None
        return AbiResult(address, AbiStatus.VERIFIED, abi, raw)

    text = str(result)
    lowered = text.lower()
    if "rate limit" in lowered:
        raise RateLimitedError(f"explorer: {text}")
    if "invalid api key" in lowered or "missing/invalid api key" in lowered:
        raise TransportError(f"explorer: {text}", retryable=False)
    if "invalid address" in lowered:
        raise MalformedAddressError(address)
    return AbiResult(address, AbiStatus.NOT_VERIFIED, None, raw, f"{text} -- {message}")


def has_token_uri(abi: Any) -> bool:
    if not isinstance(abi, list):
        return False
    for entry in abi:
        if (
            isinstance(entry, dict)
            and entry.get("type", "function") == "function"
            and entry.get("name") == "tokenURI"
            and [i.get("type") for i in entry.get("inputs", []) if isinstance(i, dict)] == ["uint256"]
        ):
            return True
    return False


def encode_token_uri_call(token_id: int) -> str:
    return TOKEN_URI_SELECTOR + token_id.to_bytes(32, "big").hex()


def encode_abi_string(value: str) -> str:
    """ABI-encode a single ``string`` return value as 0x-prefixed hex."""
    raw = value.encode("utf-8")
    padded = raw + b"\x00" * (-len(raw) % 32)
    return "0x" + (32).to_bytes(32, "big").hex() + len(raw).to_bytes(32, "big").hex() + padded.hex()


def decode_abi_string(data: str) -> str:
    """Decode a single ABI-encoded ``string``; raises ValueError on malformed data."""
    blob = bytes.fromhex(data[2:] if data.startswith("0x") else data)
    if len(blob) < 64:
        raise ValueError(f"return data too short ({len(blob)} bytes)")
    offset = int.from_bytes(blob[:32], "big")
    if offset + 32 > len(blob):
        raise ValueError("string offset out of range")
    length = int.from_bytes(blob[offset:offset + 32], "big")
    start = offset + 32
    if start + length > len(blob):
        raise ValueError("string length out of range")
    return blob[start:start + length].decode("utf-8", errors="replace")


def call_token_uri(address: str, abi: Any, token_id: int, client: NodeClient,
                   retry: RetryPolicy | None = None) -> TokenUriOutcome:
    """Execute ``tokenURI(token_id)``.

    Every contract-level failure becomes an outcome. Reverts are recorded as
    nonexistent_token whatever their reason string, since the sampled id is
    what the contract refused; the original message stays in ``raw_error``.
    """
    address = normalize_address(address)
    if not 0 <= token_id <= MAX_TOKEN_ID:
        raise ValueError(f"token id out of uint256 range: {token_id}")
    if isinstance(abi, str):
        abi = json.loads(abi)
    if not has_token_uri(abi):
        return TokenUriOutcome(address, token_id, OutcomeKind.METHOD_MISSING, raw_error=METHOD_MISSING_MESSAGE)

    data = encode_token_uri_call(token_id)
    retry = retry or RetryPolicy()
    raw = retry.run(lambda: _checked_node_call(client, address, data))
    body = json.loads(raw)

    if body.get("error") is not None:
        return TokenUriOutcome(address, token_id, OutcomeKind.NONEXISTENT_TOKEN, raw_error=raw)
    result = body.get("result")
    try:
        value = decode_abi_string(result)
    except (ValueError, TypeError) as exc:
        return TokenUriOutcome(address, token_id, OutcomeKind.NONEXISTENT_TOKEN,
                               raw_error=f"undecodable return data ({exc}): {raw}")
    if not value.strip():
        return TokenUriOutcome(address, token_id, OutcomeKind.EMPTY_STRING, raw_error=raw)
    return TokenUriOutcome(address, token_id, OutcomeKind.URI, value=value.strip())


def _is_revert(error: dict) -> bool:
    message = str(error.get("message", "")).lower()
    return error.get("code") == 3 or "revert" in message or "invalid opcode" in message


def _checked_node_call(client: NodeClient, address: str, data: str) -> str:
    raw = client.call(address, data)
    try:
        body = json.loads(raw)
    except ValueError:
        raise TransportError(f"unparseable node response for {address}: {raw[:200]!r}") from None
    if not isinstance(body, dict):
        raise TransportError(f"unexpected node response for {address}: {raw[:200]!r}")
    error = body.get("error")
    if error is not None:
        if not isinstance(error, dict):
            raise TransportError(f"node error for {address}: {error!r}")
        message = str(error.get("message", ""))
        if error.get("code") in (429, -32005) or "rate limit" in message.lower():
            raise RateLimitedError(f"node: {message}")
        if not _is_revert(error):
            raise TransportError(f"node error for {address}: {message}")
    return raw


def classify_readability(abi: AbiResult, outcome: TokenUriOutcome | None) -> Readability:
    if abi.status is AbiStatus.NOT_VERIFIED:
        if outcome is not None:
            raise InconsistentInputError("a tokenURI outcome was given for an unverified contract")
        return Readability.BYTECODE_ONLY
    if outcome is None:
        raise InconsistentInputError("verified ABI requires a tokenURI outcome")
    if outcome.kind is OutcomeKind.URI:
        return Readability.READABLE
    if outcome.kind is OutcomeKind.EMPTY_STRING:
        return Readability.EMPTY_STRING
    return Readability.INVALID_ABI_OR_TOKEN_ID
