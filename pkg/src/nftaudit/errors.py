"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class AuditError(Exception):
    """Base class for all errors raised by nftaudit."""


class IngestError(AuditError):
    pass


class FileMissingError(IngestError):
    def __init__(self, path):
        super().__init__(f"file not found: {path}")
        self.path = path


class SchemaMismatchError(IngestError):
    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class MalformedValueError(SchemaMismatchError):
    """A row has a syntactically invalid address or token id."""


class MalformedAddressError(AuditError, ValueError):
    def __init__(self, address):
        super().__init__(f"malformed address: {address!r}")
        self.address = address


class TransportError(AuditError):
    """A remote endpoint could not be reached or answered garbage.

    ``retryable`` separates transient failures from configuration mistakes
    (bad API key, unknown host scheme) that no amount of waiting will fix.
    """

    def __init__(self, message: str, *, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class RateLimitedError(TransportError):
    def __init__(self, message: str, *, retry_after: float | None = None):
        super().__init__(message, retryable=True)
        self.retry_after = retry_after


class InconsistentInputError(AuditError, ValueError):
    pass


class DecodeError(AuditError, ValueError):
    """Base for data-URI decoding failures; keeps the offending payload."""

    def __init__(self, message: str, payload: str = ""):
        super().__init__(message)
        self.payload = payload


class BadPrefixError(DecodeError):
    pass


class InvalidBase64Error(DecodeError):
    pass


class UnparseablePayloadError(DecodeError):
    pass


class EmptyUriError(AuditError, ValueError):
    pass


class FetchError(AuditError):
    """A metadata fetch failed; ``kind`` is one of unreachable, status,
    unparseable, oversize, timeout or unsupported."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class MissingProbeError(AuditError):
    def __init__(self, contract_address: str):
        super().__init__(f"no probe recorded for contract {contract_address}")
        self.contract_address = contract_address


class ProbeFailedError(AuditError):
    def __init__(self, failure):
        super().__init__(f"probe failed for {failure.contract_address}: {failure.error}")
        self.failure = failure
