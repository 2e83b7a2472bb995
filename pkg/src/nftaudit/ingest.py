"""Load mint/transfer exports and reduce them to a token reference list.

The reference list is the set of distinct ``(contract_address, token_id)``
pairs seen in the export. One sample token per contract is then chosen for
probing; every other token in the collection inherits its classification.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from enum import Enum
from itertools import groupby
from pathlib import Path
from typing import Iterable, Iterator

from nftaudit.errors import (
    FileMissingError,
    MalformedAddressError,
    MalformedValueError,
    SchemaMismatchError,
)

ADDRESS_RE = re.compile(r"^0x[0-9a-fA-F]{40}$")
TX_HASH_RE = re.compile(r"^0x[0-9a-fA-F]{64}$")
ZERO_ADDRESS = "0x" + "0" * 40
MAX_TOKEN_ID = 2**256 - 1

EVENT_COLUMNS = (
    "tx_hash",
    "block_number",
    "timestamp",
    "contract_address",
    "token_id",
    "from_address",
    "to_address",
    "kind",
)
REFERENCE_COLUMNS = ("contract_address", "token_id")
SAMPLE_COLUMNS = ("contract_address", "sample_token_id", "token_count")


class EventKind(str, Enum):
    MINT = "mint"
    TRANSFER = "transfer"


class EventFormat(str, Enum):
    DELIMITED_TEXT = "delimited_text"
    LINE_RECORDS = "line_records"


@dataclass(frozen=True)
class TransferEvent:
    tx_hash: str
    block_number: int
    timestamp: int
    contract_address: str
    token_id: int
    from_address: str
    to_address: str
    kind: EventKind


@dataclass(frozen=True, order=True)
class TokenRef:
    contract_address: str
    token_id: int


@dataclass(frozen=True)
class CollectionSample:
    contract_address: str
    sample_token_id: int
    token_count: int


def normalize_address(value) -> str:
    """Return the lowercase form of a 20-byte hex address.

    Checksummed (mixed-case) input is accepted; the checksum is not verified.
    """
    if not isinstance(value, str) or not ADDRESS_RE.match(value.strip()):
        raise MalformedAddressError(value)
    return value.strip().lower()


def parse_token_id(value) -> int:
    """Parse a decimal token id (int or string) in the uint256 range."""
    if isinstance(value, bool):
        raise ValueError(f"token id must be an integer, got {value!r}")
    if isinstance(value, int):
        token_id = value
    elif isinstance(value, str) and value.strip().isdigit():
        token_id = int(value.strip())
    else:
        raise ValueError(f"token id must be a decimal integer, got {value!r}")
    if not 0 <= token_id <= MAX_TOKEN_ID:
        raise ValueError(f"token id out of uint256 range: {value!r}")
    return token_id


def _parse_uint(value, *, row: int, column: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool) and value >= 0:
        return value
    if isinstance(value, str) and value.strip().isdigit():
        return int(value.strip())
    raise SchemaMismatchError(f"expected unsigned integer, got {value!r}", row=row, column=column)


def _parse_row(record: dict, row: int) -> TransferEvent:
    for column in EVENT_COLUMNS:
        if record.get(column) is None:
            raise SchemaMismatchError("missing value", row=row, column=column)

    tx_hash = str(record["tx_hash"]).strip()
    if not TX_HASH_RE.match(tx_hash):
        raise SchemaMismatchError(f"malformed tx hash {tx_hash!r}", row=row, column="tx_hash")

    addresses = {}
    for column in ("contract_address", "from_address", "to_address"):
        try:
            addresses[column] = normalize_address(record[column])
        except MalformedAddressError:
            raise MalformedValueError(
                f"malformed address {record[column]!r}", row=row, column=column
            ) from None
    try:
        token_id = parse_token_id(record["token_id"])
    except ValueError as exc:
        raise MalformedValueError(str(exc), row=row, column="token_id") from None

    try:
        kind = EventKind(str(record["kind"]).strip().lower())
    except ValueError:
        raise SchemaMismatchError(f"unknown kind {record['kind']!r}", row=row, column="kind") from None
    if (kind is EventKind.MINT) != (addresses["from_address"] == ZERO_ADDRESS):
        raise SchemaMismatchError(
            "kind must be 'mint' exactly when from_address is the zero address",
            row=row,
            column="kind",
        )

    return TransferEvent(
        tx_hash=tx_hash.lower(),
        block_number=_parse_uint(record["block_number"], row=row, column="block_number"),
        timestamp=_parse_uint(record["timestamp"], row=row, column="timestamp"),
        token_id=token_id,
        kind=kind,
        **addresses,
    )


def _delimited_records(path: Path) -> Iterator[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaMismatchError("missing header row", row=0)
        header = [name.strip() for name in reader.fieldnames]
        for column in EVENT_COLUMNS:
            if column not in header:
                raise SchemaMismatchError("missing column in header", row=0, column=column)
        reader.fieldnames = header
        for record in reader:
            if None in record:
                raise SchemaMismatchError("too many fields", row=reader.line_num - 1)
            yield record


def _line_records(path: Path) -> Iterator[dict]:
    with path.open(encoding="utf-8") as fh:
        row = 0
        for line in fh:
            if not line.strip():
                continue
            row += 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaMismatchError(f"invalid record: {exc.msg}", row=row) from None
            if not isinstance(record, dict):
                raise SchemaMismatchError("record is not an object", row=row)
            yield record


def infer_format(path: str | Path) -> EventFormat:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson", ".json"):
        return EventFormat.LINE_RECORDS
    return EventFormat.DELIMITED_TEXT


def load_events(path: str | Path, format: EventFormat | str | None = None) -> list[TransferEvent]:
    """Read a transfer export, one event per row, in file order.

    Rows are numbered from 1 (the header of a delimited file is row 0).
    Two rows of the same transaction touching the same token with different
    kinds are rejected rather than merged.
    """
    path = Path(path)
    if not path.is_file():
        raise FileMissingError(path)
    fmt = EventFormat(format) if format is not None else infer_format(path)
    records = _delimited_records(path) if fmt is EventFormat.DELIMITED_TEXT else _line_records(path)

    events = []
    seen_kinds: dict[tuple[str, str, int], EventKind] = {}
    for row, record in enumerate(records, start=1):
        event = _parse_row(record, row)
        key = (event.tx_hash, event.contract_address, event.token_id)
        previous = seen_kinds.setdefault(key, event.kind)
        if previous is not event.kind:
            raise SchemaMismatchError(
                f"conflicting kind for tx {event.tx_hash} token {event.token_id}",
                row=row,
                column="kind",
            )
        events.append(event)
    return events


def build_reference_list(events: Iterable[TransferEvent]) -> list[TokenRef]:
    return sorted({TokenRef(e.contract_address, e.token_id) for e in events})


def sample_collections(refs: Iterable[TokenRef]) -> list[CollectionSample]:
    """One sample per contract: the smallest token id, plus the collection size."""
    samples = []
    for contract, group in groupby(sorted(refs), key=lambda r: r.contract_address):
        token_ids = [r.token_id for r in group]
        samples.append(CollectionSample(contract, min(token_ids), len(token_ids)))
    return samples


def tokens_by_contract(refs: Iterable[TokenRef]) -> dict[str, list[int]]:
    grouped: dict[str, list[int]] = {}
    for ref in sorted(refs):
        grouped.setdefault(ref.contract_address, []).append(ref.token_id)
    return grouped


# -- stage files -------------------------------------------------------------


def write_reference_list(refs: Iterable[TokenRef], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REFERENCE_COLUMNS)
        for ref in refs:
            writer.writerow((ref.contract_address, str(ref.token_id)))


def read_reference_list(path: str | Path) -> list[TokenRef]:
    path = Path(path)
    if not path.is_file():
        raise FileMissingError(path)
    refs = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(REFERENCE_COLUMNS):
            raise SchemaMismatchError("unexpected reference list header", row=0)
        for row, record in enumerate(reader, start=1):
            try:
                refs.append(
                    TokenRef(
                        normalize_address(record["contract_address"]),
                        parse_token_id(record["token_id"]),
                    )
                )
            except ValueError as exc:
                raise MalformedValueError(str(exc), row=row) from None
    return refs


def write_samples(samples: Iterable[CollectionSample], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SAMPLE_COLUMNS)
        for s in samples:
            writer.writerow((s.contract_address, str(s.sample_token_id), str(s.token_count)))


def read_samples(path: str | Path) -> list[CollectionSample]:
    path = Path(path)
    if not path.is_file():
        raise FileMissingError(path)
    samples = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(SAMPLE_COLUMNS):
            raise SchemaMismatchError("unexpected samples header", row=0)
        for row, record in enumerate(reader, start=1):
            try:
                samples.append(
                    CollectionSample(
                        normalize_address(record["contract_address"]),
                        parse_token_id(record["sample_token_id"]),
                        int(record["token_count"]),
                    )
                )
            except ValueError as exc:
                raise MalformedValueError(str(exc), row=row) from None
    return samples
