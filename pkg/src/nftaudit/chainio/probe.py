"""Per-contract probing: ABI fetch, tokenURI call, readability, cached on disk."""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from nftaudit.chainio.calls import (
    AbiStatus,
    OutcomeKind,
    Readability,
    TokenUriOutcome,
    call_token_uri,
    classify_readability,
    fetch_abi,
)
from nftaudit.chainio.clients import ClientPair
from nftaudit.classify import split_uri
from nftaudit.errors import AuditError, FileMissingError, ProbeFailedError, TransportError
from nftaudit.ingest import CollectionSample
from nftaudit.throttle import RetryPolicy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtraCheck:
    """tokenURI of an additional token, used to test the one-stem-per-collection assumption."""

    token_id: int
    kind: OutcomeKind
    uri: str | None
    stem_matches: bool | None


@dataclass(frozen=True)
class ContractProbe:
    contract_address: str
    sample_token_id: int
    readability: Readability
    sample_token_uri: str | None
    probe_timestamp: int
    raw_error: str | None = None
    extra_checks: tuple[ExtraCheck, ...] = ()

    def __post_init__(self):
        if (self.sample_token_uri is not None) != (self.readability is Readability.READABLE):
            raise ValueError("sample_token_uri must be present exactly for readable contracts")

    @property
    def stem_mismatches(self) -> list[int]:
        return [c.token_id for c in self.extra_checks if c.stem_matches is False]

    def to_record(self) -> dict:
        record = asdict(self)
        record["readability"] = self.readability.value
        record["sample_token_id"] = str(self.sample_token_id)
        record["extra_checks"] = [
            {**asdict(c), "kind": c.kind.value, "token_id": str(c.token_id)} for c in self.extra_checks
        ]
        return record

    @classmethod
    def from_record(cls, record: Mapping) -> "ContractProbe":
        return cls(
            contract_address=record["contract_address"],
            sample_token_id=int(record["sample_token_id"]),
            readability=Readability(record["readability"]),
            sample_token_uri=record.get("sample_token_uri"),
            probe_timestamp=int(record["probe_timestamp"]),
            raw_error=record.get("raw_error"),
            extra_checks=tuple(
                ExtraCheck(int(c["token_id"]), OutcomeKind(c["kind"]), c.get("uri"), c.get("stem_matches"))
                for c in record.get("extra_checks", ())
            ),
        )


@dataclass(frozen=True)
class ProbeFailure:
    contract_address: str
    sample_token_id: int
    error: str

    def to_record(self) -> dict:
        return {"contract_address": self.contract_address, "sample_token_id": str(self.sample_token_id),
                "error": self.error}


def dump_record(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class ProbeCache:
    """Append-only JSON-lines store keyed by contract address.

    The last record for an address wins. A torn final line (from a crash
    mid-write) is ignored on load and fenced off with a newline before the
    next append.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        data = self.path.read_bytes()
        for line in data.splitlines():
            try:
                entry = json.loads(line)
                self._entries[entry["probe"]["contract_address"]] = entry
            except (ValueError, KeyError, TypeError):
                log.warning("skipping unreadable cache line in %s", self.path)
        if data and not data.endswith(b"\n"):
            with self.path.open("ab") as fh:
                fh.write(b"\n")

    def __contains__(self, address: str) -> bool:
        return address in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, address: str) -> ContractProbe | None:
        entry = self._entries.get(address)
        return ContractProbe.from_record(entry["probe"]) if entry else None

    def raw(self, address: str) -> dict | None:
        entry = self._entries.get(address)
        return entry.get("raw") if entry else None

    def put(self, probe: ContractProbe, raw: Mapping | None = None) -> None:
        entry = {"probe": probe.to_record(), "raw": dict(raw or {})}
        line = (dump_record(entry) + "\n").encode("utf-8")
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("ab") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self._entries[probe.contract_address] = entry


def _stem(uri: str) -> tuple[str, str]:
    stem = split_uri(uri)
    return stem.scheme, stem.host_root


def _cache_usable(probe: ContractProbe, sample: CollectionSample, extra_ids: Sequence[int]) -> bool:
    if probe.sample_token_id != sample.sample_token_id:
        return False
    if probe.readability is not Readability.READABLE:
        return True
    checked = {c.token_id for c in probe.extra_checks}
    return set(extra_ids) <= checked


def probe_contract(
    sample: CollectionSample,
    clients: ClientPair,
    cache: ProbeCache | None = None,
    *,
    extra_token_ids: Sequence[int] = (),
    retry: RetryPolicy | None = None,
) -> ContractProbe:
    """Classify one collection from its sample token.

    A usable cached probe is returned without any client call. Exhausted
    retries raise ProbeFailedError carrying a ProbeFailure record.
    """
    address = sample.contract_address
    if cache is not None:
        cached = cache.get(address)
        if cached is not None and _cache_usable(cached, sample, extra_token_ids):
            return cached

    try:
        abi = fetch_abi(address, clients.explorer, retry)
        outcome: TokenUriOutcome | None = None
        extras: list[ExtraCheck] = []
        raw = {"abi_response": abi.raw_response}
        if abi.status is AbiStatus.VERIFIED:
            outcome = call_token_uri(address, abi.abi_document, sample.sample_token_id, clients.node, retry)
            raw["token_response"] = outcome.raw_error
            if outcome.kind is OutcomeKind.URI:
                sample_stem = _stem(outcome.value)
                for token_id in extra_token_ids:
                    extra = call_token_uri(address, abi.abi_document, token_id, clients.node, retry)
                    matches = _stem(extra.value) == sample_stem if extra.kind is OutcomeKind.URI else None
                    extras.append(ExtraCheck(token_id, extra.kind, extra.value, matches))
    except TransportError as exc:
        raise ProbeFailedError(ProbeFailure(address, sample.sample_token_id, str(exc))) from exc

    readability = classify_readability(abi, outcome)
    probe = ContractProbe(
        contract_address=address,
        sample_token_id=sample.sample_token_id,
        readability=readability,
        sample_token_uri=outcome.value if readability is Readability.READABLE else None,
        probe_timestamp=int(clients.clock()),
        raw_error=outcome.raw_error if outcome is not None else abi.describe(),
        extra_checks=tuple(extras),
    )
    if cache is not None:
        cache.put(probe, raw)
    return probe


@dataclass
class ProbeRun:
    probes: list[ContractProbe] = field(default_factory=list)
    failures: list[ProbeFailure] = field(default_factory=list)
    from_cache: int = 0


def probe_all(
    samples: Iterable[CollectionSample],
    clients: ClientPair,
    cache: ProbeCache | None = None,
    *,
    in_flight: int = 8,
    extra_token_ids: Mapping[str, Sequence[int]] | None = None,
    retry: RetryPolicy | None = None,
    progress=None,
) -> ProbeRun:
    """Probe every sample with at most ``in_flight`` concurrent contracts.

    Results are sorted by contract address, so the output does not depend on
    completion order.
    """
    if in_flight < 1:
        raise ValueError("in_flight must be at least 1")
    samples = list(samples)
    extra_token_ids = extra_token_ids or {}
    run = ProbeRun()
    lock = threading.Lock()

    def work(sample: CollectionSample) -> None:
        extras = extra_token_ids.get(sample.contract_address, ())
        was_cached = (
            cache is not None
            and (c := cache.get(sample.contract_address)) is not None
            and _cache_usable(c, sample, extras)
        )
        try:
            probe = probe_contract(sample, clients, cache, extra_token_ids=extras, retry=retry)
        except ProbeFailedError as exc:
            with lock:
                run.failures.append(exc.failure)
        except AuditError as exc:
            with lock:
                run.failures.append(ProbeFailure(sample.contract_address, sample.sample_token_id, str(exc)))
        else:
            with lock:
                run.probes.append(probe)
                run.from_cache += was_cached
        if progress is not None:
            progress(sample)

    pool = ThreadPoolExecutor(max_workers=in_flight)
    try:
        for future in [pool.submit(work, s) for s in samples]:
            future.result()
    except BaseException:
        # on interrupt, drop queued contracts; finished ones are already cached
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown()

    run.probes.sort(key=lambda p: p.contract_address)
    run.failures.sort(key=lambda f: f.contract_address)
    return run


def write_probes(probes: Iterable[ContractProbe], path: str | Path) -> None:
    lines = [dump_record(p.to_record()) + "\n" for p in sorted(probes, key=lambda p: p.contract_address)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_probes(path: str | Path) -> list[ContractProbe]:
    path = Path(path)
    if not path.is_file():
        raise FileMissingError(path)
    with path.open(encoding="utf-8") as fh:
        return [ContractProbe.from_record(json.loads(line)) for line in fh if line.strip()]
