"""Collection propagation, permanence aggregation and report emission."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from nftaudit.chainio.calls import Readability
from nftaudit.chainio.probe import ContractProbe
from nftaudit.classify import (
    DEFAULT_CLOUD_KEYWORDS,
    UNREADABLE,
    Category,
    PermanenceClass,
    StorageCategory,
    UriStem,
    classify_uri,
    map_permanence,
    split_uri,
)
from nftaudit.errors import AuditError, MissingProbeError
from nftaudit.ingest import CollectionSample, TokenRef

DEFAULT_TOP_N = 17

# row order of the storage table follows the per-category breakdown table
STORAGE_ORDER = (
    Category.CLOUD_PROVIDER,
    Category.PRIVATE_DOMAIN,
    Category.IPFS,
    Category.PINATA,
    Category.ONCHAIN_BASE64,
    Category.UNREADABLE,
)
PERMANENCE_ORDER = (PermanenceClass.NON_PERMANENT, PermanenceClass.NOT_READABLE, PermanenceClass.PERMANENT)
READABILITY_ORDER = (
    Readability.READABLE,
    Readability.BYTECODE_ONLY,
    Readability.INVALID_ABI_OR_TOKEN_ID,
    Readability.EMPTY_STRING,
)
BREAKDOWNS = ("permanence", "storage", "readability", "top_stems")


def percent_half_up(n: int, total: int) -> Decimal:
    """``100 * n / total`` rounded half-up to 2 decimals, in exact integer arithmetic."""
    if total <= 0:
        return Decimal("0.00")
    hundredths = (20000 * n + total) // (2 * total)
    return Decimal(f"{hundredths // 100}.{hundredths % 100:02d}")


@dataclass(frozen=True)
class CategoryCount:
    label: str
    count: int
    percent: Decimal


def _breakdown(counts: Mapping[str, int], labels: Sequence[str], total: int) -> list[CategoryCount]:
    return [CategoryCount(label, counts.get(label, 0), percent_half_up(counts.get(label, 0), total)) for label in labels]


@dataclass(frozen=True)
class PermanenceReport:
    """Token-weighted storage and permanence breakdowns plus the
    contract-weighted readability breakdown."""

    total_tokens: int
    total_contracts: int
    by_readability: list[CategoryCount]
    by_storage: list[CategoryCount]
    by_permanence: list[CategoryCount]
    top_stems: list[tuple[str, int]] = field(default_factory=list)
    generated_at: int = 0

    def storage_counts(self) -> dict[str, int]:
        return {row.label: row.count for row in self.by_storage}

    def readability_counts(self) -> dict[str, int]:
        return {row.label: row.count for row in self.by_readability}

    def to_document(self) -> dict:
        def rows(breakdown, count_key):
            return [{"label": r.label, count_key: r.count, "percent": f"{r.percent:.2f}"} for r in breakdown]

        return {
            "generated_at": self.generated_at,
            "total_tokens": self.total_tokens,
            "total_contracts": self.total_contracts,
            "by_permanence": {"basis": "tokens", "rows": rows(self.by_permanence, "n_tokens")},
            "by_storage": {"basis": "tokens", "rows": rows(self.by_storage, "n_tokens")},
            "by_readability": {"basis": "contracts", "rows": rows(self.by_readability, "n_contracts")},
            "top_stems": [{"host_root": stem, "n_tokens": n} for stem, n in self.top_stems],
        }


# -- propagation ---------------------------------------------------------------


@dataclass(frozen=True)
class CollectionClass:
    category: StorageCategory
    stem: UriStem | None


def classify_collections(
    probes: Iterable[ContractProbe],
    samples: Iterable[CollectionSample],
    cloud_keywords: Sequence[str] = DEFAULT_CLOUD_KEYWORDS,
) -> dict[str, CollectionClass]:
    """Classify each sampled contract from its probe's sample URI."""
    by_address = {p.contract_address: p for p in probes}
    classes = {}
    for sample in samples:
        probe = by_address.get(sample.contract_address)
        if probe is None:
            raise MissingProbeError(sample.contract_address)
        if probe.readability is not Readability.READABLE:
            classes[sample.contract_address] = CollectionClass(UNREADABLE, None)
            continue
        stem = split_uri(probe.sample_token_uri)
        classes[sample.contract_address] = CollectionClass(classify_uri(stem, cloud_keywords), stem)
    return classes


def propagate(
    probes: Iterable[ContractProbe],
    samples: Iterable[CollectionSample],
    refs: Iterable[TokenRef],
    cloud_keywords: Sequence[str] = DEFAULT_CLOUD_KEYWORDS,
) -> dict[TokenRef, StorageCategory]:
    """Give every token the category of its collection's sample URI."""
    classes = classify_collections(probes, samples, cloud_keywords)
    result = {}
    for ref in refs:
        cls = classes.get(ref.contract_address)
        if cls is None:
            raise MissingProbeError(ref.contract_address)
        result[ref] = cls.category
    return result


# -- aggregation ---------------------------------------------------------------


def rank_stems(counts: Mapping[str, int], n: int) -> list[tuple[str, int]]:
    if n < 1:
        raise ValueError("n must be at least 1")
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:n]


def top_stems(stems: Iterable[str], n: int = DEFAULT_TOP_N) -> list[tuple[str, int]]:
    """Rank per-token stems by frequency; ties go to the lexicographically smaller stem."""
    return rank_stems(Counter(s for s in stems if s), n)


def aggregate_counts(
    storage_counts: Mapping[str, int],
    readability_counts: Mapping[str, int] | None = None,
    stem_counts: Mapping[str, int] | None = None,
    *,
    top_n: int = DEFAULT_TOP_N,
    generated_at: int = 0,
) -> PermanenceReport:
    storage = {Category(k).value: int(v) for k, v in storage_counts.items()}
    total = sum(storage.values())
    permanence: Counter[str] = Counter()
    for label, n in storage.items():
        permanence[map_permanence(Category(label)).value] += n

    readability = {Readability(k).value: int(v) for k, v in (readability_counts or {}).items()}
    contracts = sum(readability.values())

    return PermanenceReport(
        total_tokens=total,
        total_contracts=contracts,
        by_readability=_breakdown(readability, [r.value for r in READABILITY_ORDER], contracts),
        by_storage=_breakdown(storage, [c.value for c in STORAGE_ORDER], total),
        by_permanence=_breakdown(permanence, [p.value for p in PERMANENCE_ORDER], total),
        top_stems=rank_stems(stem_counts, top_n) if stem_counts else [],
        generated_at=generated_at,
    )


def aggregate(
    token_categories: Mapping[TokenRef, StorageCategory],
    *,
    probes: Iterable[ContractProbe] = (),
    token_stems: Mapping[TokenRef, str] | None = None,
    top_n: int = DEFAULT_TOP_N,
    generated_at: int = 0,
) -> PermanenceReport:
    """Build the report from a per-token category map.

    Storage and permanence percentages are over tokens; readability
    percentages are over probed contracts.
    """
    storage = Counter(c.category.value for c in token_categories.values())
    readability = Counter(p.readability.value for p in probes)
    stems = Counter(s for s in (token_stems or {}).values() if s)
    return aggregate_counts(storage, readability, stems, top_n=top_n, generated_at=generated_at)


# -- emission ------------------------------------------------------------------


def _delimited(report: PermanenceReport, breakdown: str) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if breakdown == "top_stems":
        writer.writerow(("host_root", "n_tokens"))
        writer.writerows(report.top_stems)
        return out.getvalue()
    rows, count_header = {
        "permanence": (report.by_permanence, "n_tokens"),
        "storage": (report.by_storage, "n_tokens"),
        "readability": (report.by_readability, "n_contracts"),
    }[breakdown]
    writer.writerow(("label", count_header, "percent"))
    for row in rows:
        writer.writerow((row.label, row.count, f"{row.percent:.2f}"))
    return out.getvalue()


def _table(title: str, header: Sequence[str], rows: Sequence[Sequence[str]], text_columns: int = 1) -> list[str]:
    """Fixed-width table; the first ``text_columns`` are left-aligned, the rest right-aligned."""
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]

    def line(cells):
        padded = [str(c).ljust(w) if i < text_columns else str(c).rjust(w)
                  for i, (c, w) in enumerate(zip(cells, widths))]
        return "  ".join(padded).rstrip()

    return [title, line(header), *(line(r) for r in rows), ""]


def _breakdown_table(title: str, label: str, count_header: str, rows: list[CategoryCount], total: int) -> list[str]:
    body = [(r.label, str(r.count), f"{r.percent:.2f}") for r in rows]
    body.append(("Total", str(total), "100.00" if total else "0.00"))
    return _table(title, (label, count_header, "%"), body)


def _human_table(report: PermanenceReport) -> str:
    lines = [f"NFT metadata permanence report (generated_at={report.generated_at})", ""]
    lines += _breakdown_table("Permanence (share of tokens)", "permanence", "n_tokens",
                              report.by_permanence, report.total_tokens)
    lines += _breakdown_table("Storage category (share of tokens)", "storage", "n_tokens",
                              report.by_storage, report.total_tokens)
    lines += _breakdown_table("Readability (share of contracts)", "readability", "n_contracts",
                              report.by_readability, report.total_contracts)
    stems = [(str(i), stem, str(n)) for i, (stem, n) in enumerate(report.top_stems, start=1)]
    lines += _table("Top URI stems", ("rank", "host_root", "n_tokens"), stems, text_columns=2)
    return "\n".join(lines)


def emit_report(report: PermanenceReport, format: str, breakdown: str | None = None) -> bytes:
    """Serialize ``report`` deterministically.

    ``format`` is ``structured`` (JSON), ``delimited`` (CSV, one breakdown
    selected by ``breakdown``) or ``human_table`` (fixed-width text).
    """
    if format == "structured":
        text = json.dumps(report.to_document(), indent=2, sort_keys=True) + "\n"
    elif format == "delimited":
        if breakdown not in BREAKDOWNS:
            raise ValueError(f"delimited output needs a breakdown, one of {BREAKDOWNS}")
        text = _delimited(report, breakdown)
    elif format == "human_table":
        text = _human_table(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    return text.encode("utf-8")


def write_report(report: PermanenceReport, outdir: str | Path, prefix: str = "report") -> list[Path]:
    outdir = Path(outdir)
    outputs = {f"{prefix}.json": emit_report(report, "structured"), f"{prefix}.txt": emit_report(report, "human_table")}
    for breakdown in BREAKDOWNS:
        outputs[f"{prefix}.{breakdown}.csv"] = emit_report(report, "delimited", breakdown)
    written = []
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        for name, data in outputs.items():
            (outdir / name).write_bytes(data)
            written.append(outdir / name)
    except OSError as exc:
        raise AuditError(f"could not write report to {outdir}: {exc}") from exc
    return written
