"""Command line entry point: ``nftaudit <stage>``.

Stages communicate through fixed file names under ``--workdir``::

    ingest    -> reference_list.csv, samples.csv
    probe     -> probes.jsonl (+ probe_cache.jsonl, probe_failures.jsonl, stem_mismatches.csv)
    classify  -> categories.csv (+ onchain/ decoded assets)
    resolve   -> traces.jsonl
    report    -> report.json, report.txt, report.<breakdown>.csv

Exit codes: 0 success, 1 usage, 2 data error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from nftaudit import __version__
from nftaudit.chainio import (
    ClientPair,
    ProbeCache,
    Readability,
    fixture_clients,
    http_clients,
    probe_all,
    probe_contract,
    read_probes,
    write_probes,
)
from nftaudit.chainio.probe import dump_record
from nftaudit.classify import (
    UNREADABLE,
    Category,
    StorageCategory,
    classify_uri,
    decode_onchain_image,
    decode_onchain_json,
    export_onchain_asset,
    load_keywords,
    map_permanence,
    split_uri,
)
from nftaudit.errors import AuditError, DecodeError, ProbeFailedError, TransportError
from nftaudit.ingest import (
    CollectionSample,
    TokenRef,
    build_reference_list,
    load_events,
    normalize_address,
    parse_token_id,
    read_reference_list,
    read_samples,
    sample_collections,
    tokens_by_contract,
    write_reference_list,
    write_samples,
)
from nftaudit.report import DEFAULT_TOP_N, STORAGE_ORDER, aggregate_counts, emit_report, write_report
from nftaudit.resolve import (
    DEFAULT_ASSET_FIELDS,
    DEFAULT_GATEWAY_MAP,
    DEFAULT_MAX_DEPTH,
    FixtureFetcher,
    GatewayMap,
    HttpFetcher,
    TraceStatus,
    trace_asset,
)
from nftaudit.throttle import TokenBucket

log = logging.getLogger("nftaudit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ENDPOINT = 0, 1, 2, 3

REFERENCE_LIST = "reference_list.csv"
SAMPLES = "samples.csv"
PROBES = "probes.jsonl"
PROBE_CACHE = "probe_cache.jsonl"
PROBE_FAILURES = "probe_failures.jsonl"
STEM_MISMATCHES = "stem_mismatches.csv"
CATEGORIES = "categories.csv"
TRACES = "traces.jsonl"
CATEGORY_COLUMNS = ("contract_address", "token_id", "category", "keyword", "scheme", "host_root")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    workdir: Path = Path("nftaudit-work")
    input_path: Path | None = None
    input_format: str | None = None
    fixtures: Path | None = None
    explorer_api_url: str | None = None
    explorer_api_key: str | None = None
    node_rpc_url: str | None = None
    gateway_map_path: Path | None = None
    keyword_list_path: Path | None = None
    asset_fields: tuple[str, ...] = DEFAULT_ASSET_FIELDS
    rate: float | None = None
    in_flight: int = 8
    max_depth: int = DEFAULT_MAX_DEPTH
    probe_extra: int = 0
    top_n: int = DEFAULT_TOP_N
    keywords: tuple[str, ...] = field(default=(), repr=False)

    def validate(self) -> None:
        if self.rate is not None and self.rate <= 0:
            raise UsageError("--rate must be positive")
        if self.in_flight < 1:
            raise UsageError("--in-flight must be at least 1")
        if self.max_depth < 1:
            raise UsageError("--max-depth must be at least 1")
        if self.probe_extra < 0:
            raise UsageError("--probe-extra must not be negative")
        if self.top_n < 1:
            raise UsageError("--top-n must be at least 1")

    def path(self, name: str) -> Path:
        return self.workdir / name

    def clients(self) -> ClientPair:
        if self.fixtures is not None:
            return fixture_clients(self.fixtures, rate=self.rate)
        return http_clients(self.explorer_api_url, self.explorer_api_key, self.node_rpc_url, rate=self.rate)

    def fetcher(self):
        if self.fixtures is not None:
            return FixtureFetcher(self.fixtures / "http")
        return HttpFetcher(limiter=TokenBucket(self.rate) if self.rate else None)

    def gateway_map(self) -> GatewayMap:
        return GatewayMap.load(self.gateway_map_path) if self.gateway_map_path else DEFAULT_GATEWAY_MAP


_PATH_KEYS = {"workdir", "input_path", "fixtures", "gateway_map_path", "keyword_list_path"}
_FLAG_KEYS = ("workdir", "fixtures", "rate", "in_flight", "max_depth", "probe_extra", "keyword_list_path",
              "gateway_map_path")


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config:
        config_path = Path(args.config)
        try:
            values = json.loads(config_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        for key, value in values.items():
            if not hasattr(config, key) or key == "keywords":
                raise UsageError(f"unknown config key {key!r}")
            if key in _PATH_KEYS and value is not None:
                value = config_path.parent / value
            if key == "asset_fields":
                value = tuple(value)
            setattr(config, key, value)
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, Path(value) if key in _PATH_KEYS else value)
    config.workdir = Path(config.workdir)
    config.validate()
    try:
        config.keywords = load_keywords(config.keyword_list_path)
    except OSError as exc:
        raise UsageError(f"cannot read keyword list: {exc}") from None
    return config


# -- stages --------------------------------------------------------------------


def cmd_ingest(config: RunConfig, input_path: str | None, fmt: str | None) -> int:
    path = Path(input_path) if input_path else config.input_path
    if path is None:
        raise UsageError("ingest needs an input file")
    events = load_events(path, fmt or config.input_format)
    refs = build_reference_list(events)
    samples = sample_collections(refs)
    config.workdir.mkdir(parents=True, exist_ok=True)
    write_reference_list(refs, config.path(REFERENCE_LIST))
    write_samples(samples, config.path(SAMPLES))
    print(f"{len(events):,} events -> {len(refs):,} tokens / {len(samples):,} contracts")
    return EXIT_OK


def _extra_ids(config: RunConfig, samples: Sequence[CollectionSample]) -> dict[str, list[int]]:
    if config.probe_extra == 0:
        return {}
    grouped = tokens_by_contract(read_reference_list(config.path(REFERENCE_LIST)))
    return {
        s.contract_address: [t for t in grouped.get(s.contract_address, []) if t != s.sample_token_id][: config.probe_extra]
        for s in samples
    }


def _write_stem_mismatches(probes, path: Path) -> int:
    mismatched = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("contract_address", "sample_token_id", "sample_uri", "token_id", "token_uri"))
        for probe in probes:
            bad = [c for c in probe.extra_checks if c.stem_matches is False]
            mismatched += bool(bad)
            for check in bad:
                writer.writerow((probe.contract_address, probe.sample_token_id, probe.sample_token_uri,
                                 check.token_id, check.uri))
    return mismatched


def cmd_probe(config: RunConfig) -> int:
    samples = read_samples(config.path(SAMPLES))
    extras = _extra_ids(config, samples)
    clients = config.clients()
    cache = ProbeCache(config.path(PROBE_CACHE))
    done = [0]

    def progress(_sample):
        done[0] += 1
        if done[0] % 100 == 0 or done[0] == len(samples):
            log.info("probed %d/%d contracts", done[0], len(samples))

    try:
        run = probe_all(samples, clients, cache, in_flight=config.in_flight, extra_token_ids=extras,
                        progress=progress)
    except KeyboardInterrupt:
        print(f"interrupted; {len(cache)} contracts cached in {config.path(PROBE_CACHE)}, rerun to resume",
              file=sys.stderr)
        return 130

    write_probes(run.probes, config.path(PROBES))
    config.path(PROBE_FAILURES).write_text("".join(dump_record(f.to_record()) + "\n" for f in run.failures),
                                           encoding="utf-8")
    counts = Counter(p.readability.value for p in run.probes)
    print(f"probed {len(run.probes):,} contracts ({run.from_cache:,} from cache, {len(run.failures):,} failed); "
          f"network calls: {clients.calls}")
    for readability in Readability:
        print(f"  {readability.value}: {counts.get(readability.value, 0):,}")
    if config.probe_extra:
        mismatched = _write_stem_mismatches(run.probes, config.path(STEM_MISMATCHES))
        checked = sum(1 for p in run.probes if p.extra_checks)
        print(f"stem validation: {checked:,} contracts checked with up to {config.probe_extra} extra tokens, "
              f"{mismatched:,} with stem mismatches")
    if run.failures:
        print(f"{len(run.failures):,} probes failed; see {config.path(PROBE_FAILURES)} and rerun", file=sys.stderr)
        return EXIT_ENDPOINT
    return EXIT_OK


def _export_onchain(uri: str, contract: str, token_id: int, outdir: Path) -> None:
    try:
        asset = decode_onchain_image(decode_onchain_json(uri))
    except DecodeError as exc:
        log.warning("could not decode on-chain metadata of %s: %s", contract, exc)
        return
    export_onchain_asset(asset, contract, token_id, outdir)


def cmd_classify(config: RunConfig) -> int:
    refs = read_reference_list(config.path(REFERENCE_LIST))
    samples = read_samples(config.path(SAMPLES))
    probes = {p.contract_address: p for p in read_probes(config.path(PROBES))}

    classes: dict[str, tuple[StorageCategory, str, str]] = {}
    for sample in samples:
        probe = probes.get(sample.contract_address)
        if probe is None:
            raise AuditError(f"missing probe for contract {sample.contract_address}; rerun probe")
        if probe.readability is not Readability.READABLE:
            classes[sample.contract_address] = (UNREADABLE, "", "")
            continue
        stem = split_uri(probe.sample_token_uri)
        category = classify_uri(stem, config.keywords)
        classes[sample.contract_address] = (category, stem.scheme, stem.key)
        if category.category is Category.ONCHAIN_BASE64:
            _export_onchain(probe.sample_token_uri, sample.contract_address, sample.sample_token_id,
                            config.path("onchain"))

    counts: Counter[str] = Counter()
    with config.path(CATEGORIES).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATEGORY_COLUMNS)
        for ref in refs:
            if ref.contract_address not in classes:
                raise AuditError(f"missing probe for contract {ref.contract_address}; rerun ingest and probe")
            category, scheme, stem_key = classes[ref.contract_address]
            counts[category.category.value] += 1
            writer.writerow((ref.contract_address, ref.token_id, category.category.value,
                             category.keyword or "", scheme, stem_key))
    print(f"classified {len(refs):,} tokens")
    for category in STORAGE_ORDER:
        print(f"  {category.value}: {counts.get(category.value, 0):,}")
    return EXIT_OK


def sample_selected(contract_address: str, fraction: float) -> bool:
    """Deterministic per-contract sampling keyed on sha256 of the address."""
    digest = int.from_bytes(hashlib.sha256(contract_address.encode("ascii")).digest(), "big")
    return digest < fraction * 2**256


def cmd_resolve(config: RunConfig, sample_fraction: float) -> int:
    if not 0 < sample_fraction <= 1:
        raise UsageError("--sample-fraction must be in (0, 1]")
    if not config.path(CATEGORIES).is_file():
        raise AuditError("categories.csv not found; run classify first")
    probes = [
        p for p in read_probes(config.path(PROBES))
        if p.readability is Readability.READABLE and sample_selected(p.contract_address, sample_fraction)
    ]
    fetcher = config.fetcher()
    gateway_map = config.gateway_map()

    def trace(probe):
        return trace_asset(
            probe.sample_token_uri,
            fetcher,
            max_depth=config.max_depth,
            gateway_map=gateway_map,
            asset_fields=config.asset_fields,
            cloud_keywords=config.keywords,
            token=TokenRef(probe.contract_address, probe.sample_token_id),
        )

    with ThreadPoolExecutor(max_workers=config.in_flight) as pool:
        traces = list(pool.map(trace, probes))
    traces.sort(key=lambda t: (t.token.contract_address, t.token.token_id))
    config.path(TRACES).write_text("".join(dump_record(t.to_record()) + "\n" for t in traces), encoding="utf-8")

    statuses = Counter(t.status.value for t in traces)
    depths = Counter(t.click_depth for t in traces if t.status is TraceStatus.RESOLVED)
    print(f"traced {len(traces):,} tokens: " + ", ".join(f"{s.value} {statuses.get(s.value, 0):,}" for s in TraceStatus))
    for depth in sorted(depths):
        print(f"  click depth {depth}: {depths[depth]:,}")
    return EXIT_OK


def cmd_report(config: RunConfig) -> int:
    path = config.path(CATEGORIES)
    if not path.is_file():
        raise AuditError("categories.csv not found; run classify first")
    storage: Counter[str] = Counter()
    stems: Counter[str] = Counter()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CATEGORY_COLUMNS:
            raise AuditError(f"{path}: unexpected header")
        for row in reader:
            storage[row["category"]] += 1
            if row["host_root"]:
                stems[row["host_root"]] += 1
    probes = read_probes(config.path(PROBES)) if config.path(PROBES).is_file() else []
    readability = Counter(p.readability.value for p in probes)
    generated_at = max((p.probe_timestamp for p in probes), default=0)
    report = aggregate_counts(storage, readability, stems, top_n=config.top_n, generated_at=generated_at)
    write_report(report, config.workdir)
    sys.stdout.write(emit_report(report, "human_table").decode("utf-8"))
    return EXIT_OK


def cmd_audit(config: RunConfig, address: str, token_id: str) -> int:
    try:
        address = normalize_address(address)
        token = parse_token_id(token_id)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    clients = config.clients()
    try:
        probe = probe_contract(CollectionSample(address, token, 1), clients)
    except ProbeFailedError as exc:
        print(f"probe: {exc.failure.error}", file=sys.stderr)
        return EXIT_ENDPOINT

    print(f"contract: {address}")
    print(f"token_id: {token}")
    print(f"readability: {probe.readability.value}")
    if probe.readability is not Readability.READABLE:
        permanence = map_permanence(UNREADABLE)
        print(f"raw_error: {probe.raw_error}")
        print(f"storage: {UNREADABLE}")
        print(f"permanence: {permanence.value}")
        print(f"summary: {probe.readability.value} / {UNREADABLE} / {permanence.value}")
        return EXIT_OK

    category = classify_uri(split_uri(probe.sample_token_uri), config.keywords)
    permanence = map_permanence(category)
    trace = trace_asset(probe.sample_token_uri, config.fetcher(), max_depth=config.max_depth,
                        gateway_map=config.gateway_map(), asset_fields=config.asset_fields,
                        cloud_keywords=config.keywords, token=TokenRef(address, token))
    print(f"token_uri: {probe.sample_token_uri}")
    print(f"storage: {category}")
    print(f"permanence: {permanence.value}")
    print(f"trace: {trace.status.value}" + (f" ({trace.detail})" if trace.detail else ""))
    print(f"click_depth: {trace.click_depth}")
    print(f"final_asset: {trace.final_asset_uri or '-'}")
    print(f"final_category: {trace.final_category}")
    print(f"summary: {probe.readability.value} / {category} / {permanence.value} / depth {trace.click_depth}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--workdir", default=default, help="directory for stage files and caches")
    parser.add_argument("--config", default=default, help="JSON run configuration")
    parser.add_argument("--fixtures", default=default, help="replay explorer/node/http responses from this directory")
    parser.add_argument("--rate", type=float, default=default, help="requests per second per endpoint")
    parser.add_argument("--in-flight", dest="in_flight", type=int, default=default,
                        help="concurrent contracts/traces")
    parser.add_argument("--max-depth", dest="max_depth", type=int, default=default, help="fetch budget per trace")
    parser.add_argument("--probe-extra", dest="probe_extra", type=int, default=default,
                        help="re-check N extra tokens per contract for stem mismatches")
    parser.add_argument("--keywords", dest="keyword_list_path", default=default, help="cloud keyword list file")
    parser.add_argument("--gateway-map", dest="gateway_map_path", default=default, help="gateway rewrite rules")
    parser.add_argument("-v", "--verbose", action="store_true", default=default or False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nftaudit", description="Audit ERC-721 metadata permanence.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="build the reference list and collection samples")
    p.add_argument("input", nargs="?", help="transfer export (CSV or JSON lines)")
    p.add_argument("--format", choices=("delimited_text", "line_records"))
    sub.add_parser("probe", help="fetch ABIs and sample tokenURIs")
    sub.add_parser("classify", help="assign storage categories to every token")
    p = sub.add_parser("resolve", help="trace sample tokenURIs to their assets")
    p.add_argument("--sample-fraction", dest="sample_fraction", type=float, default=1.0)
    p = sub.add_parser("report", help="aggregate categories into report files")
    p.add_argument("--top-n", dest="top_n", type=int, default=None)
    p = sub.add_parser("audit", help="probe, classify and trace a single token")
    p.add_argument("address")
    p.add_argument("token_id")

    for subparser in sub.choices.values():
        _add_global_flags(subparser, suppress=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(args)
        if getattr(args, "top_n", None) is not None:
            config.top_n = args.top_n
            config.validate()
        if args.command == "ingest":
            return cmd_ingest(config, args.input, args.format)
        if args.command == "probe":
            return cmd_probe(config)
        if args.command == "classify":
            return cmd_classify(config)
        if args.command == "resolve":
            return cmd_resolve(config, args.sample_fraction)
        if args.command == "report":
            return cmd_report(config)
        return cmd_audit(config, args.address, args.token_id)
    except UsageError as exc:
        print(f"nftaudit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"nftaudit: endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except AuditError as exc:
        print(f"nftaudit: {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
