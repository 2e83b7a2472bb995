import csv
import json
from pathlib import Path

import pytest

from fixturegen import BYTECODE_ONLY, CLOUD, ONCHAIN_ADDRESS, ONCHAIN_TOKEN, FixtureSet, synthetic_fixtures
from nftaudit.cli import main, sample_selected

CONTRACT_A = "0x" + "aa" * 20
CONTRACT_B = "0x" + "bb" * 20


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def work(tmp_path):
    return tmp_path / "work"


@pytest.fixture
def staged(catalog_dir, work, capsys):
    """Workdir after ingest + probe over the catalog fixtures."""
    assert run(capsys, "--workdir", work, "ingest", catalog_dir / "events.csv")[0] == 0
    assert run(capsys, "--workdir", work, "--fixtures", catalog_dir, "probe")[0] == 0
    return work


def test_ingest_summary(tmp_path, work, capsys):
    fx = FixtureSet()
    fx.mint(CONTRACT_A, 1)
    fx.mint(CONTRACT_A, 2)
    fx.transfer(CONTRACT_A, 1)
    fx.mint(CONTRACT_B, 5)
    events = fx.write(tmp_path / "fx")
    code, out, _ = run(capsys, "--workdir", work, "ingest", events)
    assert code == 0
    assert "4 events -> 3 tokens / 2 contracts" in out
    assert (work / "reference_list.csv").read_text().splitlines()[1:] == [f"{CONTRACT_A},1", f"{CONTRACT_A},2",
                                                                         f"{CONTRACT_B},5"]


def test_ingest_missing_input(work, tmp_path, capsys):
    code, _, err = run(capsys, "--workdir", work, "ingest", tmp_path / "nope.csv")
    assert code == 2
    assert "nope.csv" in err


def test_ingest_needs_input(work, capsys):
    assert run(capsys, "--workdir", work, "ingest")[0] == 1


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_probe_catalog_fixtures(catalog_dir, work, capsys):
    run(capsys, "--workdir", work, "ingest", catalog_dir / "events.csv")
    code, out, _ = run(capsys, "--workdir", work, "--fixtures", catalog_dir, "probe")
    assert code == 0
    assert "probed 9 contracts (0 from cache, 0 failed)" in out
    for line in ("readable: 5", "bytecode_only: 1", "invalid_abi_or_token_id: 2", "empty_string: 1"):
        assert line in out
    probes = [json.loads(line) for line in (work / "probes.jsonl").read_text().splitlines()]
    assert [p["contract_address"] for p in probes] == sorted(p["contract_address"] for p in probes)

    code, out, _ = run(capsys, "--workdir", work, "--fixtures", catalog_dir, "probe")
    assert code == 0
    assert "(9 from cache, 0 failed); network calls: 0" in out


def test_probe_failure_exits_3_and_is_retried(catalog_dir, work, capsys):
    run(capsys, "--workdir", work, "ingest", catalog_dir / "events.csv")
    removed = catalog_dir / "explorer" / f"{CLOUD[0].lower()}.json"
    saved = removed.read_text()
    removed.unlink()
    code, out, err = run(capsys, "--workdir", work, "--fixtures", catalog_dir, "probe")
    assert code == 3
    assert "1 failed" in out and "probe_failures.jsonl" in err
    failure = json.loads((work / "probe_failures.jsonl").read_text())
    assert failure["contract_address"] == CLOUD[0].lower()

    removed.write_text(saved)
    code, out, _ = run(capsys, "--workdir", work, "--fixtures", catalog_dir, "probe")
    assert code == 0
    assert "(8 from cache, 0 failed)" in out


def test_classify_six_categories(staged, capsys):
    code, out, _ = run(capsys, "--workdir", staged, "classify")
    assert code == 0
    with (staged / "categories.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["category"] for r in rows} == {"cloud_provider", "private_domain", "ipfs", "pinata",
                                              "onchain_base64", "unreadable"}
    cloud = next(r for r in rows if r["contract_address"] == CLOUD[0].lower())
    assert (cloud["keyword"], cloud["host_root"]) == ("s3", "pellar-dev.s3-ap-southeast-1.amazonaws.com")
    exported = sorted(p.name for p in (staged / "onchain").iterdir())
    stem = f"{ONCHAIN_ADDRESS.lower()}_{ONCHAIN_TOKEN}"
    assert exported == [f"{stem}.json", f"{stem}.svg"]
    assert (staged / "onchain" / f"{stem}.svg").read_bytes().startswith(b"<svg")


def test_classify_without_probes_is_data_error(catalog_dir, work, capsys):
    run(capsys, "--workdir", work, "ingest", catalog_dir / "events.csv")
    assert run(capsys, "--workdir", work, "classify")[0] == 2


def test_classify_all_unverified(tmp_path, work, capsys):
    fx = FixtureSet()
    for i in range(3):
        address = f"0x{i:040x}"
        fx.not_verified(address)
        fx.mint(address, 1)
    events = fx.write(tmp_path / "fx")
    run(capsys, "--workdir", work, "ingest", events)
    run(capsys, "--workdir", work, "--fixtures", tmp_path / "fx", "probe")
    code, out, _ = run(capsys, "--workdir", work, "classify")
    assert code == 0 and "unreadable: 3" in out
    run(capsys, "--workdir", work, "report")
    assert "unreadable,3,100.00" in (work / "report.storage.csv").read_text()


def test_resolve_fixtures(staged, capsys):
    run(capsys, "--workdir", staged, "classify")
    code, out, _ = run(capsys, "--workdir", staged, "--fixtures", staged.parent / "fixtures", "resolve")
    assert code == 0
    traces = {t["contract_address"]: t for t in map(json.loads, (staged / "traces.jsonl").read_text().splitlines())}
    assert len(traces) == 5
    assert all(t["status"] == "resolved" for t in traces.values())
    assert traces[ONCHAIN_ADDRESS.lower()]["click_depth"] == 0
    assert sorted(t["click_depth"] for t in traces.values()) == [0, 1, 1, 1, 1]
    assert "click depth 1: 4" in out


@pytest.mark.parametrize("fraction", ["0", "-0.5", "1.5"])
def test_resolve_sample_fraction_usage(staged, capsys, fraction):
    run(capsys, "--workdir", staged, "classify")
    assert run(capsys, "--workdir", staged, "resolve", "--sample-fraction", fraction)[0] == 1


def test_sample_selection_is_deterministic():
    addresses = [f"0x{i:040x}" for i in range(400)]
    half = [a for a in addresses if sample_selected(a, 0.5)]
    assert half == [a for a in addresses if sample_selected(a, 0.5)]
    assert 150 < len(half) < 250
    assert all(sample_selected(a, 1.0) for a in addresses)
    assert set(a for a in addresses if sample_selected(a, 0.25)) <= set(half)


def test_report_is_byte_identical_on_rerun(staged, capsys):
    run(capsys, "--workdir", staged, "classify")
    code, out, _ = run(capsys, "--workdir", staged, "report")
    assert code == 0
    assert "Permanence (share of tokens)" in out
    names = ["report.json", "report.txt", "report.permanence.csv", "report.storage.csv",
             "report.readability.csv", "report.top_stems.csv"]
    first = {n: (staged / n).read_bytes() for n in names}
    run(capsys, "--workdir", staged, "report")
    assert {n: (staged / n).read_bytes() for n in names} == first
    document = json.loads(first["report.json"])
    assert document["generated_at"] == 1632528000
    assert document["total_contracts"] == 9


def test_report_empty_classification(tmp_path, work, capsys):
    events = FixtureSet().write(tmp_path / "fx")
    run(capsys, "--workdir", work, "ingest", events)
    run(capsys, "--workdir", work, "--fixtures", tmp_path / "fx", "probe")
    run(capsys, "--workdir", work, "classify")
    code, _, _ = run(capsys, "--workdir", work, "report")
    assert code == 0
    rows = (work / "report.storage.csv").read_text().splitlines()[1:]
    assert all(r.endswith(",0,0.00") for r in rows)


def test_report_top_n(staged, capsys):
    run(capsys, "--workdir", staged, "classify")
    run(capsys, "--workdir", staged, "report", "--top-n", "2")
    assert len((staged / "report.top_stems.csv").read_text().splitlines()) == 3
    assert run(capsys, "--workdir", staged, "report", "--top-n", "0")[0] == 1


def test_audit_cloud_token(catalog_dir, work, capsys):
    code, out, _ = run(capsys, "--workdir", work, "--fixtures", catalog_dir, "audit", CLOUD[0], CLOUD[1])
    assert code == 0
    assert "summary: readable / cloud_provider(s3) / non-permanent / depth 1" in out
    assert f"final_asset: {CLOUD[3]}" in out


def test_audit_bytecode_only(catalog_dir, work, capsys):
    code, out, _ = run(capsys, "--workdir", work, "--fixtures", catalog_dir, "audit", BYTECODE_ONLY, 1)
    assert code == 0
    assert "summary: bytecode_only / unreadable / not readable" in out
    assert "Contract source code not verified -- NOTOK" in out


@pytest.mark.parametrize("address,token", [("0x123", "1"), (CLOUD[0], "-4"), (CLOUD[0], "abc")])
def test_audit_malformed_input(catalog_dir, capsys, address, token):
    code, _, err = run(capsys, "--fixtures", catalog_dir, "audit", address, token)
    assert code == 1
    assert "usage error" in err


def test_probe_extra_reports_mismatch(tmp_path, work, capsys):
    fx = synthetic_fixtures(5, seed=4, readable_only=True, mixed=frozenset({1}))
    events = fx.write(tmp_path / "fx")
    run(capsys, "--workdir", work, "ingest", events)
    code, out, _ = run(capsys, "--workdir", work, "--fixtures", tmp_path / "fx", "--probe-extra", "2", "probe")
    assert code == 0
    assert "1 with stem mismatches" in out
    assert len((work / "stem_mismatches.csv").read_text().splitlines()) == 2


def test_config_file(catalog_dir, tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"workdir": "cfgwork", "fixtures": str(catalog_dir), "in_flight": 2,
                                  "input_path": str(catalog_dir / "events.csv")}))
    assert run(capsys, "--config", config, "ingest")[0] == 0
    assert (tmp_path / "cfgwork" / "samples.csv").is_file()
    config.write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "--config", config, "ingest")[0] == 1


@pytest.mark.parametrize("flag,value", [("--in-flight", "0"), ("--max-depth", "0"), ("--rate", "-1"),
                                        ("--probe-extra", "-2")])
def test_flag_validation(work, capsys, flag, value):
    assert run(capsys, "--workdir", work, flag, value, "probe")[0] == 1


def test_flags_after_subcommand(catalog_dir, work, capsys):
    assert run(capsys, "ingest", catalog_dir / "events.csv", "--workdir", work)[0] == 0
    assert (work / "reference_list.csv").is_file()


def test_committed_fixtures_match_generator(catalog_dir):
    committed = Path(__file__).parent / "fixtures" / "catalog"
    generated = {p.relative_to(catalog_dir): p.read_bytes() for p in catalog_dir.rglob("*") if p.is_file()}
    on_disk = {p.relative_to(committed): p.read_bytes() for p in committed.rglob("*") if p.is_file()}
    assert on_disk == generated, "regenerate with: python3 tests/fixturegen.py tests/fixtures/catalog"
