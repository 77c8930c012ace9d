import json
import subprocess
import sys

import pytest

from mdstore import build_store
from mdstore.cli import run

from conftest import make_spec


@pytest.fixture
def store_file(tmp_path):
    path = tmp_path / "store.db"
    path.write_bytes(build_store(make_spec(files=8, folders=1, seed=1, with_attrs=True)))
    return path


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(
        json.dumps(
            {
                "seed": 5,
                "folders": [{"name": "docs"}],
                "files": [
                    {"name": "a_report.docx", "parent": "docs"},
                    {"name": "b_notes.txt"},
                ],
            }
        )
    )
    return path


@pytest.fixture
def events_file(tmp_path):
    path = tmp_path / "events.json"
    path.write_text(
        json.dumps(
            [
                {"kind": "create", "name": "fresh.txt"},
                {"kind": "delete", "name": "b_notes.txt"},
                {"kind": "mass_delete", "name": "docs"},
            ]
        )
    )
    return path


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_inspect_json(store_file, capsys):
    assert run(["inspect", str(store_file), "--format", "json"]) == 0
    payload = _json_out(capsys)
    assert payload["tool"] == "mdstore"
    assert payload["data"]["total_page_count"] >= 8
    assert payload["data"]["header"]["header_page_size"] == 4096
    assert payload["inputs"][0]["md5"]


def test_inspect_is_byte_identical_across_runs(store_file, capsys):
    run(["inspect", str(store_file), "--format", "json"])
    first = capsys.readouterr().out
    run(["inspect", str(store_file), "--format", "json"])
    second = capsys.readouterr().out
    assert first == second


def test_inspect_rejects_random_file(tmp_path, capsys):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"\x13\x37" * 600)
    assert run(["inspect", str(junk)]) == 2
    assert "NotAStore" in capsys.readouterr().err


def test_missing_input(capsys):
    assert run(["inspect", "/no/such/file"]) == 2


def test_usage_error_exit_code(capsys):
    assert run(["bogus-command"]) == 1
    assert run([]) == 1
    assert run(["carve"]) == 1


def test_records_jsonl(store_file, capsys):
    assert run(["records", str(store_file), "--format", "json"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    meta = json.loads(lines[0])
    assert meta["record_count"] == 11
    rows = [json.loads(line) for line in lines[1:]]
    assert len(rows) == 11
    assert all("digest" in r and "strings" in r for r in rows)


def test_records_csv(store_file, capsys):
    assert run(["records", str(store_file), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if not l.startswith("#")]
    assert lines[0] == "page,slot,declared_size,digest,first_string"
    assert len(lines) == 12


def test_attrs_csv_columns(store_file, capsys):
    assert run(["attrs", str(store_file), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if not l.startswith("#")]
    assert lines[0] == "record_number,flags_hex,name"
    assert any("kMDItemDisplayName" in l for l in lines)


def test_utis_csv_columns(store_file, capsys):
    assert run(["utis", str(store_file), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert "record_number,uti,language_code" in out
    assert "1,public.message," in out
    assert "2,com.apple.mail.emlx," in out


def test_search_hits(store_file, capsys):
    assert run(["search", str(store_file), "-k", "file_00003", "--format", "json"]) == 0
    payload = _json_out(capsys)
    assert payload["parameters"]["keywords"] == ["file_00003"]
    assert len(payload["data"]) >= 1


def test_search_miss(store_file, capsys):
    assert run(["search", str(store_file), "-k", "absent-kw", "--format", "json"]) == 0
    assert _json_out(capsys)["data"] == []


def test_gen_and_diff_and_simulate(tmp_path, spec_file, events_file, capsys):
    out_store = tmp_path / "gen" / "store.db"
    assert run(["gen", str(spec_file), "-o", str(out_store)]) == 0
    capsys.readouterr()
    assert out_store.exists()

    sim_dir = tmp_path / "sim"
    assert (
        run(
            [
                "simulate",
                str(spec_file),
                "--events",
                str(events_file),
                "--lag",
                "1",
                "-o",
                str(sim_dir),
            ]
        )
        == 0
    )
    capsys.readouterr()
    for name in ("store.db", ".store.db", "unallocated.bin", "manifest.json"):
        assert (sim_dir / name).exists()

    assert (
        run(
            [
                "diff",
                str(sim_dir / "store.db"),
                str(sim_dir / ".store.db"),
                "--format",
                "json",
            ]
        )
        == 0
    )
    payload = _json_out(capsys)
    # lag 1: the mass delete is pending in store.db, applied in .store.db
    assert payload["data"]["method"] == "digest-multiset"
    assert len(payload["data"]["removed"]) == 2  # docs + a_report.docx
    assert payload["data"]["added"] == []


def test_carve_on_simulated_unallocated(tmp_path, spec_file, events_file, capsys):
    sim_dir = tmp_path / "sim"
    run(["simulate", str(spec_file), "--events", str(events_file), "-o", str(sim_dir)])
    capsys.readouterr()
    dump_dir = tmp_path / "dumps"
    assert (
        run(
            [
                "carve",
                str(sim_dir / "unallocated.bin"),
                "--format",
                "json",
                "--dump-pages",
                str(dump_dir),
            ]
        )
        == 0
    )
    payload = _json_out(capsys)
    totals = payload["data"]["totals"]
    assert totals["pages_recovered"] >= 1
    assert totals["records_recovered"] >= 1
    assert payload["data"]["parameters"]["sector_size"] == 512
    dumps = list(dump_dir.glob("page_*.bin"))
    assert len(dumps) == len(
        [p for p in payload["data"]["pages"] if p["confidence"] != "rejected"]
    )


def test_carve_reads_stdin(tmp_path, spec_file, events_file):
    sim_dir = tmp_path / "sim"
    run(["simulate", str(spec_file), "--events", str(events_file), "-o", str(sim_dir)])
    image = (sim_dir / "unallocated.bin").read_bytes()
    proc = subprocess.run(
        [sys.executable, "-m", "mdstore.cli", "carve", "-", "--format", "json"],
        input=image,
        capture_output=True,
    )
    assert proc.returncode == 0
    payload = json.loads(proc.stdout)
    assert payload["data"]["totals"]["pages_recovered"] >= 1


def test_exit_three_on_corrupt_page(tmp_path, capsys):
    store = bytearray(build_store(make_spec(files=40, seed=2)))
    page_offset = 4096 + 16384 * 6  # first record page
    store[page_offset + 60] ^= 0xFF
    bad = tmp_path / "bad.db"
    bad.write_bytes(bytes(store))
    assert run(["records", str(bad), "--format", "json"]) == 3
    assert "DecompressError" in capsys.readouterr().err


def test_refuses_to_write_over_input(store_file, capsys):
    assert run(["records", str(store_file), "-o", str(store_file)]) == 1
    assert "refusing" in capsys.readouterr().err


def test_format_env_var(store_file, capsys, monkeypatch):
    monkeypatch.setenv("MDSTORE_FORMAT", "csv")
    assert run(["attrs", str(store_file)]) == 0
    assert "record_number,flags_hex,name" in capsys.readouterr().out


def test_output_file_writing(store_file, tmp_path, capsys):
    out = tmp_path / "report.json"
    assert run(["inspect", str(store_file), "--format", "json", "-o", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["command"] == "inspect"
