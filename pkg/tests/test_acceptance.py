"""Acceptance criteria, one test per criterion.

Each test prints a PASS line (run with -s or check captured output); every
expected value is either a published byte-level fact or computed by the
synthetic-store oracle, never by the code path under test.
"""

import io
import json
import random
import struct
import time
from collections import Counter

from mdstore import (
    CONFIRMED,
    DATA_MAGIC,
    HEADER_MAGIC,
    MAP_MAGIC,
    StoreModel,
    StoreSpec,
    apply_event,
    build_store,
    carve_report,
    carved_records,
    count_records,
    diff_stores,
    emit_store,
    emit_store_pair,
    expected_record_count,
    export_unallocated,
    parse_map_page,
    parse_store,
    parse_uti_page,
    plant_pages,
    scan_image,
    search_records,
    split_records,
    walk_store,
)
from mdstore import FileSpec, FolderSpec
from mdstore.cli import run
from mdstore.format import DataPage, DataPageHeader, PageFamily, classify_page
from mdstore.records import inflate_payload
from mdstore.synth import (
    RECORD_STREAM_CAPACITY,
    EventKind,
    FileEvent,
    emit_header_page,
    emit_map_page,
    emit_pages,
    encode_record_body,
)

from conftest import ShakeStream, make_spec


def _pass(number: int, message: str) -> None:
    print(f"ACCEPTANCE PASS [{number}] {message}")


def _create(name, parent="/", folder=False):
    return FileEvent(EventKind.CREATE, name, parent, folder)


def _delete(name, parent="/"):
    return FileEvent(EventKind.DELETE, name, parent)


def test_criterion_1_size_marker_walk_exactness():
    body0 = bytes(i & 0xFF for i in range(2186))
    stream = struct.pack("<I", 2186) + body0 + struct.pack("<I", 6) + b"tail66"
    best = min(_timed_walk(stream) for _ in range(5))
    records = split_records(stream)
    assert [r.declared_size for r in records] == [2186, 6]
    assert records[0].body == body0
    assert records[0].footprint == 2190  # next size marker read at offset 2190
    assert records[1].body == b"tail66"
    assert best < 1e-3, f"walk took {best * 1e6:.0f} us"
    _pass(1, f"size-marker walk exact, next marker at 2190, {best * 1e6:.0f} us")


def _timed_walk(stream):
    start = time.perf_counter()
    split_records(stream)
    return time.perf_counter() - start


def test_criterion_2_count_formula_round_trip():
    rng = random.Random(20260809)
    start = time.perf_counter()
    checked = 0
    for trial in range(200):
        files = rng.randrange(0, 5001)
        folders = rng.randrange(0, 201)
        file_specs = tuple(
            FileSpec(
                f"file_{i:05d}",
                attributes={"kMDItemTitle": f"Title {i:05d}"} if i % 50 == 0 else {},
            )
            for i in range(files)
        )
        folder_specs = tuple(FolderSpec(f"dir_{i:04d}") for i in range(folders))
        spec = StoreSpec(files=file_specs, folders=folder_specs, seed=trial)
        records, problems = walk_store(parse_store(build_store(spec)))
        assert not problems
        assert len(records) == expected_record_count(files, folders) == files + folders + 2
        checked += 1
    elapsed = time.perf_counter() - start
    assert checked == 200
    assert elapsed < 30, f"suite took {elapsed:.1f}s"
    _pass(2, f"200/200 randomized specs match files+folders+2 in {elapsed:.1f}s")


def test_criterion_3_empty_store_baseline():
    parsed = parse_store(build_store(StoreSpec()))
    records, problems = walk_store(parsed)
    assert parsed.total_page_count >= 8
    assert not problems
    assert len(records) == 2
    _pass(3, f"empty spec: {parsed.total_page_count} pages, exactly 2 records")


def test_criterion_4_carving_recall_and_precision():
    start = time.perf_counter()

    # 64 MiB seeded-random image with 50 intact pages at sector boundaries
    big = make_spec(files=13000, seed=77)
    model = StoreModel.from_spec(big)
    record_pages = [p for p in emit_pages(model)[2:] if p[12] == 9]
    assert len(record_pages) >= 25
    planted = (record_pages * 2)[:50]
    image, offsets = plant_pages(planted, 64 << 20, seed=20260809)
    assert len(image) == 64 << 20
    found = list(scan_image(io.BytesIO(image)))
    assert len(found) == 50
    assert all(p.confidence == CONFIRMED for p in found)
    assert sorted(p.source_offset for p in found) == sorted(offsets)
    assert all(off % 512 == 0 for off in offsets)
    report = carve_report(found)
    assert report.by_confidence == {"confirmed": 50}

    # 1 GiB of pure seeded-random data: nothing may be confirmed
    random_hits = list(scan_image(ShakeStream(1 << 30, seed="precision")))
    assert [p for p in random_hits if p.confidence == CONFIRMED] == []

    elapsed = time.perf_counter() - start
    assert elapsed < 60, f"suite took {elapsed:.1f}s"
    _pass(
        4,
        f"recall 50/50 confirmed, 0 false positives on 64 MiB + 1 GiB in {elapsed:.1f}s",
    )


def test_criterion_5_persistence_reproduction(tmp_path):
    start = time.perf_counter()
    model = StoreModel.from_spec(StoreSpec(seed=55))

    apply_event(model, _create("doomed", folder=True))
    for i in range(500):
        apply_event(model, _create(f"keep_{i:04d}"))
    for i in range(300):
        apply_event(model, _create(f"gone_{i:04d}"))
    for i in range(200):
        apply_event(model, _create(f"dmd_{i:04d}", parent="doomed"))
    assert model.live_count() == 1000 + 1 + 2

    # individual deletions collapse records in place
    deleted_names = [f"gone_{i:04d}" for i in range(300)]
    for name in deleted_names:
        apply_event(model, _delete(name))

    live_records, problems = walk_store(parse_store(emit_store(model)))
    assert not problems
    assert search_records(live_records, deleted_names) == []  # (a)

    # mass delete a full directory, then reset the index
    mass_deleted = [r.body for r in model.live_records() if r.parent == "doomed"]
    mass_deleted.append(
        next(r.body for r in model.live_records() if r.name == "doomed")
    )
    apply_event(model, FileEvent(EventKind.MASS_DELETE, "doomed"))
    reset_freed = [r.body for r in model.live_records()]
    apply_event(model, FileEvent(EventKind.INDEX_RESET))

    image = export_unallocated(model)
    pages = list(scan_image(io.BytesIO(image)))
    recovered = Counter(r.body for r in carved_records(pages))
    missing = [body for body in mass_deleted + reset_freed if not recovered[body]]
    assert missing == [], f"{len(missing)} freed records not recovered"  # (b)

    # deleted-then-collapsed names are gone from every carved page too
    carved_all = b"".join(
        inflate_payload(p.as_data_page()) for p in pages
        if p.confidence == CONFIRMED and p.kind.subtype == 9
    )
    assert not any(name.encode() in carved_all for name in deleted_names)

    elapsed = time.perf_counter() - start
    assert elapsed < 60, f"scenario took {elapsed:.1f}s"
    _pass(
        5,
        f"0 live hits for {len(deleted_names)} deleted names; "
        f"{len(mass_deleted)} mass-deleted + {len(reset_freed)} reset-freed "
        f"records recovered byte-identical in {elapsed:.1f}s",
    )


def test_criterion_6_wipe_invariant():
    sequences = 0
    for seed in range(1000):
        rng = random.Random(seed)
        model = StoreModel.from_spec(make_spec(files=rng.randrange(0, 10), seed=seed))
        counter = 0
        had_delete = False
        for _ in range(rng.randrange(4, 12)):
            live_files = [r for r in model.live_records() if r.kind == "file"]
            if rng.random() < 0.5 and live_files:
                apply_event(model, _delete(rng.choice(live_files).name))
                had_delete = True
                _assert_wiped(model)
            else:
                counter += 1
                apply_event(model, _create(f"gen_{counter:04d}"))
        if not had_delete:
            live_files = [r for r in model.live_records() if r.kind == "file"]
            if not live_files:
                apply_event(model, _create("late_file"))
                live_files = [model.live_records()[-1]]
            apply_event(model, _delete(live_files[0].name))
            _assert_wiped(model)
        sequences += 1
    assert sequences == 1000
    _pass(6, "vacated tails all-0x00 and records contiguous over 1000 sequences")


def _assert_wiped(model):
    for page in parse_store(emit_store(model)).data_pages(9):
        stream = inflate_payload(page)
        records = split_records(stream)
        consumed = sum(r.footprint for r in records)
        assert not any(stream[consumed:])
        assert consumed == sum(4 + len(r.body) for r in records)


def test_criterion_7_diff_exactness():
    trials = 0
    for seed in range(10):
        rng = random.Random(seed)
        model = StoreModel.from_spec(make_spec(files=12, folders=1, seed=seed))
        counter = 0
        for _ in range(14):
            live_files = [r for r in model.live_records() if r.kind == "file"]
            roll = rng.random()
            if roll < 0.55 or not live_files:
                counter += 1
                apply_event(model, _create(f"gen_{counter:04d}"))
            elif roll < 0.9:
                apply_event(model, _delete(rng.choice(live_files).name))
            else:
                apply_event(model, FileEvent(EventKind.INDEX_RESET))
        for lag in range(11):
            dot_store, store = emit_store_pair(model, lag=lag)
            report = diff_stores(parse_store(store), parse_store(dot_store))

            replay = StoreModel.from_spec(model.spec)
            for event in model.event_log[: len(model.event_log) - lag]:
                apply_event(replay, event)
            full = Counter(r.body for r in model.live_records())
            lagged = Counter(r.body for r in replay.live_records())
            expected_added = _digest_counter(full - lagged)
            expected_removed = _digest_counter(lagged - full)
            assert Counter(r.digest for r in report.added) == expected_added
            assert Counter(r.digest for r in report.removed) == expected_removed
            assert report.unchanged_count == sum((full & lagged).values())
            trials += 1
    assert trials == 110
    _pass(7, f"diff delta equals pending-event delta in {trials}/110 lag trials")


def _digest_counter(body_counter):
    import hashlib

    out = Counter()
    for body, count in body_counter.items():
        out[hashlib.md5(body).hexdigest()] += count
    return out


def test_criterion_8_robustness_single_corrupt_page(tmp_path, capsys):
    probe = StoreModel.from_spec(StoreSpec(seed=0))
    baseline_len = probe.pages[0].stream_len
    file_fp = 4 + len(encode_record_body(3, 2, ("f_00000",)))
    per_page = RECORD_STREAM_CAPACITY // file_fp
    first_page = (RECORD_STREAM_CAPACITY - baseline_len) // file_fp
    files = first_page + 98 * per_page + 1  # exactly 100 record pages

    spec = StoreSpec(
        files=tuple(FileSpec(f"f_{i:05d}") for i in range(files)), seed=8
    )
    store = bytearray(build_store(spec))
    parsed = parse_store(bytes(store))
    record_pages = list(parsed.data_pages(9))
    assert len(record_pages) == 100

    victim = record_pages[41]
    store[victim.offset + 200] ^= 0xFF
    bad = bytes(store)

    counts = count_records(parse_store(bad))
    good_rows = [row for row in counts.per_page if "count" in row]
    error_rows = [row for row in counts.per_page if "error" in row]
    assert len(good_rows) == 99
    assert error_rows == [{"page": victim.page_number, "error": "DecompressError"}]
    clean_counts = count_records(parsed)
    expected_total = clean_counts.total - next(
        row["count"] for row in clean_counts.per_page if row["page"] == victim.page_number
    )
    assert counts.total == expected_total

    bad_path = tmp_path / "bad.db"
    bad_path.write_bytes(bad)
    out_path = tmp_path / "records.jsonl"
    code = run(["records", str(bad_path), "--format", "json", "-o", str(out_path)])
    err = capsys.readouterr().err
    assert code == 3
    assert err.count("DecompressError") == 1
    _pass(8, "99/100 pages counted, exactly one DecompressError, exit code 3")


def test_criterion_9_published_byte_facts():
    assert HEADER_MAGIC == b"8tsd"
    assert MAP_MAGIC == b"2mbd"
    assert DATA_MAGIC == b"2pbd"

    # first bytes of a record page as published: 2pbd, 16384, subtype 9
    fig4 = bytes.fromhex("3270626400400000021100000900000070352034")
    kind = classify_page(fig4)
    assert kind.family is PageFamily.DATA and kind.subtype == 9
    assert struct.unpack_from("<I", fig4, 4)[0] == 16384

    page_map, _ = parse_map_page(emit_map_page(4, seed=1))
    assert page_map.page_size == 16384
    assert all(e.data_page_size == 16384 for e in page_map.entries)

    header = emit_header_page(seed=1)
    assert struct.unpack_from("<I", header, 36)[0] == 4096

    region = (
        struct.pack("<I", 1) + b"public.message\x00"
        + struct.pack("<I", 2) + b"com.apple.mail.emlx\x00"
    )
    raw = bytearray(16384)
    raw[0:20] = DataPageHeader(16384, 32 + len(region), 33, 0).encode()
    raw[32 : 32 + len(region)] = region
    page = DataPage(4, 0, DataPageHeader.decode(raw[:20]), bytes(raw))
    entries = parse_uti_page(page)
    assert (entries[0].record_number, entries[0].uti) == (1, "public.message")
    assert (entries[1].record_number, entries[1].uti) == (2, "com.apple.mail.emlx")

    # the generator's own UTI table leads with the same two published entries
    parsed = parse_store(build_store(StoreSpec()))
    generated = []
    for uti_page in parsed.data_pages(33):
        generated.extend(parse_uti_page(uti_page))
    assert generated[0].uti == "public.message"
    assert generated[1].uti == "com.apple.mail.emlx"
    _pass(9, "magics 8tsd/2mbd/2pbd, page size 16384, header 4096, UTI goldens")
