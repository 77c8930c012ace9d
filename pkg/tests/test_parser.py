import random
import struct

import pytest

from mdstore import (
    HEADER_MAGIC,
    NotAStoreError,
    UnsupportedVersionError,
    build_store,
    parse_header_page,
    parse_map_page,
    parse_store,
    walk_store,
)
from mdstore.errors import NotAHeaderError, NotAMapError
from mdstore.format import HEADER_SIZE_OFFSET, MAP_MAGIC
from mdstore.synth import emit_header_page, emit_map_page

from conftest import make_spec


def test_round_trip_has_zero_warnings_across_random_specs():
    rng = random.Random(7)
    for trial in range(25):
        spec = make_spec(
            files=rng.randrange(0, 400),
            folders=rng.randrange(0, 20),
            seed=trial,
            with_attrs=trial % 3 == 0,
        )
        parsed = parse_store(build_store(spec))
        assert parsed.warnings == ()
        records, problems = walk_store(parsed)
        assert problems == []
        assert len(records) == len(spec.files) + len(spec.folders) + 2


def test_empty_store_has_at_least_eight_pages():
    parsed = parse_store(build_store(make_spec()))
    assert parsed.total_page_count >= 8
    records, _ = walk_store(parsed)
    assert len(records) == 2


def test_record_pages_start_at_page_eight():
    parsed = parse_store(build_store(make_spec(files=5, seed=2)))
    first_record_page = next(parsed.data_pages(9))
    assert first_record_page.page_number == 8


def test_page_attribution_is_exhaustive():
    store = build_store(make_spec(files=120, folders=4, seed=9))
    parsed = parse_store(store)
    spans = sorted(parsed.layout)
    assert spans[0][0] == 0
    for (off_a, len_a, _), (off_b, _, _) in zip(spans, spans[1:]):
        assert off_a + len_a == off_b
    last_off, last_len, _ = spans[-1]
    assert last_off + last_len == len(store) == parsed.source_length


def test_parse_is_deterministic():
    store = build_store(make_spec(files=30, seed=4))
    a = parse_store(store)
    b = parse_store(store)
    assert a == b


def test_random_bytes_are_not_a_store(rng):
    with pytest.raises(NotAStoreError):
        parse_store(rng.randbytes(4096))


def test_other_store_generation_is_reported_as_unsupported():
    blob = b"1tsd" + bytes(8188)
    with pytest.raises(UnsupportedVersionError):
        parse_store(blob)


def test_truncated_store_returns_remaining_pages():
    store = build_store(make_spec(files=50, seed=3))
    parsed_full = parse_store(store)
    cut = parse_store(store[: len(store) - 9000])
    codes = {w.code for w in cut.warnings}
    assert "TruncatedStore" in codes
    assert len(cut.pages) == len(parsed_full.pages)
    assert cut.pages[-1].truncated
    assert len(cut.pages[-1].data) < 16384


def test_map_damage_falls_back_to_signature_scan():
    store = bytearray(build_store(make_spec(files=40, seed=6)))
    full = parse_store(bytes(store))
    store[4096:4100] = b"\x00\x00\x00\x00"  # destroy the map magic
    parsed = parse_store(bytes(store))
    assert parsed.map is None
    assert any(w.code == "MapMissing" for w in parsed.warnings)
    # all record pages still located by the scan
    assert len(list(parsed.data_pages(9))) == len(list(full.data_pages(9)))


def test_trailing_junk_is_reported_as_slack():
    store = build_store(make_spec(seed=1)) + b"\x7f" * 100
    parsed = parse_store(store)
    assert any(w.code == "Slack" for w in parsed.warnings)
    assert sum(length for _, length, _ in parsed.layout) == len(store)


def test_parse_header_page_from_generator():
    header, warnings = parse_header_page(emit_header_page(seed=21))
    assert warnings == []
    assert header.header_page_size == 4096
    assert header.volume_path.startswith("/Macintosh HD/.Spotlight-V100/Store-V2/")
    assert header.volume_path.endswith("store.db")


def test_header_raw_tail_is_byte_exact():
    raw = bytearray(emit_header_page(seed=21))
    raw[1000] = 0xAB  # poke the opaque region
    header, _ = parse_header_page(bytes(raw))
    path_end = raw.index(0, 324)
    assert header.raw_tail == bytes(raw[path_end + 1 :])
    assert header.raw == bytes(raw)


def test_header_with_noncanonical_size_warns():
    raw = bytearray(emit_header_page(seed=0))
    struct.pack_into("<I", raw, HEADER_SIZE_OFFSET, 8192)
    header, warnings = parse_header_page(bytes(raw))
    assert header.header_page_size == 8192
    assert any(w.code == "NonCanonicalHeaderSize" for w in warnings)


def test_header_requires_signature():
    with pytest.raises(NotAHeaderError):
        parse_header_page(b"junk" + bytes(4092))


def test_parse_map_page_entries():
    page, warnings = parse_map_page(emit_map_page(3, seed=0))
    assert warnings == []
    assert page.page_count == 3
    assert len(page.entries) == 3
    assert all(e.data_page_size == 16384 for e in page.entries)
    assert page.page_type == 12


def test_parse_map_page_zero_entries():
    page, _ = parse_map_page(emit_map_page(0, seed=0))
    assert page.entries == ()


def test_parse_map_page_truncated_entry_region():
    raw = emit_map_page(3, seed=0)[: 32 + 2 * 16]  # room for only 2 of 3
    page, warnings = parse_map_page(raw)
    assert len(page.entries) == 2
    assert any(w.code == "EntryRegionTruncated" for w in warnings)


def test_map_page_requires_signature():
    with pytest.raises(NotAMapError):
        parse_map_page(b"junk" + bytes(60))


def test_map_count_mismatch_is_a_warning_not_an_error():
    store = bytearray(build_store(make_spec(files=10, seed=8)))
    # declare one page too many in the map
    declared = struct.unpack_from("<I", store, 4096 + 8)[0]
    struct.pack_into("<I", store, 4096 + 8, declared + 1)
    parsed = parse_store(bytes(store))
    assert any(w.code == "MapCountMismatch" for w in parsed.warnings)
    records, _ = walk_store(parsed)
    assert len(records) == 12


def test_header_magic_mid_stream_is_flagged():
    store = bytearray(build_store(make_spec(seed=13)))
    # overwrite one filler page's magic with the header magic
    offset = 4096 + 16384 * 3
    store[offset : offset + 4] = HEADER_MAGIC
    parsed = parse_store(bytes(store))
    assert any(w.code == "UnexpectedPageSignature" for w in parsed.warnings)
