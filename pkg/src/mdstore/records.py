"""Record-level decoding of data pages.

Subtype-9 pages hold the actual metadata records as one zlib stream of
back-to-back, size-prefixed records.  The walk layout is probed: the
stream normally begins directly with the first size marker, but a stream
that instead opens with a 20-byte echo of the page header is handled by
restarting the walk at inflated offset 20.

Record bodies have no documented internal landmarks, so field extraction
is heuristic: printable runs delimited by 0x00/0x01 become strings, and
aligned integers in the numeric preamble are reported as CNID/parent-CNID
*candidates* only.

Subtype-17 (attribute names) and subtype-33 (UTI) pages are plain entry
tables starting at page offset 32.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
import zlib
from dataclasses import dataclass, field

from .errors import DecompressError, NoPlausibleWalkError
from .format import (
    PAGE_HEADER_LEN,
    SUBTYPE_METADATA,
    TABLE_ENTRIES_OFFSET,
    DataPage,
    Diagnostic,
    read_field_u32_le,
)

# A size marker beyond this is treated as corruption, bounding memory on
# adversarial carved input.
MARKER_CORRUPT_LIMIT = 1 << 24
# Hard cap on a single page's inflated stream (zlib bombs on carved data).
INFLATE_LIMIT = 64 << 20
# Printable runs shorter than this are noise, not strings.
MIN_STRING_RUN = 3

_PRINTABLE = frozenset(range(0x20, 0x7F))


@dataclass
class RawRecord:
    """One size-prefixed record from a subtype-9 walk.

    ``truncated`` records carry fewer body bytes than their marker declared
    (corrupt or cut streams); for intact records ``len(body) ==
    declared_size`` and the stream footprint is ``4 + declared_size``.
    """

    declared_size: int
    body: bytes
    page_index: int = 0
    slot_index: int = 0
    truncated: bool = False
    _digest: str | None = field(default=None, repr=False, compare=False)

    @property
    def footprint(self) -> int:
        return 4 + len(self.body)

    @property
    def digest(self) -> str:
        # MD5 matches the record-comparison method used on real stores.
        if self._digest is None:
            self._digest = hashlib.md5(self.body).hexdigest()
        return self._digest


@dataclass(frozen=True)
class IdCandidate:
    offset: int
    value: int
    byte_order: str  # "le" or "be" - whichever produced a plausible value


@dataclass(frozen=True)
class RecordFields:
    strings: tuple[str, ...]
    cnid_candidates: tuple[IdCandidate, ...]
    parent_cnid_candidates: tuple[IdCandidate, ...]


@dataclass(frozen=True)
class AttributeEntry:
    record_number: int
    flags: bytes
    name: str


@dataclass(frozen=True)
class UtiEntry:
    record_number: int
    uti: str
    language_code: str | None = None


@dataclass(frozen=True)
class Hit:
    page_index: int
    slot_index: int
    keyword: str
    byte_offset: int


def _inflate(page: DataPage) -> bytes:
    # An implausible allocated_size makes page.payload fall back to the whole
    # page tail; the decompressor stops at stream end so trailing fill is fine.
    d = zlib.decompressobj()
    try:
        out = d.decompress(page.payload, INFLATE_LIMIT)
    except zlib.error as exc:
        raise DecompressError(f"page {page.page_number}: {exc}") from exc
    if d.unconsumed_tail:
        raise DecompressError(
            f"page {page.page_number}: inflated stream exceeds {INFLATE_LIMIT} bytes"
        )
    if not d.eof:
        raise DecompressError(f"page {page.page_number}: zlib stream did not terminate")
    return out


def _walk_plausible(stream: bytes, start: int) -> bool:
    region = stream[start:]
    if not region or not any(region):
        return True  # an empty (or fully wiped) page is a valid empty walk
    if len(region) < 4:
        return False
    marker = read_field_u32_le(region, 0)
    return 0 < marker <= len(region)


def locate_record_walk(stream: bytes) -> int:
    """Return the offset where the record walk starts (0 or 20)."""
    if _walk_plausible(stream, 0):
        return 0
    if len(stream) > PAGE_HEADER_LEN and _walk_plausible(stream, PAGE_HEADER_LEN):
        return PAGE_HEADER_LEN
    raise NoPlausibleWalkError("inflated bytes fit neither record-walk layout")


def inflate_payload(page: DataPage) -> bytes:
    """Inflate a subtype-9 page and return the record-walk region."""
    if page.subtype != SUBTYPE_METADATA:
        raise ValueError(f"page {page.page_number} has subtype {page.subtype}, not 9")
    stream = _inflate(page)
    return stream[locate_record_walk(stream) :]


def split_records(stream: bytes, page_number: int = 0) -> list[RawRecord]:
    """Walk back-to-back size-prefixed records.

    At cursor c the 4-byte marker s gives the body [c+4, c+4+s); the walk
    stops at a zero marker or end of stream, consuming trailing zero fill
    silently.  A marker that overruns the stream (or exceeds the corruption
    limit) yields one final truncated record carrying whatever bytes remain.
    """
    records: list[RawRecord] = []
    pos = 0
    slot = 0
    n = len(stream)
    while pos + 4 <= n:
        marker = struct.unpack_from("<I", stream, pos)[0]
        if marker == 0:
            break
        if marker > MARKER_CORRUPT_LIMIT or pos + 4 + marker > n:
            records.append(
                RawRecord(marker, bytes(stream[pos + 4 :]), page_number, slot, truncated=True)
            )
            break
        records.append(
            RawRecord(marker, bytes(stream[pos + 4 : pos + 4 + marker]), page_number, slot)
        )
        pos += 4 + marker
        slot += 1
    return records


def records_from_page(page: DataPage) -> list[RawRecord]:
    """Inflate a subtype-9 page and walk its records."""
    return split_records(inflate_payload(page), page.page_number)


def walk_store(parsed) -> tuple[list[RawRecord], list[Diagnostic]]:
    """Walk every subtype-9 page of a parsed store, in page order.

    Pages whose payload cannot be inflated or walked are reported as
    diagnostics; their siblings are unaffected.
    """
    records: list[RawRecord] = []
    problems: list[Diagnostic] = []
    for page in parsed.data_pages(SUBTYPE_METADATA):
        try:
            records.extend(records_from_page(page))
        except (DecompressError, NoPlausibleWalkError) as exc:
            problems.append(Diagnostic(page.offset, type(exc).__name__, str(exc)))
    return records, problems


def _printable_runs(segment: bytes):
    run_start = None
    for i, b in enumerate(segment):
        if b in _PRINTABLE:
            if run_start is None:
                run_start = i
        elif run_start is not None:
            yield run_start, segment[run_start:i]
            run_start = None
    if run_start is not None:
        yield run_start, segment[run_start:]


def _plausible_id(value: int) -> bool:
    return 0 < value < 1 << 48


def extract_fields(record: RawRecord) -> RecordFields:
    """Heuristic field extraction from an undocumented record body.

    Strings are printable runs of at least MIN_STRING_RUN bytes inside
    0x00/0x01-delimited segments.  Identifier candidates come from an
    8-aligned integer scan over the numeric preamble (the bytes before the
    first string); both byte orders are tried and the matching one is
    reported.  Candidates alternate between the CNID and parent-CNID lists
    in scan order - nothing is asserted to be *the* CNID.
    """
    body = record.body
    strings: list[str] = []
    first_string_at: int | None = None
    seg_start = 0
    for i in range(len(body) + 1):
        if i == len(body) or body[i] in (0x00, 0x01):
            if i > seg_start:
                for off, run in _printable_runs(body[seg_start:i]):
                    if len(run) >= MIN_STRING_RUN:
                        strings.append(run.decode("utf-8", errors="backslashreplace"))
                        if first_string_at is None:
                            first_string_at = seg_start + off
            seg_start = i + 1

    preamble_end = min(first_string_at if first_string_at is not None else len(body), 64)
    hits: list[IdCandidate] = []
    for off in range(0, max(preamble_end - 7, 0), 8):
        chunk = body[off : off + 8]
        le = struct.unpack("<Q", chunk)[0]
        if _plausible_id(le):
            hits.append(IdCandidate(off, le, "le"))
            continue
        be = struct.unpack(">Q", chunk)[0]
        if _plausible_id(be):
            hits.append(IdCandidate(off, be, "be"))
    return RecordFields(
        strings=tuple(strings),
        cnid_candidates=tuple(hits[0::2]),
        parent_cnid_candidates=tuple(hits[1::2]),
    )


def _table_region(page: DataPage) -> bytes:
    end = page.header.allocated_size
    if end < TABLE_ENTRIES_OFFSET or end > len(page.data):
        end = len(page.data)
    return page.data[TABLE_ENTRIES_OFFSET:end]


def _is_zero_fill(region: bytes, pos: int) -> bool:
    return not any(region[pos:])


def _infer_flags_width(region: bytes, pos: int) -> int | None:
    """Bytes between the record number and the first printable run.

    The flags field is undocumented; its width is measured on the first
    well-formed entry of a page and held constant for that page.
    """
    for width in range(0, 17):
        j = pos + 4 + width
        if j >= len(region):
            return None
        if region[j] in _PRINTABLE:
            nul = region.find(b"\x00", j)
            if nul > j and all(b in _PRINTABLE for b in region[j:nul]):
                return width
            return None
    return None


def parse_attribute_page(
    page: DataPage, warnings: list[Diagnostic] | None = None
) -> list[AttributeEntry]:
    """Decode a subtype-17 attribute-name table."""
    sink = warnings if warnings is not None else []
    region = _table_region(page)
    entries: list[AttributeEntry] = []
    flags_width: int | None = None
    pos = 0
    prev = 0
    while pos + 4 < len(region):
        if _is_zero_fill(region, pos):
            break
        if flags_width is None:
            flags_width = _infer_flags_width(region, pos)
            if flags_width is None:
                sink.append(
                    Diagnostic(
                        page.offset + TABLE_ENTRIES_OFFSET + pos,
                        "MalformedEntry",
                        "no well-formed attribute entry found",
                    )
                )
                break
        record_number = read_field_u32_le(region, pos)
        name_start = pos + 4 + flags_width
        nul = region.find(b"\x00", name_start)
        ok = (
            nul > name_start
            and all(b in _PRINTABLE for b in region[name_start:nul])
        )
        if not ok:
            sink.append(
                Diagnostic(
                    page.offset + TABLE_ENTRIES_OFFSET + pos,
                    "MalformedEntry",
                    f"attribute entry at region offset {pos} is malformed",
                )
            )
            resync = _resync_entry(region, pos + 1, prev, flags_width)
            if resync is None:
                break
            pos = resync
            continue
        if entries and record_number <= prev:
            sink.append(
                Diagnostic(
                    page.offset + TABLE_ENTRIES_OFFSET + pos,
                    "NonMonotonicRecordNumber",
                    f"record number {record_number} after {prev}",
                )
            )
        entries.append(
            AttributeEntry(
                record_number,
                bytes(region[pos + 4 : name_start]),
                region[name_start:nul].decode("utf-8", errors="backslashreplace"),
            )
        )
        prev = record_number
        pos = nul + 1
    return entries


def _resync_entry(region: bytes, start: int, prev: int, flags_width: int) -> int | None:
    for pos in range(start, len(region) - 4 - flags_width):
        candidate = read_field_u32_le(region, pos)
        if not (prev < candidate <= prev + 64):
            continue
        name_start = pos + 4 + flags_width
        nul = region.find(b"\x00", name_start)
        if nul > name_start and all(b in _PRINTABLE for b in region[name_start:nul]):
            return pos
    return None


_LANG_CHARS = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ-_")


def _looks_like_next_record(region: bytes, pos: int, prev: int) -> bool:
    if pos + 4 > len(region):
        return False
    candidate = read_field_u32_le(region, pos)
    return prev < candidate <= prev + 64


def parse_uti_page(page: DataPage, warnings: list[Diagnostic] | None = None) -> list[UtiEntry]:
    """Decode a subtype-33 UTI table.

    Entries are a record number plus a NUL-terminated type string; some
    carry a short language/country code as a second string, detected by the
    next 4 bytes not reading as a plausible following record number.
    """
    sink = warnings if warnings is not None else []
    region = _table_region(page)
    entries: list[UtiEntry] = []
    pos = 0
    while pos + 4 < len(region):
        if _is_zero_fill(region, pos):
            break
        record_number = read_field_u32_le(region, pos)
        start = pos + 4
        nul = region.find(b"\x00", start)
        if nul <= start or not all(b in _PRINTABLE for b in region[start:nul]):
            sink.append(
                Diagnostic(
                    page.offset + TABLE_ENTRIES_OFFSET + pos,
                    "MalformedEntry",
                    f"uti entry at region offset {pos} is malformed",
                )
            )
            break
        uti = region[start:nul].decode("utf-8", errors="backslashreplace")
        pos = nul + 1
        language = None
        if pos < len(region) and not _is_zero_fill(region, pos) and not _looks_like_next_record(
            region, pos, record_number
        ):
            lang_nul = region.find(b"\x00", pos)
            if (
                pos < lang_nul <= pos + 8
                and all(b in _LANG_CHARS for b in region[pos:lang_nul])
            ):
                language = region[pos:lang_nul].decode("ascii")
                pos = lang_nul + 1
            else:
                sink.append(
                    Diagnostic(
                        page.offset + TABLE_ENTRIES_OFFSET + pos,
                        "MalformedEntry",
                        f"unrecognised bytes after uti entry {record_number}",
                    )
                )
                break
        entries.append(UtiEntry(record_number, uti, language))
    return entries


def search_records(records, keywords) -> list[Hit]:
    """Find every occurrence of each keyword in the record bodies.

    Keywords are matched as byte patterns (strings are UTF-8 encoded);
    hits come back ordered by (page, slot, offset).
    """
    if not keywords:
        raise ValueError("at least one keyword is required")
    patterns = []
    for kw in keywords:
        if isinstance(kw, str):
            patterns.append((kw, kw.encode("utf-8")))
        else:
            patterns.append((kw.decode("utf-8", "backslashreplace"), bytes(kw)))
    hits: list[Hit] = []
    for record in records:
        for label, pattern in patterns:
            start = 0
            while True:
                at = record.body.find(pattern, start)
                if at < 0:
                    break
                hits.append(Hit(record.page_index, record.slot_index, label, at))
                start = at + 1
    hits.sort(key=lambda h: (h.page_index, h.slot_index, h.byte_offset, h.keyword))
    return hits


def attribute_table_csv(entries) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["record_number", "flags_hex", "name"])
    for e in entries:
        writer.writerow([e.record_number, e.flags.hex(), e.name])
    return out.getvalue()


def uti_table_csv(entries) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["record_number", "uti", "language_code"])
    for e in entries:
        writer.writerow([e.record_number, e.uti, e.language_code or ""])
    return out.getvalue()


def record_json_lines(records):
    """One deterministic JSON object per record (the record-dump format)."""
    for record in records:
        fields = extract_fields(record)
        yield json.dumps(
            {
                "page_index": record.page_index,
                "slot_index": record.slot_index,
                "declared_size": record.declared_size,
                "truncated": record.truncated,
                "digest": record.digest,
                "strings": list(fields.strings),
                "cnid_candidates": [
                    {"offset": c.offset, "value": c.value, "byte_order": c.byte_order}
                    for c in fields.cnid_candidates
                ],
                "parent_cnid_candidates": [
                    {"offset": c.offset, "value": c.value, "byte_order": c.byte_order}
                    for c in fields.parent_cnid_candidates
                ],
            },
            sort_keys=True,
            separators=(",", ":"),
        )
