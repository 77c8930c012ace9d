"""Signature carving of store pages from flat byte streams.

Freed store pages keep their full 16,384 bytes and land on sector
boundaries, so the scanner tests signature hits at sector granularity by
default (byte granularity is available for pathological inputs).  A hit is
only confirmed after the size fields check out and, for record pages, the
payload actually inflates - the three filters together make false
positives on random data vanishingly unlikely.

The scan is streaming: input is consumed in chunks with a one-page
overlap, so memory use is independent of image size and results are a pure
function of (image bytes, parameters).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .errors import DecompressError, NoPlausibleWalkError
from .format import (
    ALL_MAGICS,
    DATA_PAGE_SIZE,
    HEADER_PAGE_SIZE,
    HEADER_SIZE_OFFSET,
    PAGE_HEADER_LEN,
    SUBTYPE_METADATA,
    DataPage,
    DataPageHeader,
    Diagnostic,
    PageFamily,
    PageKind,
    classify_page,
    read_field_u32_le,
)
from .records import RawRecord, inflate_payload, split_records

log = logging.getLogger(__name__)

CONFIRMED = "confirmed"
CANDIDATE = "candidate"
REJECTED = "rejected"

_DEFAULT_CHUNK = 4 << 20


@dataclass(frozen=True)
class CarvedPage:
    source_offset: int
    kind: PageKind
    data: bytes
    confidence: str
    record_count: int = 0
    note: str = ""

    def as_data_page(self, page_number: int = 0) -> DataPage:
        return DataPage(
            page_number, self.source_offset, DataPageHeader.decode(self.data), self.data
        )


@dataclass
class CarveReport:
    """Aggregate of one scan, mirroring pages-recovered / records-recovered
    reporting.  ``pages_recovered`` counts non-rejected data pages; header
    and map pages are carved too (they anchor whole-store reconstruction)
    but reported separately."""

    pages_recovered: int = 0
    records_recovered: int = 0
    header_pages: int = 0
    map_pages: int = 0
    by_subtype: dict = field(default_factory=dict)
    by_confidence: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "pages_recovered": self.pages_recovered,
            "records_recovered": self.records_recovered,
            "header_pages": self.header_pages,
            "map_pages": self.map_pages,
            "by_subtype": {str(k): v for k, v in sorted(self.by_subtype.items())},
            "by_confidence": dict(sorted(self.by_confidence.items())),
        }


def _expected_extent(kind: PageKind, page_size: int) -> int:
    return HEADER_PAGE_SIZE if kind.family is PageFamily.HEADER else page_size


def validate_page(data: bytes, page_size: int = DATA_PAGE_SIZE) -> CarvedPage:
    """Grade one candidate page (offset 0 of ``data``).

    Confirmed needs the right signature, a size field matching the expected
    page size and, for record pages, a successful inflate and record walk.
    A page passing the first two but failing inflation is a Candidate
    (typically a partial overwrite); everything else is Rejected.
    """
    try:
        kind = classify_page(data)
    except Exception:
        kind = PageKind(PageFamily.NOT_A_PAGE)
    if kind.family is PageFamily.NOT_A_PAGE:
        return CarvedPage(0, kind, bytes(data), REJECTED, note="no signature")

    expected = _expected_extent(kind, page_size)
    short = len(data) < expected

    if kind.family is PageFamily.HEADER:
        if len(data) < HEADER_SIZE_OFFSET + 4:
            return CarvedPage(0, kind, bytes(data), REJECTED, note="truncated header")
        declared = read_field_u32_le(data, HEADER_SIZE_OFFSET)
        if declared == HEADER_PAGE_SIZE and not short:
            return CarvedPage(0, kind, bytes(data), CONFIRMED)
        if 512 <= declared <= (1 << 20):
            return CarvedPage(
                0, kind, bytes(data), CANDIDATE, note=f"header size {declared}"
            )
        return CarvedPage(0, kind, bytes(data), REJECTED, note=f"header size {declared}")

    if kind.family is PageFamily.MAP:
        declared = read_field_u32_le(data, 4)
        if declared == page_size and not short:
            return CarvedPage(0, kind, bytes(data), CONFIRMED)
        if 512 <= declared <= (1 << 24):
            return CarvedPage(0, kind, bytes(data), CANDIDATE, note=f"page size {declared}")
        return CarvedPage(0, kind, bytes(data), REJECTED, note=f"page size {declared}")

    header = DataPageHeader.decode(data[:PAGE_HEADER_LEN])
    provenance = "map-magic data page" if kind.map_magic_data else ""
    if header.physical_size != page_size:
        return CarvedPage(
            0, kind, bytes(data), REJECTED,
            note=f"physical size {header.physical_size} != {page_size}",
        )
    if kind.subtype != SUBTYPE_METADATA:
        if short:
            return CarvedPage(0, kind, bytes(data), CANDIDATE, note="short page")
        return CarvedPage(0, kind, bytes(data), CONFIRMED, note=provenance)

    page = DataPage(0, 0, header, bytes(data))
    try:
        records = split_records(inflate_payload(page))
    except (DecompressError, NoPlausibleWalkError) as exc:
        return CarvedPage(0, kind, bytes(data), CANDIDATE, note=str(exc))
    if any(r.truncated for r in records):
        return CarvedPage(
            0, kind, bytes(data), CANDIDATE,
            record_count=len(records), note="truncated record in walk",
        )
    if short:
        return CarvedPage(
            0, kind, bytes(data), CANDIDATE,
            record_count=len(records), note="short page",
        )
    return CarvedPage(
        0, kind, bytes(data), CONFIRMED, record_count=len(records), note=provenance
    )


def _signature_hits(buffer: bytearray, lo: int, hi: int) -> list[int]:
    hits: list[int] = []
    for magic in ALL_MAGICS:
        pos = lo
        while pos < hi:
            hit = buffer.find(magic, pos, hi + 4)
            if hit < 0 or hit >= hi:
                break
            hits.append(hit)
            pos = hit + 1
    hits.sort()
    return hits


def scan_image(
    stream,
    sector_size: int = 512,
    page_size: int = DATA_PAGE_SIZE,
    byte_granular: bool = False,
    chunk_size: int = _DEFAULT_CHUNK,
    diagnostics: list[Diagnostic] | None = None,
):
    """Scan a stream for store pages; yields CarvedPage in offset order.

    Signature hits off the alignment granule are skipped; hits inside an
    already accepted page are suppressed (first match wins) and logged.
    Unreadable regions are skipped with a diagnostic when the stream is
    seekable, otherwise the scan stops there.
    """
    if page_size % sector_size:
        raise ValueError("sector_size must divide page_size")
    if chunk_size < page_size:
        chunk_size = page_size
    granule = 1 if byte_granular else sector_size
    sink = diagnostics if diagnostics is not None else []

    buffer = bytearray()
    base = 0  # stream offset of buffer[0]
    suppress_until = 0
    eof = False

    while not eof:
        try:
            chunk = stream.read(chunk_size)
        except OSError as exc:
            skip_to = base + len(buffer) + chunk_size
            sink.append(
                Diagnostic(
                    base + len(buffer),
                    "IoError",
                    f"unreadable region ({exc}); skipped to {skip_to}",
                )
            )
            log.warning("unreadable region at %d: %s", base + len(buffer), exc)
            try:
                stream.seek(skip_to)
            except (OSError, AttributeError):
                break
            buffer.clear()
            base = skip_to
            continue
        if chunk:
            buffer.extend(chunk)
        else:
            eof = True

        # Only positions with a full page of lookahead are resolvable now;
        # at EOF everything left is.
        scan_limit = len(buffer) if eof else max(0, len(buffer) - page_size)
        for rel in _signature_hits(buffer, 0, scan_limit):
            offset = base + rel
            if offset % granule:
                continue
            if offset < suppress_until:
                log.debug("suppressed inner signature at %d", offset)
                continue
            try:
                kind = classify_page(buffer[rel : rel + PAGE_HEADER_LEN])
            except Exception:
                continue
            extent = _expected_extent(kind, page_size)
            candidate = bytes(buffer[rel : rel + extent])
            graded = validate_page(candidate, page_size)
            graded = CarvedPage(
                offset,
                graded.kind,
                graded.data,
                graded.confidence,
                graded.record_count,
                graded.note,
            )
            yield graded
            if graded.confidence in (CONFIRMED, CANDIDATE):
                suppress_until = offset + extent

        drop = scan_limit
        base += drop
        del buffer[:drop]


def carve_report(pages) -> CarveReport:
    """Aggregate carved pages; records are counted on confirmed record pages."""
    report = CarveReport()
    for page in pages:
        report.by_confidence[page.confidence] = (
            report.by_confidence.get(page.confidence, 0) + 1
        )
        if page.confidence == REJECTED:
            continue
        if page.kind.family is PageFamily.HEADER:
            report.header_pages += 1
        elif page.kind.family is PageFamily.MAP:
            report.map_pages += 1
        else:
            report.pages_recovered += 1
            report.by_subtype[page.kind.subtype] = (
                report.by_subtype.get(page.kind.subtype, 0) + 1
            )
            if page.confidence == CONFIRMED and page.kind.subtype == SUBTYPE_METADATA:
                report.records_recovered += page.record_count
    return report


def carved_records(pages) -> list[RawRecord]:
    """Records from confirmed record pages, re-walked after carving."""
    records: list[RawRecord] = []
    for index, page in enumerate(pages, start=1):
        if (
            page.confidence == CONFIRMED
            and page.kind.is_data
            and page.kind.subtype == SUBTYPE_METADATA
        ):
            records.extend(
                split_records(inflate_payload(page.as_data_page(index)), index)
            )
    return records
