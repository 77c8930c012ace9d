"""Structural parsing of a complete store.db byte stream.

The parser is deliberately forgiving: any recoverable anomaly becomes a
`Diagnostic` on the result instead of an exception, and it only refuses
outright when offset 0 does not carry the header signature.  Pages are
located via the page map when it is present and consistent, falling back
to a 4-byte-aligned signature scan otherwise, so damaged stores still
yield every page that can be found.

Every byte of the input is attributed to exactly one page or recorded as
slack (see ``ParsedStore.layout``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import (
    NotAHeaderError,
    NotAMapError,
    NotAStoreError,
    UnsupportedVersionError,
)
from .format import (
    ALL_MAGICS,
    DATA_PAGE_SIZE,
    HEADER_PAGE_SIZE,
    HEADER_PATH_OFFSET,
    HEADER_SIZE_OFFSET,
    MAP_ENTRIES_OFFSET,
    MAP_ENTRY_LEN,
    PAGE_HEADER_LEN,
    DataPage,
    DataPageHeader,
    Diagnostic,
    MapEntry,
    PageFamily,
    PageMap,
    StoreHeader,
    classify_page,
    decode_path_bytes,
    read_field_u32_le,
)

# Signature scan only trusts physical sizes within this window; anything
# else falls back to the canonical data page size.
_MIN_PAGE = 512
_MAX_PAGE = 1 << 24

_OTHER_VERSION_TAG = re.compile(rb"[0-9A-Za-z]tsd")


@dataclass(frozen=True)
class ParsedStore:
    header: StoreHeader
    map: PageMap | None
    pages: tuple[DataPage, ...]
    warnings: tuple[Diagnostic, ...]
    # (offset, length, label) spans covering the input exhaustively;
    # labels are "header", "map", "page:<n>" or "slack".
    layout: tuple[tuple[int, int, str], ...]
    source_length: int

    @property
    def total_page_count(self) -> int:
        """Header + map + data pages actually found."""
        return 1 + (1 if self.map is not None else 0) + len(self.pages)

    def data_pages(self, subtype: int | None = None):
        for page in self.pages:
            if subtype is None or page.subtype == subtype:
                yield page

    def subtype_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for page in self.pages:
            hist[page.subtype] = hist.get(page.subtype, 0) + 1
        return hist


def parse_header_page(data: bytes) -> tuple[StoreHeader, list[Diagnostic]]:
    """Decode a header page; the caller supplies the page slice."""
    warnings: list[Diagnostic] = []
    if len(data) < PAGE_HEADER_LEN or classify_page(data).family is not PageFamily.HEADER:
        raise NotAHeaderError("header-page signature missing at offset 0")

    if len(data) >= HEADER_SIZE_OFFSET + 4:
        declared = read_field_u32_le(data, HEADER_SIZE_OFFSET)
    else:
        declared = len(data)
        warnings.append(
            Diagnostic(0, "TruncatedHeader", f"header page is only {len(data)} bytes")
        )
    if declared != HEADER_PAGE_SIZE:
        warnings.append(
            Diagnostic(
                HEADER_SIZE_OFFSET,
                "NonCanonicalHeaderSize",
                f"declared header size {declared}, expected {HEADER_PAGE_SIZE}",
            )
        )

    volume_path = ""
    raw_tail = b""
    if len(data) > HEADER_PATH_OFFSET:
        region = data[HEADER_PATH_OFFSET:]
        end = region.find(b"\x00")
        if end < 0:
            end = len(region)
            warnings.append(
                Diagnostic(HEADER_PATH_OFFSET, "UnterminatedPath", "no NUL after volume path")
            )
        volume_path = decode_path_bytes(region[:end])
        raw_tail = bytes(region[end + 1 :])
        if volume_path and not volume_path.endswith("store.db"):
            warnings.append(
                Diagnostic(
                    HEADER_PATH_OFFSET,
                    "UnexpectedPathSuffix",
                    f"volume path does not end with store.db: {volume_path!r}",
                )
            )
    return StoreHeader(declared, volume_path, raw_tail, bytes(data)), warnings


def parse_map_page(data: bytes) -> tuple[PageMap, list[Diagnostic]]:
    """Decode a map page; partial entry regions drop the tail with a warning."""
    warnings: list[Diagnostic] = []
    if len(data) < PAGE_HEADER_LEN or classify_page(data).family is not PageFamily.MAP:
        raise NotAMapError("map-page signature missing")

    page_size = read_field_u32_le(data, 4)
    page_count = read_field_u32_le(data, 8)
    page_type = read_field_u32_le(data, 12)
    if page_size != DATA_PAGE_SIZE:
        warnings.append(
            Diagnostic(4, "NonCanonicalPageSize", f"map declares page size {page_size}")
        )

    entries: list[MapEntry] = []
    avail = (len(data) - MAP_ENTRIES_OFFSET) // MAP_ENTRY_LEN
    usable = min(page_count, max(avail, 0))
    if usable < page_count:
        warnings.append(
            Diagnostic(
                MAP_ENTRIES_OFFSET,
                "EntryRegionTruncated",
                f"map declares {page_count} entries but only {max(avail, 0)} fit",
            )
        )
    for i in range(usable):
        start = MAP_ENTRIES_OFFSET + i * MAP_ENTRY_LEN
        entries.append(MapEntry.decode(data[start : start + MAP_ENTRY_LEN]))
    return PageMap(page_size, page_count, page_type, tuple(entries)), warnings


def _sane_page_size(value: int) -> bool:
    return _MIN_PAGE <= value <= _MAX_PAGE


def _find_next_signature(data: bytes, start: int) -> int:
    """Next 4-byte-aligned signature at or after ``start``, or -1."""
    best = -1
    for magic in ALL_MAGICS:
        pos = start
        while True:
            hit = data.find(magic, pos)
            if hit < 0:
                break
            if hit % 4 == 0:
                if best < 0 or hit < best:
                    best = hit
                break
            pos = hit + 1
    return best


def parse_store(data: bytes) -> ParsedStore:
    """Parse a complete store image into header, map and data pages."""
    if len(data) < PAGE_HEADER_LEN:
        raise NotAStoreError(f"input of {len(data)} bytes cannot hold a header page")
    kind = classify_page(data[:PAGE_HEADER_LEN])
    if kind.family is not PageFamily.HEADER:
        tag = bytes(data[:4])
        if _OTHER_VERSION_TAG.fullmatch(tag):
            raise UnsupportedVersionError(
                f"header tag {tag!r} looks like a different store generation"
            )
        raise NotAStoreError(f"offset 0 carries {tag!r}, not a store header")

    warnings: list[Diagnostic] = []
    layout: list[tuple[int, int, str]] = []

    # Header page extent: the declared size when plausible, else 4096.
    declared = read_field_u32_le(data, HEADER_SIZE_OFFSET) if len(data) >= 40 else 0
    header_len = declared
    if not (HEADER_SIZE_OFFSET + 4 <= header_len <= len(data)):
        if declared != HEADER_PAGE_SIZE:
            warnings.append(
                Diagnostic(
                    HEADER_SIZE_OFFSET,
                    "ImplausibleHeaderSize",
                    f"declared header size {declared} ignored",
                )
            )
        header_len = min(HEADER_PAGE_SIZE, len(data))
    header, hw = parse_header_page(data[:header_len])
    warnings.extend(hw)
    layout.append((0, header_len, "header"))
    pos = header_len
    page_number = 2

    # Map page, expected immediately after the header.
    page_map: PageMap | None = None
    map_sizes: list[int] = []
    if pos + PAGE_HEADER_LEN <= len(data) and classify_page(
        data[pos : pos + PAGE_HEADER_LEN]
    ).family is PageFamily.MAP:
        declared_ps = read_field_u32_le(data, pos + 4)
        map_len = declared_ps if _sane_page_size(declared_ps) else DATA_PAGE_SIZE
        if map_len > len(data) - pos:
            warnings.append(
                Diagnostic(pos, "TruncatedStore", "map page extends past end of input")
            )
            map_len = len(data) - pos
        page_map, mw = parse_map_page(data[pos : pos + map_len])
        warnings.extend(mw)
        layout.append((pos, map_len, "map"))
        pos += map_len
        page_number += 1
        map_sizes = [e.data_page_size for e in page_map.entries]
    else:
        warnings.append(Diagnostic(pos, "MapMissing", "no map page after the header"))

    pages: list[DataPage] = []
    scan_mode = not map_sizes
    map_index = 0

    def add_slack(start: int, end: int) -> None:
        if end > start:
            layout.append((start, end - start, "slack"))
            if any(data[start:end]):
                warnings.append(
                    Diagnostic(
                        start,
                        "Slack",
                        f"{end - start} unattributed bytes before next page",
                    )
                )

    while pos < len(data):
        if len(data) - pos < PAGE_HEADER_LEN:
            add_slack(pos, len(data))
            break

        kind = classify_page(data[pos : pos + PAGE_HEADER_LEN])
        if not kind.is_data:
            if kind.family in (PageFamily.HEADER, PageFamily.MAP):
                warnings.append(
                    Diagnostic(
                        pos,
                        "UnexpectedPageSignature",
                        f"{kind.family.value} signature inside the page sequence",
                    )
                )
            if not scan_mode:
                scan_mode = True
                warnings.append(
                    Diagnostic(pos, "MapDesync", "page sequence diverges from the map")
                )
            nxt = _find_next_signature(data, pos + 4)
            if nxt < 0:
                add_slack(pos, len(data))
                break
            add_slack(pos, nxt)
            pos = nxt
            continue

        if kind.map_magic_data:
            warnings.append(
                Diagnostic(
                    pos,
                    "MapMagicDataPage",
                    f"data page carries map magic (subtype {kind.subtype})",
                )
            )

        header20 = DataPageHeader.decode(data[pos : pos + PAGE_HEADER_LEN])
        if not scan_mode and map_index < len(map_sizes):
            extent = map_sizes[map_index]
            map_index += 1
            if not _sane_page_size(extent):
                warnings.append(
                    Diagnostic(pos, "ImplausibleMapEntry", f"entry size {extent} ignored")
                )
                extent = DATA_PAGE_SIZE
        else:
            if not scan_mode and map_index >= len(map_sizes):
                scan_mode = True
                warnings.append(
                    Diagnostic(pos, "MapCountMismatch", "more pages than map entries")
                )
            extent = (
                header20.physical_size
                if _sane_page_size(header20.physical_size)
                else DATA_PAGE_SIZE
            )

        truncated = False
        if pos + extent > len(data):
            warnings.append(
                Diagnostic(
                    pos,
                    "TruncatedStore",
                    f"page {page_number} declares {extent} bytes, "
                    f"{len(data) - pos} remain",
                )
            )
            extent = len(data) - pos
            truncated = True

        pages.append(
            DataPage(page_number, pos, header20, bytes(data[pos : pos + extent]), truncated)
        )
        layout.append((pos, extent, f"page:{page_number}"))
        page_number += 1
        pos += extent

    if page_map is not None and not scan_mode and map_index < len(map_sizes):
        warnings.append(
            Diagnostic(
                len(data),
                "MapCountMismatch",
                f"map declares {len(map_sizes)} pages, found {map_index}",
            )
        )

    return ParsedStore(
        header=header,
        map=page_map,
        pages=tuple(pages),
        warnings=tuple(warnings),
        layout=tuple(layout),
        source_length=len(data),
    )
