"""Byte-level vocabulary of Store-V2 metadata databases.

Everything here is a pure function over bytes, shared by the parser, the
carver and the synthetic store generator.  The store is page based:

* header page, magic ``8tsd``, normally 4096 bytes;
* map page, magic ``2mbd``, one 16-byte entry per data page;
* data pages, magic ``2pbd``, normally 16384 bytes, role given by the
  subtype field at offset 12 (9 = metadata records, 17 = attribute-name
  table, 33 = UTI table, anything else is kept opaque).

All fixed fields are little-endian unless noted otherwise.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .errors import InputTooShortError, OutOfBoundsError

HEADER_MAGIC = b"8tsd"
MAP_MAGIC = b"2mbd"
DATA_MAGIC = b"2pbd"
ALL_MAGICS = (HEADER_MAGIC, MAP_MAGIC, DATA_MAGIC)

HEADER_PAGE_SIZE = 4096
DATA_PAGE_SIZE = 16384
PAGE_HEADER_LEN = 20

# Header page field offsets.
HEADER_SIZE_OFFSET = 36
HEADER_PATH_OFFSET = 324

# Map page: fixed fields, then 16-byte entries per data page.
MAP_PAGE_TYPE = 12
MAP_ENTRY_LEN = 16
MAP_ENTRIES_OFFSET = 32

# Data page subtypes with a known meaning.
SUBTYPE_METADATA = 9
SUBTYPE_ATTRIBUTES = 17
SUBTYPE_UTIS = 33

# Entry regions of the two name tables start here, relative to page start.
TABLE_ENTRIES_OFFSET = 32


class PageFamily(enum.Enum):
    HEADER = "header"
    MAP = "map"
    DATA = "data"
    NOT_A_PAGE = "not_a_page"


@dataclass(frozen=True)
class PageKind:
    """Classification result for the first 20 bytes of a page.

    ``map_magic_data`` marks the robustness case where a page carries the
    map magic but a page-type field other than 12; it is treated as a data
    page rather than discarded, and callers should surface a provenance
    warning when they see the flag.
    """

    family: PageFamily
    subtype: int | None = None
    map_magic_data: bool = False

    @property
    def is_data(self) -> bool:
        return self.family is PageFamily.DATA


NOT_A_PAGE = PageKind(PageFamily.NOT_A_PAGE)


def read_field_u32_le(data: bytes, offset: int) -> int:
    """Read an unsigned 32-bit little-endian field at ``offset``."""
    if offset < 0 or offset + 4 > len(data):
        raise OutOfBoundsError(
            f"u32 read at offset {offset} exceeds buffer of {len(data)} bytes"
        )
    return struct.unpack_from("<I", data, offset)[0]


def read_field_u64_le(data: bytes, offset: int) -> int:
    if offset < 0 or offset + 8 > len(data):
        raise OutOfBoundsError(
            f"u64 read at offset {offset} exceeds buffer of {len(data)} bytes"
        )
    return struct.unpack_from("<Q", data, offset)[0]


def classify_page(data: bytes) -> PageKind:
    """Classify a page by the 4-byte signature at relative offset 0.

    Total over arbitrary input: anything without a known signature is
    ``NOT_A_PAGE``.  A map-magic page whose page-type field is not 12 is
    classified as a data page (see ``PageKind.map_magic_data``) so that no
    carvable page is lost to the signature ambiguity between the map and
    data page families.
    """
    if len(data) < PAGE_HEADER_LEN:
        raise InputTooShortError(
            f"page classification needs {PAGE_HEADER_LEN} bytes, got {len(data)}"
        )
    tag = bytes(data[:4])
    if tag == HEADER_MAGIC:
        return PageKind(PageFamily.HEADER)
    if tag == DATA_MAGIC:
        return PageKind(PageFamily.DATA, subtype=read_field_u32_le(data, 12))
    if tag == MAP_MAGIC:
        type_field = read_field_u32_le(data, 12)
        if type_field == MAP_PAGE_TYPE:
            return PageKind(PageFamily.MAP)
        return PageKind(PageFamily.DATA, subtype=type_field, map_magic_data=True)
    return NOT_A_PAGE


def decode_path_bytes(raw: bytes) -> str:
    """Decode a path as UTF-8, hex-escaping undecodable bytes."""
    return raw.decode("utf-8", errors="backslashreplace")


@dataclass(frozen=True)
class MapEntry:
    """One 16-byte page-map entry.

    Only the leading 4 bytes (the declared data-page size) are understood;
    the remaining 12 bytes are preserved byte-exact.
    """

    data_page_size: int
    unknown12: bytes = b"\x00" * 12

    def __post_init__(self) -> None:
        if len(self.unknown12) != 12:
            raise ValueError("map entry trailer must be exactly 12 bytes")

    def encode(self) -> bytes:
        return struct.pack("<I", self.data_page_size) + self.unknown12

    @classmethod
    def decode(cls, data: bytes) -> "MapEntry":
        if len(data) != MAP_ENTRY_LEN:
            raise ValueError(f"map entry must be {MAP_ENTRY_LEN} bytes, got {len(data)}")
        return cls(read_field_u32_le(data, 0), bytes(data[4:16]))


@dataclass(frozen=True)
class StoreHeader:
    """Decoded header page.

    ``raw_tail`` is everything after the path terminator: an opaque region
    (it holds a repeating block suspected to be timestamps) kept byte-exact
    and never interpreted.  ``raw`` is the complete header page.
    """

    header_page_size: int
    volume_path: str
    raw_tail: bytes
    raw: bytes


@dataclass(frozen=True)
class PageMap:
    page_size: int
    page_count: int
    page_type: int
    entries: tuple[MapEntry, ...]


@dataclass(frozen=True)
class DataPageHeader:
    """The 20 fixed bytes at the start of every data page.

    ``size2`` (offset 16) has no known meaning; it is parsed, preserved and
    reported but never drives control flow.
    """

    physical_size: int
    allocated_size: int
    subtype: int
    size2: int
    map_magic_data: bool = False

    @classmethod
    def decode(cls, data: bytes) -> "DataPageHeader":
        kind = classify_page(data)
        if not kind.is_data:
            raise ValueError(f"not a data page header: {bytes(data[:4])!r}")
        return cls(
            physical_size=read_field_u32_le(data, 4),
            allocated_size=read_field_u32_le(data, 8),
            subtype=read_field_u32_le(data, 12),
            size2=read_field_u32_le(data, 16),
            map_magic_data=kind.map_magic_data,
        )

    def encode(self, magic: bytes = DATA_MAGIC) -> bytes:
        return magic + struct.pack(
            "<IIII", self.physical_size, self.allocated_size, self.subtype, self.size2
        )


@dataclass(frozen=True)
class DataPage:
    """One data page: decoded fixed header plus the raw page bytes.

    ``page_number`` is the 1-based ordinal within the whole store (the
    header page is 1, the map 2, ...), matching how record pages are
    usually referred to. ``data`` may be shorter than the declared physical
    size when the store is truncated; ``truncated`` marks that case.
    """

    page_number: int
    offset: int
    header: DataPageHeader
    data: bytes
    truncated: bool = False

    @property
    def subtype(self) -> int:
        return self.header.subtype

    @property
    def payload(self) -> bytes:
        """Allocated payload bytes (after the 20-byte page header)."""
        end = self.header.allocated_size
        if end < PAGE_HEADER_LEN or end > len(self.data):
            end = len(self.data)
        return self.data[PAGE_HEADER_LEN:end]


@dataclass(frozen=True)
class Diagnostic:
    """A structural warning tied to a byte offset in the input."""

    offset: int
    code: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"@{self.offset}: {self.code}: {self.message}"
