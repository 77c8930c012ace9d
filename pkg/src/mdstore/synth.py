"""Synthetic Store-V2 generator and lifecycle simulator.

This is the independent oracle for the whole toolkit: it builds conforming
stores from a declarative spec, replays create/delete/mass-delete/reset
events with the record fluidity the real store exhibits (surviving records
collapse into freed space, the vacated page tail is zero-wiped), and keeps
byte-exact images of freed pages so carving results can be compared
against ground truth.

Generated record bodies follow the observed shape of real records - two
64-bit identifiers, then strings delimited by 0x01/0x00 - but are declared
synthetic: they exercise the codec's walk and extraction logic, not
fidelity to undocumented internals.  Names and attribute values are
restricted to printable ASCII of at least three characters so that the
planted strings are exactly what heuristic extraction must return.
"""

from __future__ import annotations

import enum
import hashlib
import random
import re
import struct
import zlib
from dataclasses import dataclass, field

from .errors import SpecError, SpecTooLargeError, UnknownTargetError
from .format import (
    DATA_PAGE_SIZE,
    HEADER_MAGIC,
    HEADER_PAGE_SIZE,
    HEADER_PATH_OFFSET,
    HEADER_SIZE_OFFSET,
    MAP_ENTRIES_OFFSET,
    MAP_ENTRY_LEN,
    MAP_MAGIC,
    MAP_PAGE_TYPE,
    PAGE_HEADER_LEN,
    SUBTYPE_ATTRIBUTES,
    SUBTYPE_METADATA,
    SUBTYPE_UTIS,
    DataPageHeader,
    MapEntry,
)

ROOT = "/"

# Uncompressed record-stream capacity per page.  The margin under the
# physical size keeps even incompressible streams within one page after
# zlib framing overhead.
RECORD_STREAM_CAPACITY = DATA_PAGE_SIZE - PAGE_HEADER_LEN - 64

# One map page describes at most this many data pages.
MAX_DATA_PAGES = (DATA_PAGE_SIZE - MAP_ENTRIES_OFFSET) // MAP_ENTRY_LEN

# Identifiers above this limit could embed 3-byte printable runs in their
# little-endian encoding and pollute string extraction.
MAX_CNID = 0x202020

FILLER_SUBTYPE = 5

DEFAULT_ATTRIBUTES = (
    "_kMDItemFileName",
    "kMDItemDisplayName",
    "kMDItemContentType",
    "kMDItemKind",
    "kMDItemAuthors",
    "kMDItemTitle",
)

DEFAULT_UTIS = (
    ("public.message", None),
    ("com.apple.mail.emlx", None),
    ("com.microsoft.entourage.virtual.message", None),
    ("public.folder", None),
    ("public.plain-text", "en"),
    ("public.data", None),
)

_BASELINE_CONFIG_STRINGS = ("store.config.plist", "format-version:2")
_BASELINE_ROOT_STRINGS = ("Macintosh HD",)


_PRINTABLE_RE = re.compile(r"[\x20-\x7e]*\Z")


def _valid_text(value: str, lo: int = 3, hi: int = 255) -> bool:
    return (
        isinstance(value, str)
        and lo <= len(value) <= hi
        and _PRINTABLE_RE.match(value) is not None
    )


def _check_name(name: str, what: str) -> None:
    if not _valid_text(name) or "/" in name:
        raise SpecError(
            f"{what} name {name!r} must be 3-255 printable ASCII chars without '/'"
        )


@dataclass(frozen=True)
class FileSpec:
    name: str
    parent: str = ROOT
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FolderSpec:
    name: str
    parent: str = ROOT


@dataclass(frozen=True)
class StoreSpec:
    files: tuple[FileSpec, ...] = ()
    folders: tuple[FolderSpec, ...] = ()
    seed: int = 0

    def validate(self) -> None:
        known_folders: set[str] = set()
        for folder in self.folders:
            _check_name(folder.name, "folder")
            if folder.name in known_folders:
                raise SpecError(f"duplicate folder name {folder.name!r}")
            if folder.parent != ROOT and folder.parent not in known_folders:
                raise SpecError(
                    f"folder {folder.name!r} has unknown parent {folder.parent!r}"
                )
            known_folders.add(folder.name)
        seen_files: set[tuple[str, str]] = set()
        for f in self.files:
            _check_name(f.name, "file")
            if f.parent != ROOT and f.parent not in known_folders:
                raise SpecError(f"file {f.name!r} has unknown parent {f.parent!r}")
            key = (f.parent, f.name)
            if key in seen_files:
                raise SpecError(f"duplicate file {f.name!r} under {f.parent!r}")
            seen_files.add(key)
            for attr_name, value in f.attributes.items():
                if not _valid_text(attr_name):
                    raise SpecError(f"bad attribute name {attr_name!r}")
                if not _valid_text(value, 3, 15000):
                    raise SpecError(
                        f"attribute {attr_name!r} of {f.name!r} needs a printable "
                        "ASCII value of 3-15000 chars"
                    )


def spec_from_dict(raw: dict) -> StoreSpec:
    """Build a StoreSpec from the JSON schema used by spec files."""
    if not isinstance(raw, dict):
        raise SpecError("store spec must be a JSON object")
    folders = tuple(
        FolderSpec(d.get("name", ""), d.get("parent", ROOT))
        for d in raw.get("folders", [])
    )
    files = tuple(
        FileSpec(d.get("name", ""), d.get("parent", ROOT), dict(d.get("attributes", {})))
        for d in raw.get("files", [])
    )
    spec = StoreSpec(files=files, folders=folders, seed=int(raw.get("seed", 0)))
    spec.validate()
    return spec


class EventKind(enum.Enum):
    CREATE = "create"
    DELETE = "delete"
    MASS_DELETE = "mass_delete"
    INDEX_RESET = "index_reset"


@dataclass(frozen=True)
class FileEvent:
    kind: EventKind
    name: str = ""
    parent: str = ROOT
    folder: bool = False
    attributes: tuple[tuple[str, str], ...] = ()


def events_from_list(raw: list) -> list[FileEvent]:
    events = []
    for i, d in enumerate(raw):
        try:
            kind = EventKind(d.get("kind", ""))
        except ValueError:
            raise SpecError(f"event {i}: unknown kind {d.get('kind')!r}") from None
        events.append(
            FileEvent(
                kind=kind,
                name=d.get("name", ""),
                parent=d.get("parent", ROOT),
                folder=bool(d.get("folder", False)),
                attributes=tuple(sorted(d.get("attributes", {}).items())),
            )
        )
    return events


@dataclass
class LiveRecord:
    cnid: int
    parent_cnid: int
    name: str
    parent: str
    kind: str  # "config" | "root" | "folder" | "file"
    strings: tuple[str, ...]
    body: bytes

    @property
    def footprint(self) -> int:
        return 4 + len(self.body)


@dataclass
class LivePage:
    """Record slots of one subtype-9 page plus its zero-wiped tail.

    ``wiped_tail`` is the high-water gap: bytes past the live records that
    once held data and are now zero in the uncompressed stream, exactly as
    record collapse leaves them on disk.  ``stream_len`` caches the summed
    record footprints; the model maintains it on every mutation.
    """

    records: list[LiveRecord] = field(default_factory=list)
    wiped_tail: int = 0
    stream_len: int = 0

    def stream(self) -> bytes:
        parts = [struct.pack("<I", len(r.body)) + r.body for r in self.records]
        parts.append(b"\x00" * self.wiped_tail)
        return b"".join(parts)


def encode_record_body(cnid: int, parent_cnid: int, strings) -> bytes:
    """Synthetic record body: two 64-bit ids, then 0x01/0x00-framed strings."""
    if not 0 < cnid < MAX_CNID or not 0 < parent_cnid < MAX_CNID:
        raise SpecError(f"identifier out of range: cnid={cnid} parent={parent_cnid}")
    parts = [struct.pack("<QQ", cnid, parent_cnid)]
    for s in strings:
        parts.append(b"\x01" + s.encode("ascii") + b"\x00")
    return b"".join(parts)


class StoreModel:
    """Mutable single-threaded simulator of one store's lifecycle.

    Live state is the page list; everything a deletion ever freed is kept
    byte-exact in ``freed_pages``.  CNIDs are handed out by a counter that
    never rewinds, across index resets included.
    """

    def __init__(self, spec: StoreSpec):
        spec.validate()
        self.spec = spec
        self.seed = spec.seed
        self.next_cnid = 1
        self.pages: list[LivePage] = []
        self.folders: dict[str, int] = {}
        self.freed_pages: list[bytes] = []
        self.event_log: list[FileEvent] = []
        self._live_index: dict[tuple[str, str], LiveRecord] = {}
        extra = sorted(
            {k for f in spec.files for k in f.attributes} - set(DEFAULT_ATTRIBUTES)
        )
        self.attr_table: tuple[str, ...] = DEFAULT_ATTRIBUTES + tuple(extra)
        self.uti_table = DEFAULT_UTIS
        self._install_baseline()
        for folder in spec.folders:
            self._create_folder(folder.name, folder.parent)
        for f in spec.files:
            self._create_file(f.name, f.parent, dict(f.attributes))

    @classmethod
    def from_spec(cls, spec: StoreSpec) -> "StoreModel":
        return cls(spec)

    # -- record bookkeeping ------------------------------------------------

    def _take_cnid(self) -> int:
        cnid = self.next_cnid
        self.next_cnid += 1
        return cnid

    def _install_baseline(self) -> None:
        config_cnid = self._take_cnid()
        root_cnid = self._take_cnid()
        self._place(
            LiveRecord(
                config_cnid,
                root_cnid,
                "store.config.plist",
                "",
                "config",
                _BASELINE_CONFIG_STRINGS,
                encode_record_body(config_cnid, root_cnid, _BASELINE_CONFIG_STRINGS),
            )
        )
        self._place(
            LiveRecord(
                root_cnid,
                config_cnid,
                "Macintosh HD",
                "",
                "root",
                _BASELINE_ROOT_STRINGS,
                encode_record_body(root_cnid, config_cnid, _BASELINE_ROOT_STRINGS),
            )
        )
        self._root_cnid = root_cnid

    def _place(self, record: LiveRecord) -> None:
        if record.footprint > RECORD_STREAM_CAPACITY:
            raise SpecTooLargeError(f"record for {record.name!r} exceeds page capacity")
        page = self.pages[-1] if self.pages else None
        if page is None or page.stream_len + record.footprint > RECORD_STREAM_CAPACITY:
            if len(self.pages) + 8 > MAX_DATA_PAGES:
                raise SpecTooLargeError("store exceeds the configured page budget")
            page = LivePage()
            self.pages.append(page)
        page.records.append(record)
        page.stream_len += record.footprint
        page.wiped_tail = max(0, page.wiped_tail - record.footprint)

    def _parent_cnid(self, parent: str) -> int:
        if parent == ROOT:
            return self._root_cnid
        if parent not in self.folders:
            raise UnknownTargetError(f"parent folder {parent!r} is not live")
        return self.folders[parent]

    def _find(self, name: str, parent: str):
        record = self._live_index.get((parent, name))
        if record is None:
            return None
        for page_idx, page in enumerate(self.pages):
            if any(r is record for r in page.records):
                return page_idx, record
        return None

    def live_records(self) -> list[LiveRecord]:
        return [r for page in self.pages for r in page.records]

    def live_count(self) -> int:
        return sum(len(page.records) for page in self.pages)

    # -- creation / deletion ------------------------------------------------

    def _create_file(self, name: str, parent: str, attributes: dict) -> LiveRecord:
        _check_name(name, "file")
        parent_cnid = self._parent_cnid(parent)
        if (parent, name) in self._live_index:
            raise SpecError(f"{name!r} already exists under {parent!r}")
        strings = (name,) + tuple(
            attributes[k] for k in self.attr_table if k in attributes
        )
        cnid = self._take_cnid()
        record = LiveRecord(
            cnid, parent_cnid, name, parent, "file", strings,
            encode_record_body(cnid, parent_cnid, strings),
        )
        self._place(record)
        self._live_index[(parent, name)] = record
        return record

    def _create_folder(self, name: str, parent: str) -> LiveRecord:
        _check_name(name, "folder")
        parent_cnid = self._parent_cnid(parent)
        if name in self.folders:
            raise SpecError(f"folder {name!r} already exists")
        cnid = self._take_cnid()
        record = LiveRecord(
            cnid, parent_cnid, name, parent, "folder", (name,),
            encode_record_body(cnid, parent_cnid, (name,)),
        )
        self._place(record)
        self.folders[name] = cnid
        self._live_index[(parent, name)] = record
        return record

    def _delete(self, name: str, parent: str) -> None:
        found = self._find(name, parent)
        if found is None:
            raise UnknownTargetError(f"{name!r} under {parent!r} is not live")
        page_idx, record = found
        if record.kind == "folder" and self._folder_children(record.name):
            raise SpecError(f"folder {name!r} is not empty; mass-delete it instead")
        self._wipe(page_idx, record)
        del self._live_index[(parent, name)]
        if record.kind == "folder":
            del self.folders[record.name]

    def _wipe(self, page_idx: int, record: LiveRecord) -> None:
        # Surviving records collapse into the freed space; the page tail
        # grows by the vacated footprint and reads as zeros.
        page = self.pages[page_idx]
        page.records.remove(record)
        page.stream_len -= record.footprint
        page.wiped_tail += record.footprint

    def _folder_children(self, folder: str) -> list[LiveRecord]:
        return [
            r
            for page in self.pages
            for r in page.records
            if r.parent == folder and r.kind in ("file", "folder")
        ]

    def _subtree(self, folder: str) -> list[LiveRecord]:
        folder_record = next(
            (
                r
                for page in self.pages
                for r in page.records
                if r.kind == "folder" and r.name == folder
            ),
            None,
        )
        if folder_record is None:
            raise UnknownTargetError(f"folder {folder!r} is not live")
        members = [folder_record]
        queue = [folder_record.name]
        while queue:
            current = queue.pop()
            for child in self._folder_children(current):
                members.append(child)
                if child.kind == "folder":
                    queue.append(child.name)
        return members

    def _mass_delete(self, folder: str) -> None:
        targets = {id(r) for r in self._subtree(folder)}
        touched = [
            i
            for i, page in enumerate(self.pages)
            if any(id(r) in targets for r in page.records)
        ]
        # Freed images are the touched pages exactly as they stood before
        # this event - what a dropped page leaves in unallocated space.
        for i in touched:
            self.freed_pages.append(emit_record_page(self.pages[i]))
        emptied = set()
        for i in touched:
            page = self.pages[i]
            for record in [r for r in page.records if id(r) in targets]:
                page.records.remove(record)
                page.stream_len -= record.footprint
                page.wiped_tail += record.footprint
                self._live_index.pop((record.parent, record.name), None)
                if record.kind == "folder":
                    self.folders.pop(record.name, None)
            if not page.records:
                emptied.add(i)
        self.pages = [p for i, p in enumerate(self.pages) if i not in emptied]

    def _index_reset(self) -> None:
        self.freed_pages.extend(emit_pages(self))
        self.pages = []
        self.folders = {}
        self._live_index = {}
        self._install_baseline()


def apply_event(model: StoreModel, event: FileEvent) -> StoreModel:
    """Apply one lifecycle event; the model is mutated and returned."""
    if event.kind is EventKind.CREATE:
        if event.folder:
            model._create_folder(event.name, event.parent)
        else:
            model._create_file(event.name, event.parent, dict(event.attributes))
    elif event.kind is EventKind.DELETE:
        model._delete(event.name, event.parent)
    elif event.kind is EventKind.MASS_DELETE:
        model._mass_delete(event.name)
    elif event.kind is EventKind.INDEX_RESET:
        model._index_reset()
    else:  # pragma: no cover - enum is closed
        raise ValueError(event.kind)
    model.event_log.append(event)
    return model


# -- page emission ----------------------------------------------------------


def _store_guid(seed: int) -> str:
    rng = random.Random(f"{seed}:guid")
    return "-".join(
        f"{rng.getrandbits(bits):0{bits // 4}X}" for bits in (32, 16, 16, 16, 48)
    )


def emit_header_page(seed: int) -> bytes:
    page = bytearray(HEADER_PAGE_SIZE)
    page[0:4] = HEADER_MAGIC
    # offset 4 carries the store-wide data page size, like every other page
    struct.pack_into("<I", page, 4, DATA_PAGE_SIZE)
    struct.pack_into("<I", page, HEADER_SIZE_OFFSET, HEADER_PAGE_SIZE)
    path = f"/Macintosh HD/.Spotlight-V100/Store-V2/{_store_guid(seed)}/store.db"
    raw = path.encode("ascii")
    page[HEADER_PATH_OFFSET : HEADER_PATH_OFFSET + len(raw)] = raw
    return bytes(page)


def emit_map_page(data_page_count: int, seed: int) -> bytes:
    if data_page_count > MAX_DATA_PAGES:
        raise SpecTooLargeError(
            f"{data_page_count} data pages exceed one map page ({MAX_DATA_PAGES})"
        )
    page = bytearray(DATA_PAGE_SIZE)
    page[0:4] = MAP_MAGIC
    struct.pack_into(
        "<III", page, 4, DATA_PAGE_SIZE, data_page_count, MAP_PAGE_TYPE
    )
    rng = random.Random(f"{seed}:map")
    pos = MAP_ENTRIES_OFFSET
    for _ in range(data_page_count):
        entry = MapEntry(DATA_PAGE_SIZE, rng.randbytes(12)).encode()
        page[pos : pos + MAP_ENTRY_LEN] = entry
        pos += MAP_ENTRY_LEN
    return bytes(page)


def _emit_table_pages(subtype: int, entries: list[bytes]) -> list[bytes]:
    capacity = DATA_PAGE_SIZE - 32
    pages: list[bytes] = []
    batch: list[bytes] = []
    used = 0

    def flush() -> None:
        body = b"".join(batch)
        page = bytearray(DATA_PAGE_SIZE)
        page[0:20] = DataPageHeader(DATA_PAGE_SIZE, 32 + len(body), subtype, 0).encode()
        page[32 : 32 + len(body)] = body
        pages.append(bytes(page))

    for entry in entries:
        if used + len(entry) > capacity:
            flush()
            batch, used = [], 0
        batch.append(entry)
        used += len(entry)
    flush()
    return pages


def emit_attribute_pages(names) -> list[bytes]:
    entries = []
    for i, name in enumerate(names):
        flag = bytes([(i % 5) + 1])
        entries.append(struct.pack("<I", i + 1) + flag + name.encode("ascii") + b"\x00")
    return _emit_table_pages(SUBTYPE_ATTRIBUTES, entries)


def emit_uti_pages(utis) -> list[bytes]:
    entries = []
    for i, (uti, language) in enumerate(utis):
        entry = struct.pack("<I", i + 1) + uti.encode("ascii") + b"\x00"
        if language:
            entry += language.encode("ascii") + b"\x00"
        entries.append(entry)
    return _emit_table_pages(SUBTYPE_UTIS, entries)


def emit_filler_page() -> bytes:
    page = bytearray(DATA_PAGE_SIZE)
    page[0:20] = DataPageHeader(
        DATA_PAGE_SIZE, PAGE_HEADER_LEN, FILLER_SUBTYPE, 0
    ).encode()
    return bytes(page)


def emit_record_page(live_page: LivePage) -> bytes:
    stream = live_page.stream()
    compressed = zlib.compress(stream, 6)
    allocated = PAGE_HEADER_LEN + len(compressed)
    if allocated > DATA_PAGE_SIZE:
        raise SpecTooLargeError("compressed record stream exceeds the page size")
    page = bytearray(DATA_PAGE_SIZE)
    page[0:20] = DataPageHeader(
        DATA_PAGE_SIZE, allocated, SUBTYPE_METADATA, len(stream)
    ).encode()
    page[PAGE_HEADER_LEN:allocated] = compressed
    return bytes(page)


def emit_pages(model: StoreModel) -> list[bytes]:
    """Emit every page of the live store, header first.

    An empty store still spans eight pages: header, map, the two name
    tables, unknown-subtype filler, then the record pages from page 8 on.
    """
    attr_pages = emit_attribute_pages(model.attr_table)
    uti_pages = emit_uti_pages(model.uti_table)
    record_pages = [emit_record_page(p) for p in model.pages]
    filler_count = max(0, 5 - len(attr_pages) - len(uti_pages))
    data_pages = (
        attr_pages + uti_pages + [emit_filler_page()] * filler_count + record_pages
    )
    return [
        emit_header_page(model.seed),
        emit_map_page(len(data_pages), model.seed),
    ] + data_pages


def emit_store(model: StoreModel) -> bytes:
    return b"".join(emit_pages(model))


def build_store(spec: StoreSpec) -> bytes:
    """Generate a conforming store image; deterministic for a fixed seed."""
    return emit_store(StoreModel.from_spec(spec))


def emit_store_pair(model: StoreModel, lag: int = 0) -> tuple[bytes, bytes]:
    """Emit (.store.db, store.db) where the second lags ``lag`` events.

    The sibling database is updated first on a real volume; the lagged copy
    is produced by replaying all but the last ``lag`` events on a fresh
    model, which reproduces CNIDs exactly.
    """
    if lag < 0:
        raise ValueError("lag must be >= 0")
    dot_store = emit_store(model)
    if lag == 0:
        return dot_store, dot_store
    replay = StoreModel.from_spec(model.spec)
    for event in model.event_log[: max(0, len(model.event_log) - lag)]:
        apply_event(replay, event)
    return dot_store, emit_store(replay)


def expected_record_count(files: int, folders: int) -> int:
    """Extant files + extant folders + the two baseline records."""
    return files + folders + 2


def random_fill(seed, length: int) -> bytes:
    """Seeded high-entropy filler; a SHAKE squeeze is far faster than the
    stdlib Mersenne generator at image scale."""
    return hashlib.shake_256(str(seed).encode()).digest(length)


def plant_pages(
    pages, image_size: int, seed, sector_size: int = 512
) -> tuple[bytes, list[int]]:
    """Embed page images at random sector-aligned offsets in random filler.

    Returns the image and the chosen offsets (in planting order).  Page
    lengths must be sector multiples so placements cannot overlap.
    """
    pages = list(pages)
    rng = random.Random(f"{seed}:unalloc")
    total = sum(len(p) for p in pages)
    if any(len(p) % sector_size for p in pages):
        raise ValueError("page images must be multiples of the sector size")
    image_size = max(image_size, total + sector_size)
    image_size += -image_size % sector_size
    image = bytearray(random_fill(f"{seed}:unalloc", image_size))
    rng.shuffle(pages)
    free_sectors = (image_size - total) // sector_size
    gaps = sorted(rng.randint(0, free_sectors) for _ in pages)
    offsets: list[int] = []
    consumed = 0
    for gap, page in zip(gaps, pages):
        offset = gap * sector_size + consumed
        image[offset : offset + len(page)] = page
        offsets.append(offset)
        consumed += len(page)
    return bytes(image), offsets


def export_unallocated(
    model: StoreModel,
    image_size: int | None = None,
    seed: int | None = None,
    sector_size: int = 512,
) -> bytes:
    """Simulated unallocated space: freed pages scattered in random filler."""
    total = sum(len(p) for p in model.freed_pages)
    if image_size is None:
        image_size = max(4 << 20, 4 * total)
    image, _ = plant_pages(
        model.freed_pages,
        image_size,
        model.seed if seed is None else seed,
        sector_size,
    )
    return image
