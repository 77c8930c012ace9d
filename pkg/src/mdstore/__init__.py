"""mdstore - parse, carve, diff and simulate Spotlight Store-V2 databases."""

__version__ = "0.1.0"

from .analysis import (
    DiffReport,
    PersistenceRow,
    RecordCounts,
    count_records,
    diff_stores,
    persistence_check,
)
from .carve import (
    CANDIDATE,
    CONFIRMED,
    REJECTED,
    CarvedPage,
    CarveReport,
    carve_report,
    carved_records,
    scan_image,
    validate_page,
)
from .errors import (
    DecompressError,
    InputTooShortError,
    NoPlausibleWalkError,
    NotAStoreError,
    OutOfBoundsError,
    SpecError,
    SpecTooLargeError,
    StoreError,
    UnknownTargetError,
    UnsupportedVersionError,
)
from .format import (
    DATA_MAGIC,
    DATA_PAGE_SIZE,
    HEADER_MAGIC,
    HEADER_PAGE_SIZE,
    MAP_MAGIC,
    SUBTYPE_ATTRIBUTES,
    SUBTYPE_METADATA,
    SUBTYPE_UTIS,
    DataPage,
    MapEntry,
    PageFamily,
    PageKind,
    PageMap,
    StoreHeader,
    classify_page,
    read_field_u32_le,
)
from .parse import ParsedStore, parse_header_page, parse_map_page, parse_store
from .records import (
    AttributeEntry,
    Hit,
    RawRecord,
    RecordFields,
    UtiEntry,
    extract_fields,
    inflate_payload,
    parse_attribute_page,
    parse_uti_page,
    records_from_page,
    search_records,
    split_records,
    walk_store,
)
from .synth import (
    EventKind,
    FileEvent,
    FileSpec,
    FolderSpec,
    StoreModel,
    StoreSpec,
    apply_event,
    build_store,
    emit_store,
    emit_store_pair,
    expected_record_count,
    export_unallocated,
    plant_pages,
    spec_from_dict,
)
