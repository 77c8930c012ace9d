"""Cross-store analytics: record diffing, counting, persistence checks.

Diffing works on the multiset of record-body digests, the same
record-by-record comparison used to establish that a store and its
co-located sibling differ only by in-flight updates.  Identity is the full
body digest, not the (heuristic) CNID; an optional CNID-keyed mode exists
for investigator workflows and is labeled heuristic in its output.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass

from .carve import CONFIRMED, CarvedPage
from .errors import DecompressError, NoPlausibleWalkError
from .format import SUBTYPE_METADATA, Diagnostic
from .parse import ParsedStore
from .records import (
    RawRecord,
    extract_fields,
    inflate_payload,
    records_from_page,
    split_records,
)


@dataclass(frozen=True)
class RecordRef:
    page_index: int
    slot_index: int
    digest: str
    first_string: str


@dataclass(frozen=True)
class DiffReport:
    added: tuple[RecordRef, ...]
    removed: tuple[RecordRef, ...]
    unchanged_count: int
    method: str = "digest-multiset"

    @property
    def is_empty(self) -> bool:
        return not self.added and not self.removed


@dataclass(frozen=True)
class RecordCounts:
    total: int
    per_page: tuple[dict, ...]
    per_subtype: dict


@dataclass(frozen=True)
class PersistenceRow:
    name: str
    verdict: str  # "LiveRecord" | "CarvedOnly" | "NotFound"


def _walk_pages(store: ParsedStore):
    """(page, records-or-None, error-or-None) per record page, in order."""
    for page in store.data_pages(SUBTYPE_METADATA):
        try:
            yield page, records_from_page(page), None
        except (DecompressError, NoPlausibleWalkError) as exc:
            yield page, None, Diagnostic(page.offset, type(exc).__name__, str(exc))


def count_records(store: ParsedStore) -> RecordCounts:
    """Record totals per page and the data-page subtype histogram.

    A page whose payload cannot be walked contributes an error entry
    instead of a count; its siblings are unaffected.
    """
    per_page: list[dict] = []
    total = 0
    for page, records, error in _walk_pages(store):
        if error is not None:
            per_page.append({"page": page.page_number, "error": error.code})
        else:
            per_page.append({"page": page.page_number, "count": len(records)})
            total += len(records)
    return RecordCounts(
        total=total,
        per_page=tuple(per_page),
        per_subtype={str(k): v for k, v in sorted(store.subtype_histogram().items())},
    )


def _ref(record: RawRecord, key: str) -> RecordRef:
    fields = extract_fields(record)
    first = fields.strings[0] if fields.strings else ""
    return RecordRef(record.page_index, record.slot_index, _key_of(record, key), first)


def _key_of(record: RawRecord, key: str) -> str:
    if key == "cnid":
        fields = extract_fields(record)
        if fields.cnid_candidates:
            return f"cnid:{fields.cnid_candidates[0].value}"
        return f"digest:{record.digest}"
    return record.digest


def _store_records(store: ParsedStore) -> list[RawRecord]:
    records: list[RawRecord] = []
    for _, page_records, error in _walk_pages(store):
        if error is None:
            records.extend(page_records)
    return records


def diff_stores(a: ParsedStore, b: ParsedStore, key: str = "digest") -> DiffReport:
    """Multiset difference of record bodies between two parsed stores.

    ``added`` lists records only in ``b``, ``removed`` records only in
    ``a``; both ordered by (page, slot).  When several identical bodies are
    present, the excess instances are attributed first-seen-first.
    """
    if key not in ("digest", "cnid"):
        raise ValueError(f"unknown diff key {key!r}")
    records_a = _store_records(a)
    records_b = _store_records(b)
    count_a = Counter(_key_of(r, key) for r in records_a)
    count_b = Counter(_key_of(r, key) for r in records_b)

    def excess(records, own, other) -> tuple[RecordRef, ...]:
        budget = {k: max(0, n - other.get(k, 0)) for k, n in own.items()}
        out: list[RecordRef] = []
        for record in records:
            k = _key_of(record, key)
            if budget.get(k, 0) > 0:
                budget[k] -= 1
                out.append(_ref(record, key))
        return tuple(out)

    unchanged = sum(min(n, count_b.get(k, 0)) for k, n in count_a.items())
    return DiffReport(
        added=excess(records_b, count_b, count_a),
        removed=excess(records_a, count_a, count_b),
        unchanged_count=unchanged,
        method="digest-multiset" if key == "digest" else "cnid-heuristic",
    )


def diff_csv(report: DiffReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["status", "page", "slot", "digest", "first_string"])
    for status, refs in (("added", report.added), ("removed", report.removed)):
        for ref in refs:
            writer.writerow([status, ref.page_index, ref.slot_index, ref.digest, ref.first_string])
    return out.getvalue()


def _carved_record_bodies(carved_pages) -> list[RawRecord]:
    records: list[RawRecord] = []
    for index, page in enumerate(carved_pages, start=1):
        if not isinstance(page, CarvedPage):
            raise TypeError("persistence_check expects CarvedPage objects")
        if (
            page.confidence == CONFIRMED
            and page.kind.is_data
            and page.kind.subtype == SUBTYPE_METADATA
        ):
            records.extend(
                split_records(inflate_payload(page.as_data_page(index)), index)
            )
    return records


def persistence_check(live: ParsedStore, carved_pages, names) -> list[PersistenceRow]:
    """Classify each name: still in the live store, carved only, or gone.

    This is the headline forensic question - does a record for this name
    survive anywhere?  Output is stable-sorted by name.
    """
    live_bodies = [r.body for r in _store_records(live)]
    carved_bodies = [r.body for r in _carved_record_bodies(carved_pages)]
    rows: list[PersistenceRow] = []
    for name in sorted(set(names)):
        needle = name.encode("utf-8")
        if any(needle in body for body in live_bodies):
            verdict = "LiveRecord"
        elif any(needle in body for body in carved_bodies):
            verdict = "CarvedOnly"
        else:
            verdict = "NotFound"
        rows.append(PersistenceRow(name, verdict))
    return rows


def persistence_csv(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["name", "verdict"])
    for row in rows:
        writer.writerow([row.name, row.verdict])
    return out.getvalue()
