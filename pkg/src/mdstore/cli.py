"""Command-line interface.

One executable for the whole pipeline: inspect stores, dump records and
name tables, search, carve images, diff store pairs, and generate or
simulate synthetic fixtures.

Forensic conventions: inputs are opened read-only and never written to;
all diagnostics go to stderr and data to stdout; reports embed the tool
version, input digests and parameters; identical inputs and flags produce
byte-identical JSON output (nothing time-dependent is emitted).

Exit codes: 0 success, 1 usage error, 2 input unparseable, 3 partial
success with warnings.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import count_records, diff_csv, diff_stores
from .carve import carve_report, scan_image
from .errors import SpecError, StoreError, UsageError
from .format import SUBTYPE_ATTRIBUTES, SUBTYPE_METADATA, SUBTYPE_UTIS
from .parse import parse_store
from .records import (
    attribute_table_csv,
    extract_fields,
    parse_attribute_page,
    parse_uti_page,
    record_json_lines,
    search_records,
    uti_table_csv,
    walk_store,
)
from .synth import (
    StoreModel,
    apply_event,
    build_store,
    emit_store_pair,
    events_from_list,
    export_unallocated,
    spec_from_dict,
)

FORMATS = ("json", "csv", "table")
FORMAT_ENV = "MDSTORE_FORMAT"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNPARSEABLE = 2
EXIT_WARNINGS = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_format() -> str:
    env = os.environ.get(FORMAT_ENV, "")
    if env in FORMATS:
        return env
    return "table" if sys.stdout.isatty() else "json"


def _md5(data: bytes) -> str:
    return hashlib.md5(data).hexdigest()


def _read_input(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    return Path(path).read_bytes()


def _check_writable(out_path: str | None, inputs) -> None:
    if not out_path:
        return
    resolved = Path(out_path).resolve()
    for p in inputs:
        if p != "-" and Path(p).resolve() == resolved:
            raise UsageError(f"refusing to write to input path {p!r}")


def _envelope(command: str, parameters: dict, inputs: dict) -> dict:
    return {
        "tool": "mdstore",
        "version": __version__,
        "command": command,
        "parameters": parameters,
        "inputs": [{"path": p, "md5": d} for p, d in sorted(inputs.items())],
    }


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        if text and not text.endswith("\n"):
            sys.stdout.write("\n")


def _custody_comment(meta: dict) -> str:
    inputs = ",".join(f"{i['path']}:{i['md5']}" for i in meta["inputs"])
    params = json.dumps(meta["parameters"], sort_keys=True)
    return (
        f"# mdstore {meta['version']} {meta['command']}\n"
        f"# inputs: {inputs}\n"
        f"# parameters: {params}\n"
    )


def _render(meta: dict, data, fmt: str, csv_text: str | None, table_lines) -> str:
    if fmt == "json":
        return json.dumps({**meta, "data": data}, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        if csv_text is None:
            raise UsageError(f"{meta['command']} has no CSV form")
        return _custody_comment(meta) + csv_text
    header = [
        f"mdstore {meta['version']} - {meta['command']}",
        "inputs: " + "; ".join(f"{i['path']} (md5 {i['md5']})" for i in meta["inputs"]),
        "",
    ]
    return "\n".join(header + list(table_lines)) + "\n"


def _warn(diagnostics) -> None:
    for diag in diagnostics:
        print(f"warning: {diag}", file=sys.stderr)


# -- subcommands --------------------------------------------------------------


def _cmd_inspect(args) -> int:
    data = _read_input(args.store)
    parsed = parse_store(data)
    meta = _envelope("inspect", {"format": args.format}, {args.store: _md5(data)})
    pages = [
        {
            "page_number": p.page_number,
            "offset": p.offset,
            "subtype": p.subtype,
            "physical_size": p.header.physical_size,
            "allocated_size": p.header.allocated_size,
            "size2": p.header.size2,
            "truncated": p.truncated,
        }
        for p in parsed.pages
    ]
    payload = {
        "header": {
            "header_page_size": parsed.header.header_page_size,
            "volume_path": parsed.header.volume_path,
        },
        "map": None
        if parsed.map is None
        else {
            "page_size": parsed.map.page_size,
            "page_count": parsed.map.page_count,
            "page_type": parsed.map.page_type,
            "entry_count": len(parsed.map.entries),
        },
        "total_page_count": parsed.total_page_count,
        "subtype_histogram": {str(k): v for k, v in sorted(parsed.subtype_histogram().items())},
        "pages": pages,
        "warnings": [f"{w}" for w in parsed.warnings],
    }
    table = [
        f"header: size={parsed.header.header_page_size} path={parsed.header.volume_path}",
        "map: "
        + (
            "absent"
            if parsed.map is None
            else f"page_size={parsed.map.page_size} pages={parsed.map.page_count}"
        ),
        f"total pages: {parsed.total_page_count}",
        "",
        "page  offset    subtype  physical  allocated",
    ] + [
        f"{p['page_number']:>4}  {p['offset']:>8}  {p['subtype']:>7}  "
        f"{p['physical_size']:>8}  {p['allocated_size']:>9}"
        for p in pages
    ]
    _emit(_render(meta, payload, args.format, None, table), args.output)
    _warn(parsed.warnings)
    return EXIT_WARNINGS if parsed.warnings else EXIT_OK


def _cmd_records(args) -> int:
    data = _read_input(args.store)
    parsed = parse_store(data)
    records, problems = walk_store(parsed)
    meta = _envelope("records", {"format": args.format}, {args.store: _md5(data)})
    if args.format == "json":
        lines = [json.dumps({**meta, "record_count": len(records)}, sort_keys=True)]
        lines.extend(record_json_lines(records))
        _emit("\n".join(lines) + "\n", args.output)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["page", "slot", "declared_size", "digest", "first_string"])
        table = ["page  slot  size     digest"]
        for r in records:
            fields = extract_fields(r)
            first = fields.strings[0] if fields.strings else ""
            writer.writerow([r.page_index, r.slot_index, r.declared_size, r.digest, first])
            table.append(
                f"{r.page_index:>4}  {r.slot_index:>4}  {r.declared_size:>7}  {r.digest}  {first}"
            )
        table.append(f"total records: {len(records)}")
        _emit(_render(meta, None, args.format, buf.getvalue(), table), args.output)
    _warn(parsed.warnings)
    _warn(problems)
    return EXIT_WARNINGS if (parsed.warnings or problems) else EXIT_OK


def _table_cmd(args, subtype: int, parse_page, to_csv, label: str) -> int:
    data = _read_input(args.store)
    parsed = parse_store(data)
    warnings = []
    entries = []
    for page in parsed.data_pages(subtype):
        entries.extend(parse_page(page, warnings))
    meta = _envelope(label, {"format": args.format}, {args.store: _md5(data)})
    csv_text = to_csv(entries)
    if args.format == "json":
        rows = []
        for e in entries:
            row = dict(e.__dict__)
            if isinstance(row.get("flags"), bytes):
                row["flags"] = row["flags"].hex()
            rows.append(row)
        _emit(_render(meta, rows, "json", None, None), args.output)
    else:
        _emit(_render(meta, None, args.format, csv_text, csv_text.splitlines()), args.output)
    _warn(parsed.warnings)
    _warn(warnings)
    return EXIT_WARNINGS if (parsed.warnings or warnings) else EXIT_OK


def _cmd_attrs(args) -> int:
    return _table_cmd(args, SUBTYPE_ATTRIBUTES, parse_attribute_page, attribute_table_csv, "attrs")


def _cmd_utis(args) -> int:
    return _table_cmd(args, SUBTYPE_UTIS, parse_uti_page, uti_table_csv, "utis")


def _cmd_search(args) -> int:
    data = _read_input(args.store)
    parsed = parse_store(data)
    records, problems = walk_store(parsed)
    hits = search_records(records, args.keyword)
    meta = _envelope(
        "search",
        {"format": args.format, "keywords": list(args.keyword)},
        {args.store: _md5(data)},
    )
    payload = [
        {
            "page": h.page_index,
            "slot": h.slot_index,
            "keyword": h.keyword,
            "byte_offset": h.byte_offset,
        }
        for h in hits
    ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["page", "slot", "keyword", "byte_offset"])
    for h in hits:
        writer.writerow([h.page_index, h.slot_index, h.keyword, h.byte_offset])
    table = [f"{len(hits)} hit(s)"] + [
        f"page {h.page_index} slot {h.slot_index} offset {h.byte_offset}: {h.keyword}"
        for h in hits
    ]
    _emit(_render(meta, payload, args.format, buf.getvalue(), table), args.output)
    _warn(parsed.warnings)
    _warn(problems)
    return EXIT_WARNINGS if (parsed.warnings or problems) else EXIT_OK


class _HashingReader:
    """Wraps a stream, hashing everything read so the report can embed the
    input digest without a second pass."""

    def __init__(self, stream):
        self._stream = stream
        self._md5 = hashlib.md5()

    def read(self, n=-1):
        chunk = self._stream.read(n)
        if chunk:
            self._md5.update(chunk)
        return chunk

    def hexdigest(self) -> str:
        return self._md5.hexdigest()


def _cmd_carve(args) -> int:
    diagnostics = []
    parameters = {
        "sector_size": args.sector,
        "page_size": args.page_size,
        "byte_granular": args.byte_granular,
        "format": args.format,
    }
    raw = sys.stdin.buffer if args.image == "-" else open(args.image, "rb")
    stream = _HashingReader(raw)
    try:
        pages = list(
            scan_image(
                stream,
                sector_size=args.sector,
                page_size=args.page_size,
                byte_granular=args.byte_granular,
                diagnostics=diagnostics,
            )
        )
    finally:
        if raw is not sys.stdin.buffer:
            raw.close()
    digest = stream.hexdigest()
    report = carve_report(pages)
    if args.dump_pages:
        dump_dir = Path(args.dump_pages)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for page in pages:
            if page.confidence != "rejected":
                (dump_dir / f"page_{page.source_offset}.bin").write_bytes(page.data)
    meta = _envelope("carve", parameters, {args.image: digest})
    page_rows = [
        {
            "offset": p.source_offset,
            "family": p.kind.family.value,
            "subtype": p.kind.subtype,
            "confidence": p.confidence,
            "record_count": p.record_count,
            "note": p.note,
        }
        for p in pages
    ]
    payload = {
        "version": __version__,
        "parameters": parameters,
        "pages": page_rows,
        "totals": report.as_dict(),
        "diagnostics": [f"{d}" for d in diagnostics],
    }
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["offset", "family", "subtype", "confidence", "record_count"])
    for row in page_rows:
        writer.writerow(
            [row["offset"], row["family"], row["subtype"], row["confidence"], row["record_count"]]
        )
    table = [
        f"pages recovered:   {report.pages_recovered}",
        f"records recovered: {report.records_recovered}",
        f"header pages:      {report.header_pages}",
        f"map pages:         {report.map_pages}",
        "by subtype:        "
        + ", ".join(f"{k}={v}" for k, v in sorted(report.by_subtype.items())),
        "by confidence:     "
        + ", ".join(f"{k}={v}" for k, v in sorted(report.by_confidence.items())),
    ]
    _emit(_render(meta, payload, args.format, buf.getvalue(), table), args.output)
    _warn(diagnostics)
    return EXIT_WARNINGS if diagnostics else EXIT_OK


def _cmd_diff(args) -> int:
    data_a = _read_input(args.store_a)
    data_b = _read_input(args.store_b)
    parsed_a = parse_store(data_a)
    parsed_b = parse_store(data_b)
    report = diff_stores(parsed_a, parsed_b, key=args.key)
    meta = _envelope(
        "diff",
        {"format": args.format, "key": args.key},
        {args.store_a: _md5(data_a), args.store_b: _md5(data_b)},
    )
    payload = {
        "method": report.method,
        "added": [r.__dict__ for r in report.added],
        "removed": [r.__dict__ for r in report.removed],
        "unchanged_count": report.unchanged_count,
    }
    table = [
        f"method: {report.method}",
        f"added: {len(report.added)}  removed: {len(report.removed)}  "
        f"unchanged: {report.unchanged_count}",
    ] + [f"+ page {r.page_index} slot {r.slot_index} {r.first_string}" for r in report.added] + [
        f"- page {r.page_index} slot {r.slot_index} {r.first_string}" for r in report.removed
    ]
    _emit(_render(meta, payload, args.format, diff_csv(report), table), args.output)
    warnings = parsed_a.warnings + parsed_b.warnings
    _warn(warnings)
    return EXIT_WARNINGS if warnings else EXIT_OK


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from exc


def _cmd_gen(args) -> int:
    spec = spec_from_dict(_load_json(args.spec))
    store = build_store(spec)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_bytes(store)
    meta = _envelope(
        "gen", {"seed": spec.seed}, {args.spec: _md5(Path(args.spec).read_bytes())}
    )
    summary = {
        "output": args.output,
        "bytes": len(store),
        "md5": _md5(store),
        "files": len(spec.files),
        "folders": len(spec.folders),
    }
    _emit(_render(meta, summary, "json", None, None), None)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    spec = spec_from_dict(_load_json(args.spec))
    events = events_from_list(_load_json(args.events))
    model = StoreModel.from_spec(spec)
    for event in events:
        apply_event(model, event)
    dot_store, store = emit_store_pair(model, lag=args.lag)
    unallocated = export_unallocated(model)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / ".store.db").write_bytes(dot_store)
    (out_dir / "store.db").write_bytes(store)
    (out_dir / "unallocated.bin").write_bytes(unallocated)
    meta = _envelope(
        "simulate",
        {"seed": spec.seed, "lag": args.lag, "events": len(events)},
        {
            args.spec: _md5(Path(args.spec).read_bytes()),
            args.events: _md5(Path(args.events).read_bytes()),
        },
    )
    summary = {
        "output_dir": str(out_dir),
        "dot_store_md5": _md5(dot_store),
        "store_md5": _md5(store),
        "unallocated_md5": _md5(unallocated),
        "live_records": model.live_count(),
        "freed_pages": len(model.freed_pages),
    }
    manifest = json.dumps({**meta, "data": summary}, sort_keys=True, indent=2) + "\n"
    (out_dir / "manifest.json").write_text(manifest, encoding="utf-8")
    _emit(manifest, None)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def _add_common(sub, with_output=True):
    sub.add_argument("--format", choices=FORMATS, default=None, help="output format")
    if with_output:
        sub.add_argument("-o", "--output", default=None, help="write output to this path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdstore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mdstore {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("inspect", help="header/map/page summary of a store")
    p.add_argument("store")
    _add_common(p)
    p.set_defaults(func=_cmd_inspect, inputs=lambda a: [a.store])

    p = commands.add_parser("records", help="dump metadata records")
    p.add_argument("store")
    _add_common(p)
    p.set_defaults(func=_cmd_records, inputs=lambda a: [a.store])

    p = commands.add_parser("attrs", help="attribute-name table as CSV")
    p.add_argument("store")
    _add_common(p)
    p.set_defaults(func=_cmd_attrs, inputs=lambda a: [a.store])

    p = commands.add_parser("utis", help="UTI table as CSV")
    p.add_argument("store")
    _add_common(p)
    p.set_defaults(func=_cmd_utis, inputs=lambda a: [a.store])

    p = commands.add_parser("search", help="keyword search over record bodies")
    p.add_argument("store")
    p.add_argument("-k", "--keyword", action="append", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_search, inputs=lambda a: [a.store])

    p = commands.add_parser("carve", help="carve store pages from a raw image")
    p.add_argument("image", help="raw image path, or - for stdin")
    p.add_argument("--sector", type=int, default=512)
    p.add_argument("--page-size", type=int, default=16384)
    p.add_argument("--byte-granular", action="store_true")
    p.add_argument("--dump-pages", default=None, help="directory for page_<offset>.bin dumps")
    _add_common(p)
    p.set_defaults(func=_cmd_carve, inputs=lambda a: [a.image])

    p = commands.add_parser("diff", help="record-level diff of two stores")
    p.add_argument("store_a")
    p.add_argument("store_b")
    p.add_argument("--key", choices=("digest", "cnid"), default="digest")
    _add_common(p)
    p.set_defaults(func=_cmd_diff, inputs=lambda a: [a.store_a, a.store_b])

    p = commands.add_parser("gen", help="generate a synthetic store from a spec")
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gen, format="json", inputs=lambda a: [a.spec])

    p = commands.add_parser("simulate", help="replay events; emit store pair + unallocated blob")
    p.add_argument("spec")
    p.add_argument("--events", required=True)
    p.add_argument("--lag", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_simulate, inputs=lambda a: [a.spec, a.events])

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "format", None) is None:
            args.format = _default_format()
        _check_writable(getattr(args, "output", None), args.inputs(args))
        dump = getattr(args, "dump_pages", None)
        if dump:
            _check_writable(dump, args.inputs(args))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNPARSEABLE
    except (StoreError, SpecError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNPARSEABLE


def main() -> None:  # pragma: no cover - console entry point
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
