"""Reading area data from CSV/JSON and writing per-area results."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

from .exceptions import DatasetError
from .model import Dataset, validate_dataset


class InputError(DatasetError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


def _x_columns(header):
    xs = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    expected = [f"x{k}" for k in range(1, len(xs) + 1)]
    if sorted(xs, key=lambda h: int(h[1:])) != expected:
        raise InputError(f"covariate columns must be x1..xp, got {xs}", 1)
    return expected


def _float(value, name, line):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InputError(f"column {name!r} is not a number: {value!r}", line) from None


def _records_to_dataset(records, lines):
    if not records:
        raise InputError("no areas in input", 1)
    header = list(records[0])
    for col in ("area_id", "y", "d"):
        if col not in header:
            raise InputError(f"missing column {col!r}", 1)
    xcols = _x_columns(header)
    if not xcols:
        raise InputError("at least one covariate column x1 is required", 1)
    ids, X, y, d = [], [], [], []
    for rec, line in zip(records, lines):
        missing = [c for c in ("area_id", "y", "d", *xcols) if rec.get(c) in (None, "")]
        if missing:
            raise InputError(f"missing value(s) for {missing}", line)
        ids.append(rec["area_id"])
        y.append(_float(rec["y"], "y", line))
        d.append(_float(rec["d"], "d", line))
        X.append([_float(rec[c], c, line) for c in xcols])
    if len(set(ids)) != len(ids):
        raise InputError("area_id values must be unique")
    line_of = dict(zip(ids, lines))
    try:
        return validate_dataset(Dataset(tuple(ids), X, y, d))
    except DatasetError as exc:
        area = getattr(exc, "area_id", None)
        raise InputError(str(exc), line_of.get(area)) from exc


def read_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError("empty file", 1)
        records, lines = [], []
        for rec in reader:
            if None in rec:
                raise InputError("too many fields", reader.line_num)
            records.append(rec)
            lines.append(reader.line_num)
    if not records:
        raise InputError("no areas in input", 1)
    return _records_to_dataset(records, lines)


def read_json(path) -> Dataset:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if isinstance(raw, dict):
        raw = raw.get("areas")
    if not isinstance(raw, list) or not all(isinstance(r, dict) for r in raw):
        raise InputError("expected a list of area objects or {'areas': [...]}")
    # JSON records are numbered by position, counting the header as line 1
    records = [{k: ("" if v is None else v) for k, v in r.items()} for r in raw]
    return _records_to_dataset(records, range(2, len(records) + 2))


def read_areas(path) -> Dataset:
    """Dispatch on the file extension: ``.json`` or CSV otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_json(path)
    return read_csv(path)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def format_value(v) -> str:
    """Shortest round-trip text for floats."""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return "" if v is None else str(v)


def write_rows(path, rows: list[dict], columns: list[str]) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = [{c: r.get(c) for c in columns} for r in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([format_value(r.get(c)) for c in columns])
