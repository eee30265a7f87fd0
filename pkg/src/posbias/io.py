"""Reading and writing logs, fits and tables.

Impression logs are JSON Lines with one record per line and the fields
``session_id, iteration, segment, items, examined, clicked`` in that order.
Tabular outputs are CSV; floats are written with ``repr`` so a value
round-trips exactly and identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .domain import InteractionLog
from .errors import DomainError, LogFormatError

RECORD_FIELDS = ("session_id", "iteration", "segment", "items", "examined", "clicked")


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    return "" if value is None else str(value)


def write_log_jsonl(log: InteractionLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in range(len(log)):
            rec = {
                "session_id": int(log.session_id[row]),
                "iteration": int(log.iteration),
                "segment": int(log.segment[row]),
                "items": log.items[row].tolist(),
                "examined": log.examined[row].tolist(),
                "clicked": log.clicked[row].tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def _parse_record(text: str, line: int):
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"invalid JSON ({exc.msg})", line) from None
    if not isinstance(rec, dict):
        raise LogFormatError("record must be a JSON object", line)
    if tuple(rec) != RECORD_FIELDS:
        raise LogFormatError(f"fields must be {list(RECORD_FIELDS)} in order, got {list(rec)}", line)
    for key in ("session_id", "iteration", "segment"):
        if isinstance(rec[key], bool) or not isinstance(rec[key], int) or rec[key] < 0:
            raise LogFormatError(f"{key} must be a nonnegative integer", line)
    items, examined, clicked = rec["items"], rec["examined"], rec["clicked"]
    if not (isinstance(items, list) and isinstance(examined, list) and isinstance(clicked, list)):
        raise LogFormatError("items, examined and clicked must be lists", line)
    if not items or not len(items) == len(examined) == len(clicked):
        raise LogFormatError("items, examined and clicked must be nonempty and equally long", line)
    if any(isinstance(i, bool) or not isinstance(i, int) or i < 0 for i in items):
        raise LogFormatError("items must be nonnegative integers", line)
    if len(set(items)) != len(items):
        raise LogFormatError("items in a slate must be distinct", line)
    if any(not isinstance(v, bool) for v in examined + clicked):
        raise LogFormatError("examined and clicked must be booleans", line)
    if any(c and not e for c, e in zip(clicked, examined)):
        raise LogFormatError("a clicked slot must be examined", line)
    return rec


def read_log_jsonl(path) -> InteractionLog:
    """Parse a JSONL impression log; raises :class:`LogFormatError` with the line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            rec = _parse_record(text, line)
            if rows:
                first = rows[0][1]
                if rec["iteration"] != first["iteration"]:
                    raise LogFormatError("all records must share one iteration index", line)
                if len(rec["items"]) != len(first["items"]):
                    raise LogFormatError("all slates must share one length", line)
            rows.append((line, rec))
    if not rows:
        raise LogFormatError("log file contains no records")
    recs = [r for _, r in rows]
    try:
        return InteractionLog(
            session_id=[r["session_id"] for r in recs],
            segment=[r["segment"] for r in recs],
            items=[r["items"] for r in recs],
            examined=[r["examined"] for r in recs],
            clicked=[r["clicked"] for r in recs],
            iteration=recs[0]["iteration"],
        )
    except DomainError as exc:
        raise LogFormatError(str(exc)) from None


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, data) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_json_atomic(path, data) -> None:
    """Write JSON through a temporary file and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(data, fh, indent=2, allow_nan=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
