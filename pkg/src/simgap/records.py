"""On-disk formats: versioned JSONL record streams, JSON result files, CSV histograms."""

from __future__ import annotations

import csv
import json
import os
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

SCHEMA = "simgap"
VERSION = 1
TIMESTAMP_KEY = "created"
FOOTER_TAG = "cutoff|certified"


class RecordError(ValueError):
    """A record or result file is missing, corrupt or of the wrong kind."""


def timestamp() -> str:
    """UTC time of writing; honours SOURCE_DATE_EPOCH for reproducible builds."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def header(kind: str, **meta: Any) -> Dict[str, Any]:
    return {"schema": SCHEMA, "version": VERSION, "kind": kind, **meta}


class RecordWriter:
    """Append-only JSONL stream with a leading header line."""

    def __init__(self, path, kind: str, append: bool = False, **meta: Any) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if append and self.path.exists():
            self._fh = self.path.open("a")
        else:
            self._fh = self.path.open("w")
            self._fh.write(_dumps(header(kind, **meta)) + "\n")
            self._fh.flush()

    def write(self, record: Dict[str, Any]) -> None:
        self._fh.write(_dumps(record) + "\n")

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_records(path, kind: str, records: Iterable[Dict[str, Any]], **meta: Any) -> None:
    with RecordWriter(path, kind, **meta) as w:
        for rec in records:
            w.write(rec)


def read_records(path, kind: Optional[str] = None) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Return (header, records).  A torn final line, as left by a crash, is dropped."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise RecordError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise RecordError(f"{path} is empty")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path}: bad header line") from exc
    _check_header(head, kind, path)
    out = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines):
                break
            raise RecordError(f"{path}:{i}: corrupt record") from None
    return head, out


def _check_header(head: Any, kind: Optional[str], path) -> None:
    if not isinstance(head, dict) or head.get("schema") != SCHEMA:
        raise RecordError(f"{path} is not a {SCHEMA} file")
    if head.get("version") != VERSION:
        raise RecordError(f"{path}: unsupported schema version {head.get('version')}")
    if kind is not None and head.get("kind") != kind:
        raise RecordError(f"{path} holds {head.get('kind')!r}, expected {kind!r}")


def write_result(path, kind: str, payload: Dict[str, Any], config_hash: str, master_seed: int) -> None:
    doc = header(kind, config_hash=config_hash, master_seed=int(master_seed))
    doc[TIMESTAMP_KEY] = timestamp()
    doc["result"] = payload
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
    tmp.replace(path)


def read_result(path, kind: Optional[str] = None) -> Dict[str, Any]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise RecordError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path} is not valid JSON: {exc}") from exc
    _check_header(doc, kind, path)
    if not isinstance(doc.get("result"), dict):
        raise RecordError(f"{path} has no result payload")
    return doc


def write_histogram(path, values: Sequence[float], bins: int, cutoff: float, certified: float) -> None:
    """CSV rows (bin_left, bin_right, count), then one footer row with the cutoff and certified value."""
    vals = np.asarray(values, dtype=float)
    lo = min(float(vals.min()), cutoff, certified)
    hi = max(float(vals.max()), cutoff, certified)
    if hi == lo:
        hi = lo + 1.0
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for left, right, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(left)), repr(float(right)), int(c)])
        w.writerow([FOOTER_TAG, repr(float(cutoff)), repr(float(certified))])


def read_histogram(path) -> Tuple[List[Tuple[float, float, int]], float, float]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != ["bin_left", "bin_right", "count"] or rows[-1][0] != FOOTER_TAG:
        raise RecordError(f"{path} is not a histogram file")
    data = [(float(a), float(b), int(c)) for a, b, c in rows[1:-1]]
    return data, float(rows[-1][1]), float(rows[-1][2])
