"""Line-oriented dataset files and the world-truth sidecar.

A dataset file is UTF-8 text::

    #freshctr-impressions<TAB>v1<TAB>columns=timestamp,item,publisher,user_segment,hour_of_day,click[,soft_target]
    <timestamp><TAB><item><TAB><publisher><TAB><user_segment><TAB><hour_of_day><TAB><click>[<TAB><soft_target>]
    ...
    #sha256<TAB><hex digest of every preceding byte>

Timestamps are integer seconds and must be non-decreasing; clicks are 0/1;
the optional soft target has exactly 9 decimals. Feature columns follow the
header order, so datasets with other field sets use the same format.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .records import Dataset, Impression

MAGIC = "#freshctr-impressions"
VERSION = "v1"
TRAILER = "#sha256"


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def header_line(fields: Sequence[str], with_soft_targets: bool) -> str:
    cols = ["timestamp", *fields, "click"] + (["soft_target"] if with_soft_targets else [])
    return f"{MAGIC}\t{VERSION}\tcolumns={','.join(cols)}\n"


def _check_value(v: str, field_name: str) -> str:
    if not v or "\t" in v or "\n" in v or "\r" in v or v.startswith("#"):
        raise ValueError(f"value {v!r} for field {field_name!r} cannot be stored in a dataset file")
    return v


class DatasetWriter:
    """Streaming writer; records must arrive in timestamp order."""

    def __init__(self, path, fields: Sequence[str], with_soft_targets: bool = False):
        self.path = Path(path)
        self.fields = tuple(fields)
        self.with_soft = with_soft_targets
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self._hash = hashlib.sha256()
        self._last_ts = None
        self.count = 0
        self._emit(header_line(self.fields, with_soft_targets))

    def _emit(self, text: str):
        self._hash.update(text.encode("utf-8"))
        self._fh.write(text)

    def write(self, imp: Impression):
        if self._last_ts is not None and imp.timestamp < self._last_ts:
            raise ValueError("records must be written in non-decreasing timestamp order")
        self._last_ts = imp.timestamp
        parts = [str(int(imp.timestamp))]
        parts += [_check_value(imp.features[f], f) for f in self.fields]
        parts.append(str(int(imp.click)))
        if self.with_soft:
            if imp.soft_target is None:
                raise ValueError("soft target missing on a dataset declared with soft targets")
            parts.append(f"{imp.soft_target:.9f}")
        self._emit("\t".join(parts) + "\n")
        self.count += 1

    def close(self):
        if self._fh.closed:
            return
        self._fh.write(f"{TRAILER}\t{self._hash.hexdigest()}\n")
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_dataset(path, data: Dataset) -> Path:
    path = Path(path)
    with_soft = data.soft_targets is not None
    for f in data.fields:
        for v in data.categories[f]:
            _check_value(v, f)
    cols = [data.timestamps.astype(str).astype(object)]
    cols += [data.values(f) for f in data.fields]
    cols.append(data.clicks.astype(str).astype(object))
    if with_soft:
        cols.append(np.array([f"{x:.9f}" for x in data.soft_targets], dtype=object))
    h = hashlib.sha256()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        text = header_line(data.fields, with_soft)
        h.update(text.encode("utf-8"))
        fh.write(text)
        chunk = 50_000
        for lo in range(0, len(data), chunk):
            rows = zip(*(c[lo:lo + chunk] for c in cols))
            text = "".join("\t".join(r) + "\n" for r in rows)
            h.update(text.encode("utf-8"))
            fh.write(text)
        fh.write(f"{TRAILER}\t{h.hexdigest()}\n")
    return path


def _parse_header(line: str) -> tuple[tuple[str, ...], bool]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3 or parts[0] != MAGIC:
        raise DatasetFormatError("missing or malformed dataset header", 1)
    if parts[1] != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {parts[1]!r}", 1)
    if not parts[2].startswith("columns="):
        raise DatasetFormatError("header lacks a columns= declaration", 1)
    cols = parts[2][len("columns="):].split(",")
    with_soft = cols[-1] == "soft_target"
    if with_soft:
        cols = cols[:-1]
    if len(cols) < 3 or cols[0] != "timestamp" or cols[-1] != "click":
        raise DatasetFormatError(f"unexpected column layout {parts[2]!r}", 1)
    return tuple(cols[1:-1]), with_soft


def _read_header(path) -> tuple[tuple[str, ...], bool]:
    with open(path, encoding="utf-8", newline="\n") as fh:
        return _parse_header(fh.readline())


def iter_records(path) -> Iterator[tuple[int, list[str], int, float | None]]:
    """Stream ``(timestamp, values, click, soft_target)`` tuples, validating as it goes.

    The checksum is verified when the trailer is reached, so a corrupted
    file raises only after its records were yielded.
    """
    h = hashlib.sha256()
    with open(path, encoding="utf-8", newline="\n") as fh:
        first = fh.readline()
        fields, with_soft = _parse_header(first)
        h.update(first.encode("utf-8"))
        n_cols = len(fields) + 2 + with_soft
        last_ts = None
        lineno = 1
        for line in fh:
            lineno += 1
            if line.startswith(TRAILER):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or parts[1] != h.hexdigest():
                    raise DatasetFormatError("checksum mismatch", lineno)
                if fh.readline():
                    raise DatasetFormatError("data after checksum trailer", lineno + 1)
                return
            if not line.endswith("\n"):
                raise DatasetFormatError("truncated record (no line terminator)", lineno)
            h.update(line.encode("utf-8"))
            parts = line[:-1].split("\t")
            if len(parts) != n_cols:
                raise DatasetFormatError(f"expected {n_cols} columns, found {len(parts)}", lineno)
            try:
                ts = int(parts[0])
            except ValueError:
                raise DatasetFormatError(f"timestamp {parts[0]!r} is not an integer", lineno) from None
            if last_ts is not None and ts < last_ts:
                raise DatasetFormatError(f"timestamp {ts} goes backwards (previous {last_ts})", lineno)
            last_ts = ts
            click_s = parts[1 + len(fields)]
            if click_s not in ("0", "1"):
                raise DatasetFormatError(f"click must be 0 or 1, got {click_s!r}", lineno)
            values = parts[1:1 + len(fields)]
            if any(not v for v in values):
                raise DatasetFormatError("empty feature value", lineno)
            soft = None
            if with_soft:
                try:
                    soft = float(parts[-1])
                except ValueError:
                    raise DatasetFormatError(f"soft target {parts[-1]!r} is not a number", lineno) from None
                if not 0.0 <= soft <= 1.0:
                    raise DatasetFormatError(f"soft target {soft} outside [0, 1]", lineno)
            yield ts, values, int(click_s), soft
    raise DatasetFormatError("missing checksum trailer (file truncated?)")


def iter_dataset(path) -> Iterator[Impression]:
    fields, _ = _read_header(path)
    for ts, values, click, soft in iter_records(path):
        yield Impression(ts, dict(zip(fields, values)), click, soft)


def read_dataset(path) -> Dataset:
    fields, with_soft = _read_header(path)
    lookup = {f: {} for f in fields}
    codes = {f: [] for f in fields}
    ts_col, click_col, soft_col = [], [], []
    for ts, values, click, soft in iter_records(path):
        ts_col.append(ts)
        click_col.append(click)
        for f, v in zip(fields, values):
            table = lookup[f]
            codes[f].append(table.setdefault(v, len(table)))
        if with_soft:
            soft_col.append(soft)
    return Dataset(
        timestamps=np.array(ts_col, dtype=np.int64),
        codes={f: np.array(codes[f], dtype=np.int32) for f in fields},
        categories={f: tuple(lookup[f]) for f in fields},
        clicks=np.array(click_col, dtype=np.int8),
        soft_targets=np.array(soft_col, dtype=np.float64) if with_soft else None,
        fields=fields,
    )


def write_truth(path, truth) -> Path:
    path = Path(path)
    path.write_text(json.dumps(truth.to_dict(), sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
    return path


def read_truth(path):
    from .datagen import WorldTruth

    return WorldTruth.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
