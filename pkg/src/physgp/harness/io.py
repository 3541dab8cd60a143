"""CSV input and output for tagged datasets and multi-output series."""

from __future__ import annotations

import csv
import math

import numpy as np

from ..jgp import REAL, SIMULATED, TaggedDataset
from ..lfm import MultiOutputSeries

TARGET = "target"
SOURCE = "source"


class DataFormatError(ValueError):
    """A data file could not be parsed; ``lines`` lists offending line numbers."""

    def __init__(self, message, lines=()):
        self.lines = list(lines)
        if self.lines:
            message = f"{message} (line{'s' if len(self.lines) > 1 else ''} " \
                      f"{', '.join(map(str, self.lines))})"
        super().__init__(message)


def _float(text):
    try:
        return float(text)
    except ValueError:
        return math.nan


def _read(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path} is empty") from None
        body = [(reader.line_num, row) for row in reader if any(c.strip() for c in row)]
    return header, body


def load_tagged_csv(path) -> TaggedDataset:
    """Read a CSV with feature columns, a ``target`` column and a ``source``
    column holding ``real`` or ``sim``.

    Every column other than ``target`` and ``source`` is a feature, in
    header order; the names are kept on the returned object as
    ``feature_names``. Rows with non-finite or unparseable numbers are
    rejected with their line numbers.
    """
    header, body = _read(path)
    missing = [c for c in (TARGET, SOURCE) if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing column(s) {missing}")
    features = [i for i, h in enumerate(header) if h not in (TARGET, SOURCE)]
    if not features:
        raise DataFormatError(f"{path}: no feature columns")
    ti, si = header.index(TARGET), header.index(SOURCE)

    X, y, tags = [], [], []
    bad_numbers, bad_tags, ragged = [], [], []
    for line, row in body:
        if len(row) != len(header):
            ragged.append(line)
            continue
        vals = [_float(row[i]) for i in features] + [_float(row[ti])]
        if not all(math.isfinite(v) for v in vals):
            bad_numbers.append(line)
        tag = row[si].strip().lower()
        if tag not in (REAL, SIMULATED):
            bad_tags.append(line)
        X.append(vals[:-1])
        y.append(vals[-1])
        tags.append(tag == REAL)
    if ragged:
        raise DataFormatError(f"{path}: wrong number of fields", ragged)
    if bad_tags:
        raise DataFormatError(f"{path}: unknown source tag (expected 'real' or 'sim')",
                              bad_tags)
    if bad_numbers:
        raise DataFormatError(f"{path}: non-finite or unparseable value", bad_numbers)
    if not X:
        raise DataFormatError(f"{path}: no data rows")
    try:
        data = TaggedDataset(np.array(X), np.array(y), np.array(tags))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    object.__setattr__(data, "feature_names", [header[i] for i in features])
    return data


def write_tagged_csv(path, data: TaggedDataset, feature_names=None):
    """Write ``data`` in the format read by :func:`load_tagged_csv`.

    Numbers are written with ``repr`` so a round trip is exact.
    """
    d = data.inputs.shape[1]
    names = feature_names or getattr(data, "feature_names", None) or [f"x{i}" for i in range(d)]
    if len(names) != d:
        raise ValueError(f"{len(names)} feature names for {d} columns")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + [TARGET, SOURCE])
        for x, t, r in zip(data.inputs, data.targets, data.is_real):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t)), REAL if r else SIMULATED])


def load_series_csv(path) -> MultiOutputSeries:
    """Read multi-output series in long format: columns ``output,time,value``.

    Outputs appear in order of first occurrence; rows within an output are
    sorted by time.
    """
    header, body = _read(path)
    need = ["output", "time", "value"]
    if any(c not in header for c in need):
        raise DataFormatError(f"{path}: expected columns {need}, got {header}")
    oi, ti, vi = (header.index(c) for c in need)
    order, times, values, bad = [], {}, {}, []
    for line, row in body:
        if len(row) != len(header):
            bad.append(line)
            continue
        name = row[oi].strip()
        t, v = _float(row[ti]), _float(row[vi])
        if not (name and math.isfinite(t) and math.isfinite(v)):
            bad.append(line)
            continue
        if name not in times:
            order.append(name)
            times[name], values[name] = [], []
        times[name].append(t)
        values[name].append(v)
    if bad:
        raise DataFormatError(f"{path}: malformed or non-finite row", bad)
    if not order:
        raise DataFormatError(f"{path}: no data rows")
    ts, vs = [], []
    for name in order:
        t = np.array(times[name])
        idx = np.argsort(t, kind="stable")
        ts.append(t[idx])
        vs.append(np.array(values[name])[idx])
    try:
        return MultiOutputSeries(ts, vs, names=order)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_series_csv(path, series: MultiOutputSeries):
    names = series.names or [f"y{q}" for q in range(series.Q)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["output", "time", "value"])
        for name, t, v in zip(names, series.times, series.values):
            for a, b in zip(t, v):
                w.writerow([name, repr(float(a)), repr(float(b))])


def load_matrix_csv(path):
    """Plain numeric CSV with a header; returns ``(names, array)``."""
    header, body = _read(path)
    rows, bad = [], []
    for line, row in body:
        vals = [_float(c) for c in row]
        if len(vals) != len(header) or not all(math.isfinite(v) for v in vals):
            bad.append(line)
        rows.append(vals)
    if bad:
        raise DataFormatError(f"{path}: malformed or non-finite row", bad)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))
