"""Run records and plot-ready table emission.

A :class:`RunRecord` is an append-only list of long-format rows
``(config_hash, experiment, seed, iteration, <labels>, metric, value)``.
Labels are free-form columns such as ``method`` or ``p``; a row is
identified by the config hash, seed, iteration, labels and metric, and
adding the same identity twice is an error.

Each row also carries the wall-clock seconds spent producing it (time
since the previous row of the same task). CSV output never contains these
times, so reruns are byte-identical; their total goes to the JSON summary.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

FIXED_HEAD = ("config_hash", "experiment", "seed", "iteration")
FIXED_TAIL = ("metric", "value")


def fmt(v, digits=None) -> str:
    """Deterministic text for a CSV cell.

    Floats use ``repr`` (exact round trip) or ``digits`` significant digits.
    """
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, f".{digits}g") if digits else repr(v)
    return str(v)


@dataclass
class RunRecord:
    config_hash: str
    experiment: str
    rows: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    _labels: list = field(default_factory=list, repr=False)
    _keys: set = field(default_factory=set, repr=False)

    def add(self, seed, iteration, metric, value, wall_clock=float("nan"), **labels):
        key = (int(seed), int(iteration), tuple(sorted((k, fmt(v)) for k, v in labels.items())),
               str(metric))
        if key in self._keys:
            raise ValueError(f"duplicate record row {key}")
        self._keys.add(key)
        for k in labels:
            if k in FIXED_HEAD or k in FIXED_TAIL:
                raise ValueError(f"label name {k!r} is reserved")
            if k not in self._labels:
                self._labels.append(k)
        self.rows.append({"seed": int(seed), "iteration": int(iteration), "metric": str(metric),
                          "value": float(value), **labels})
        self.wall_clock.append(float(wall_clock))

    def __len__(self):
        return len(self.rows)

    @property
    def label_names(self):
        return list(self._labels)

    @property
    def columns(self):
        return list(FIXED_HEAD) + self.label_names + list(FIXED_TAIL)

    def select(self, metric=None, **labels):
        """Rows matching ``metric`` and every given label value."""
        out = []
        for r in self.rows:
            if metric is not None and r["metric"] != metric:
                continue
            if all(r.get(k) == v for k, v in labels.items()):
                out.append(r)
        return out

    def values(self, metric=None, **labels):
        return np.array([r["value"] for r in self.select(metric, **labels)], float)


def _quantiles(v, qs):
    """Linear-interpolation quantiles that keep infinities.

    ``np.percentile`` interpolates ``inf - inf`` into NaN; here a quantile
    that falls between a finite and an infinite value takes the infinite one.
    """
    x = np.sort(np.asarray(v, float))
    out = []
    for q in qs:
        pos = q * (x.size - 1)
        i = int(np.floor(pos))
        f = pos - i
        lo = x[i]
        hi = x[min(i + 1, x.size - 1)]
        if f == 0 or lo == hi:
            out.append(float(lo))
        elif np.isinf(lo) or np.isinf(hi):
            out.append(float(hi) if np.isinf(hi) and not np.isinf(lo) else
                       float(lo) if not np.isinf(hi) else math.nan)
        else:
            out.append(float(lo + f * (hi - lo)))
    return out


def summarize(record: RunRecord):
    """Aggregate values over seeds for each (labels, metric) group.

    Returns a list of dicts with the label values, ``metric``, ``count``,
    ``median``, ``q25``, ``q75``, ``mean`` and ``min``/``max``. Groups
    appear in order of first occurrence. NaNs are excluded from the
    statistics but counted in ``n_nan``; infinities are kept (a median of
    censored counts can be inf).
    """
    groups, order = {}, []
    for r in record.rows:
        key = tuple(fmt(r.get(k)) for k in record.label_names) + (r["metric"],)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r["value"])
    out = []
    for key in order:
        v = np.array(groups[key], float)
        ok = v[~np.isnan(v)]
        stats = dict(zip(record.label_names, key[:-1]))
        stats["metric"] = key[-1]
        stats["count"] = int(ok.size)
        stats["n_nan"] = int(v.size - ok.size)
        if ok.size:
            q25, med, q75 = _quantiles(ok, (0.25, 0.5, 0.75))
            with np.errstate(invalid="ignore"):
                mean = float(np.mean(ok))
            stats.update(median=float(med), q25=float(q25), q75=float(q75), mean=mean,
                         min=float(ok.min()), max=float(ok.max()))
        else:
            stats.update(median=math.nan, q25=math.nan, q75=math.nan, mean=math.nan,
                         min=math.nan, max=math.nan)
        out.append(stats)
    return out


SUMMARY_STATS = ("count", "n_nan", "median", "q25", "q75", "mean", "min", "max")


def write_csv(path, header, rows, digits=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v, digits) for v in row])


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else fmt(v)
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_tables(record: RunRecord, out_dir, stem=None, digits=4):
    """Write ``<stem>_rows.csv``, ``<stem>_summary.csv`` and ``<stem>_summary.json``.

    The rows file holds every record row at full precision. The summary
    CSV aggregates over seeds (see :func:`summarize`) with ``digits``
    significant digits. The JSON file carries the config hash, the seeds,
    the summary and the total wall-clock time. Returns the three paths.
    """
    stem = stem or record.experiment
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{stem}_{k}") for k in
             ("rows.csv", "summary.csv", "summary.json")}

    write_csv(paths["rows.csv"], record.columns,
              [_row_values(record, r) for r in record.rows])
    summary = summarize(record)
    header = record.label_names + ["metric"] + list(SUMMARY_STATS)
    write_csv(paths["summary.csv"], header,
              [[s[h] for h in header] for s in summary], digits=digits)
    clock = np.array(record.wall_clock, float)
    clock = clock[np.isfinite(clock)]
    write_json(paths["summary.json"], {
        "config_hash": record.config_hash,
        "experiment": record.experiment,
        "n_rows": len(record),
        "seeds": sorted({r["seed"] for r in record.rows}),
        "metrics": sorted({r["metric"] for r in record.rows}),
        "columns": record.columns,
        "summary": summary,
        "wall_clock_seconds": float(clock.sum()) if clock.size else 0.0,
    })
    return paths


def _row_values(record, row):
    base = {"config_hash": record.config_hash, "experiment": record.experiment, **row}
    return [base.get(c) for c in record.columns]
