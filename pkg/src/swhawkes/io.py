"""Readers and writers for event files, count files and reports.

State labels are written 1-based.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .core import BinnedSeries, EventSequence
from .errors import InvalidRange, UnsortedEvents


def write_events(path, events: EventSequence) -> None:
    lines = [f"# horizon={events.horizon!r}"] + [repr(float(t)) for t in events.times]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_events(path) -> EventSequence:
    """Parse an event file: ``# horizon=<T>`` header, then one time per line."""
    horizon = None
    times = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("horizon="):
                horizon = float(body.split("=", 1)[1])
            continue
        try:
            times.append(float(line))
        except ValueError:
            raise InvalidRange(f"{path}:{lineno}: not a number: {line!r}") from None
    if horizon is None:
        raise InvalidRange(f"{path}: missing '# horizon=<T>' header")
    arr = np.asarray(times, dtype=np.float64)
    if arr.size > 1 and np.any(np.diff(arr) <= 0):
        bad = int(np.argmax(np.diff(arr) <= 0))
        raise UnsortedEvents(f"{path}: times not strictly increasing at entry {bad + 2}")
    return EventSequence(arr, horizon)


def read_counts(path, delta: float) -> BinnedSeries:
    """One nonnegative integer per line (blank lines and ``#`` comments skipped)."""
    counts = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            counts.append(int(line))
        except ValueError:
            raise InvalidRange(f"{path}:{lineno}: not an integer count: {line!r}") from None
    return BinnedSeries(np.asarray(counts, dtype=np.int64), delta)


def write_counts(path, y: BinnedSeries) -> None:
    text = f"# delta={y.delta!r}\n" + "\n".join(str(int(c)) for c in y.counts) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def tau_csv(tau) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"state_{q + 1}" for q in range(tau.shape[1])])
    for row in tau:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def paths_csv(z_map, z_vit) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "map_state", "viterbi_state"])
    for k, (a, b) in enumerate(zip(z_map, z_vit), start=1):
        w.writerow([k, int(a) + 1, int(b) + 1])
    return buf.getvalue()
