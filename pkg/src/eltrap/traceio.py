"""Trace persistence: CSV with a ``#`` metadata header, and JSON."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .sequence import Trace

__all__ = ["trace_to_csv", "trace_to_json", "write_trace", "read_trace"]

_UNITS = {"zero_span_time": "s", "spectrum_vs_frequency": "Hz"}


def _num(v):
    return repr(float(v))


def trace_to_csv(trace: Trace) -> str:
    lines = [f"# kind = {trace.kind}", f"# x_unit = {_UNITS[trace.kind]}", "# y_unit = W"]
    for key in sorted(trace.metadata):
        lines.append(f"# {key} = {json.dumps(trace.metadata[key], sort_keys=True)}")
    lines.append("x,y")
    lines.extend(f"{_num(a)},{_num(b)}" for a, b in zip(trace.x, trace.y))
    return "\n".join(lines) + "\n"


def trace_to_json(trace: Trace) -> str:
    doc = {
        "kind": trace.kind,
        "x_unit": _UNITS[trace.kind],
        "y_unit": "W",
        "metadata": trace.metadata,
        "x": [float(v) for v in trace.x],
        "y": [float(v) for v in trace.y],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_trace(trace: Trace, stem, formats=("csv", "json")):
    """Write ``stem.csv`` and/or ``stem.json``; returns the paths written."""
    stem = Path(stem)
    out = []
    for fmt in formats:
        path = stem.with_name(stem.name + "." + fmt)
        text = trace_to_csv(trace) if fmt == "csv" else trace_to_json(trace)
        path.write_text(text)
        out.append(path)
    return out


def read_trace(path) -> Trace:
    """Load a trace written by :func:`write_trace` (format from suffix)."""
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError("file not found", None, str(p)) from None
    if p.suffix == ".json":
        try:
            doc = json.loads(text)
            return Trace(doc["kind"], doc["x"], doc["y"], doc.get("metadata", {}))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"not a trace document: {exc}", None, str(p)) from None
    meta, kind, rows = {}, None, []
    header_done = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            key, value = key.strip(), value.strip()
            if key == "kind":
                kind = value
            elif key not in ("x_unit", "y_unit"):
                try:
                    meta[key] = json.loads(value)
                except ValueError:
                    meta[key] = value
            continue
        if not header_done:
            if line.strip() != "x,y":
                raise ConfigError("expected 'x,y' column header", lineno, str(p))
            header_done = True
            continue
        if not line.strip():
            continue
        try:
            a, b = line.split(",")
            rows.append((float(a), float(b)))
        except ValueError:
            raise ConfigError(f"bad data row {line!r}", lineno, str(p)) from None
    if kind is None:
        raise ConfigError("missing '# kind' header", None, str(p))
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    try:
        return Trace(kind, arr[:, 0], arr[:, 1], meta)
    except ValueError as exc:
        raise ConfigError(str(exc), None, str(p)) from None
