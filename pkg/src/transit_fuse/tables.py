"""Delimited-table and JSON writers shared by every exporter."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path


def fmt(value) -> str:
    """Render a cell; floats keep full precision so files round-trip bit-exactly."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(float(value))  # np.float64 is a float subclass with a different repr
    if hasattr(value, "item"):  # numpy scalar
        return fmt(value.item())
    return str(value)


def write_table(path, header, rows, preamble=()) -> Path:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Inverse of :func:`write_table`; manifest lines are dropped."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_json(path, obj, manifest=None) -> Path:
    if manifest is not None:
        obj = {"manifest": manifest, **obj}
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, sort_keys=False, allow_nan=True) + "\n", encoding="utf-8")
    return path
