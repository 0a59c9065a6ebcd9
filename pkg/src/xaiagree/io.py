"""CSV helpers shared by every export."""

from __future__ import annotations

import csv
import math
from pathlib import Path


def fmt(value) -> str:
    """17 significant digits, enough to round-trip any double."""
    if value is None:
        return ""
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "nan"
    return format(value, ".17g")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
