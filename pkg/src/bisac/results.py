"""Tabular experiment results with deterministic CSV persistence.

Every experiment emits a ResultTable: an ordered schema (column name plus
unit), rows, and a metadata block. Serialization is byte-reproducible for a
fixed (config, seed): floats print through one fixed format, infinities as
the literal token inf, and the optional timestamp is off by default. The
metadata travels in comment lines so any CSV reader that skips '#' consumes
the table unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

__all__ = ["ResultTable", "format_cell", "read_table"]

_VERSION = "bisac 0.1.0"


def format_cell(value) -> str:
    """One CSV cell: fixed shortest-roundtrip float format, inf literals."""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".12g")


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class ResultTable:
    """Ordered columns with units, numeric rows, and run provenance.

    Attributes:
        columns: column names, in emission order.
        units: one unit label per column ("m", "dB", "1" for dimensionless).
        rows: list of tuples, one value per column.
        metadata: provenance (config_hash, seed, ...); written as comments.
    """

    columns: tuple
    units: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.units = tuple(self.units)
        if len(self.columns) != len(self.units):
            raise ValueError("one unit per column required")

    def append(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(
                f"row has {len(values)} cells, schema has {len(self.columns)}"
            )
        self.rows.append(tuple(values))

    def column(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def select(self, **criteria) -> "ResultTable":
        """Rows whose named cells equal the given values."""
        idx = {name: self.columns.index(name) for name in criteria}
        kept = [
            row
            for row in self.rows
            if all(row[idx[name]] == value for name, value in criteria.items())
        ]
        return ResultTable(self.columns, self.units, kept, dict(self.metadata))

    def to_csv(self, stamp: bool = False) -> str:
        lines = []
        schema = ", ".join(
            f"{c} [{u}]" for c, u in zip(self.columns, self.units)
        )
        lines.append(f"# schema: {schema}")
        meta = dict(self.metadata)
        meta.setdefault("version", _VERSION)
        for key in sorted(meta):
            lines.append(f"# {key}: {meta[key]}")
        if stamp:
            now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            lines.append(f"# timestamp: {now}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(format_cell(v) for v in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path, stamp: bool = False) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv(stamp=stamp))


def read_table(path) -> ResultTable:
    """Read a CSV written by ResultTable.write_csv."""
    columns = None
    units = ()
    rows = []
    metadata = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                key, _, value = body.partition(":")
                if key.strip() == "schema":
                    parts = [p.strip() for p in value.split(",")]
                    names, us = [], []
                    for part in parts:
                        m = part.rsplit("[", 1)
                        names.append(m[0].strip())
                        us.append(m[1].rstrip("]") if len(m) == 2 else "1")
                    units = tuple(us)
                else:
                    metadata[key.strip()] = value.strip()
                continue
            cells = line.split(",")
            if columns is None:
                columns = tuple(cells)
                if len(units) != len(columns):
                    units = ("1",) * len(columns)
                continue
            rows.append(tuple(_parse_cell(c) for c in cells))
    if columns is None:
        raise ValueError(f"{path}: no header row found")
    return ResultTable(columns, units, rows, metadata)
