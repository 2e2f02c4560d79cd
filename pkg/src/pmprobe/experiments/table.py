"""Column-typed result tables with CSV and JSON writers.

CSV layout::

    # tool: pmprobe 0.1.0
    # constants: CODATA-2018-exact
    # config_hash: 0123456789abcdef
    # table: ratio
    # generated: 2026-01-01T00:00:00+00:00
    # summary.max_ratio: 1.99
    lambda:m^-2 s^-1,gamma:1,t:s,...
    3e+15,-3,1e-08,...

Everything except the ``generated`` line is a pure function of the config,
so two runs produce identical bodies. Floats are written with 17 significant
digits, which round-trips float64 exactly.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, constants


@dataclass(frozen=True)
class Column:
    name: str
    unit: str = "1"
    kind: str = "float"  # float | int | str | bool


@dataclass
class ResultTable:
    """Named, unit-annotated columns of equal length plus summary metadata."""

    name: str
    columns: list[Column]
    data: dict[str, np.ndarray]
    summary: dict[str, object] = field(default_factory=dict)
    config_hash: str = ""

    def __post_init__(self):
        lengths = {len(self.data[c.name]) for c in self.columns}
        if len(lengths) > 1:
            raise ValueError(f"ragged table {self.name}: column lengths {sorted(lengths)}")
        missing = [c.name for c in self.columns if c.name not in self.data]
        if missing:
            raise ValueError(f"columns without data: {missing}")

    def __len__(self):
        return len(self.data[self.columns[0].name]) if self.columns else 0

    def column(self, name: str) -> np.ndarray:
        return self.data[name]

    def provenance(self, timestamp: bool = True) -> list[tuple[str, str]]:
        lines = [
            ("tool", f"pmprobe {__version__}"),
            ("constants", constants.CONSTANTS_VERSION),
            ("config_hash", self.config_hash),
            ("table", self.name),
        ]
        if timestamp:
            lines.append(("generated", _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")))
        return lines

    # -- formatting

    @staticmethod
    def _fmt(value, kind: str) -> str:
        if kind == "str":
            return str(value)
        if kind == "bool":
            return "1" if value else "0"
        if kind == "int":
            return str(int(value))
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")

    def header(self) -> str:
        return ",".join(f"{c.name}:{c.unit}" for c in self.columns)

    def body_lines(self) -> list[str]:
        cols = [(self.data[c.name], c.kind) for c in self.columns]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for i in range(len(self)):
            writer.writerow([self._fmt(col[i], kind) for col, kind in cols])
        return buf.getvalue().splitlines()

    def summary_lines(self) -> list[str]:
        return [f"# summary.{k}: {_summary_text(v)}" for k, v in self.summary.items()]

    def to_csv_text(self, timestamp: bool = True) -> str:
        lines = [f"# {k}: {v}" for k, v in self.provenance(timestamp)]
        lines += self.summary_lines()
        lines.append(self.header())
        lines += self.body_lines()
        return "\n".join(lines) + "\n"

    def to_json_obj(self, timestamp: bool = True) -> dict:
        rows = []
        for i in range(len(self)):
            row = {}
            for c in self.columns:
                v = self.data[c.name][i]
                if c.kind == "str":
                    row[c.name] = str(v)
                elif c.kind == "bool":
                    row[c.name] = bool(v)
                elif c.kind == "int":
                    row[c.name] = int(v)
                else:
                    v = float(v)
                    row[c.name] = None if math.isnan(v) or math.isinf(v) else v
            rows.append(row)
        return {
            "provenance": dict(self.provenance(timestamp)),
            "summary": {k: _jsonable(v) for k, v in self.summary.items()},
            "columns": [{"name": c.name, "unit": c.unit, "kind": c.kind} for c in self.columns],
            "rows": rows,
        }

    def write(self, out_dir: str | Path, fmt: str = "csv", mirror: bool = False, stem: str | None = None) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        written = []
        if fmt == "csv" or mirror:
            path = out_dir / f"{stem}.csv"
            path.write_text(self.to_csv_text())
            written.append(path)
        if fmt == "json" or mirror:
            path = out_dir / f"{stem}.json"
            path.write_text(json.dumps(self.to_json_obj(), indent=1, allow_nan=False) + "\n")
            written.append(path)
        return written


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _summary_text(v) -> str:
    return json.dumps(_jsonable(v), sort_keys=True)


def read_csv_body(path: str | Path) -> str:
    """Header row plus data rows of a written CSV, without comment lines."""
    lines = Path(path).read_text().splitlines()
    return "\n".join(line for line in lines if not line.startswith("#"))


def read_csv(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Parse a written CSV into (comment key/values, header names, rows)."""
    meta, data = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = value
        else:
            data.append(line)
    parsed = list(csv.reader(data))
    if not parsed:
        return meta, [], []
    header = [h.split(":", 1)[0] for h in parsed[0]]
    return meta, header, parsed[1:]
