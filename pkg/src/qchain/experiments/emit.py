"""Sweep results and their CSV / JSON files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np


def _clean(v):
    """Plain Python scalars only; NaN becomes None so JSON round-trips compare equal."""
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else v
    return v


@dataclass
class Table:
    columns: Tuple[str, ...]
    rows: List[tuple] = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(tuple(_clean(v) for v in values))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def records(self) -> List[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]


@dataclass
class SweepResult:
    """Main table plus optional named side tables (aggregates, histograms)."""

    experiment: str
    table: Table
    extra: Dict[str, Table] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def rows(self) -> List[tuple]:
        return self.table.rows

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.table.columns

    def all_infeasible(self) -> bool:
        return self.metadata.get("feasible_rows", 1) == 0

    def to_json_dict(self) -> dict:
        def tab(t: Table) -> dict:
            return {"columns": list(t.columns), "rows": [list(r) for r in t.rows]}

        return {
            "experiment": self.experiment,
            "metadata": self.metadata,
            "table": tab(self.table),
            "extra": {k: tab(v) for k, v in self.extra.items()},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SweepResult":
        def tab(x: dict) -> Table:
            return Table(tuple(x["columns"]), [tuple(r) for r in x["rows"]])

        return cls(d["experiment"], tab(d["table"]), {k: tab(v) for k, v in d["extra"].items()},
                   d["metadata"])

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SweepResult":
        return cls.from_json_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SweepResult):
            return NotImplemented
        return self.to_json_dict() == other.to_json_dict()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_csv(t: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.columns)
    for r in t.rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def output_stem(out: Optional[str], experiment: str) -> Path:
    """``out`` may be a directory (existing, or ending in a separator) or a file path."""
    if out is None:
        return Path("results") / experiment
    p = Path(out)
    if out.endswith(("/", os.sep)) or p.is_dir():
        return p / experiment
    return p.with_suffix("") if p.suffix.lower() in (".csv", ".json") else p


PLOT_STUB = '''"""Starting point for plotting {experiment} results; edit freely."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
with open(path, newline="") as fh:
    rows = list(csv.DictReader(fh))
print(f"{{len(rows)}} rows, columns: {{list(rows[0]) if rows else []}}")
x_col, y_col = "{x_col}", "{y_col}"
xs = [float(r[x_col]) for r in rows if r[x_col] and r[y_col]]
ys = [float(r[y_col]) for r in rows if r[x_col] and r[y_col]]
plt.plot(xs, ys, ".")
plt.xlabel(x_col)
plt.ylabel(y_col)
plt.show()
'''


def emit(result: SweepResult, out: Optional[str] = None, plot_axes: Tuple[str, str] = None) -> List[Path]:
    """Write ``<stem>.csv``, ``<stem>.json``, one CSV per side table and a plot stub.

    Returns the written paths.  Raises ``OSError`` when the location is not writable.
    """
    stem = output_stem(out, result.experiment)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []

    def put(path: Path, text: str):
        with open(path, "w", newline="") as fh:
            fh.write(text)
        written.append(path)

    put(stem.with_suffix(".csv"), table_csv(result.table))
    for name, t in result.extra.items():
        put(stem.parent / f"{stem.name}_{name}.csv", table_csv(t))
    put(stem.with_suffix(".json"), result.to_json() + "\n")
    x_col, y_col = plot_axes or (result.columns[0], "skr_hz" if "skr_hz" in result.columns else result.columns[-1])
    put(stem.parent / f"{stem.name}_plot.py",
        PLOT_STUB.format(experiment=result.experiment, csv_name=stem.with_suffix(".csv").name,
                         x_col=x_col, y_col=y_col))
    return written
