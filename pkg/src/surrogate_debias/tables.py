"""CSV reading and writing.

Floats are written with ``repr`` (shortest round-trip form), so a write/read
cycle reproduces every finite double exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .first_stage import Dataset


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_records(path, records: Sequence[dict], header: Sequence[str] | None = None) -> Path:
    if header is None:
        header = list(records[0].keys()) if records else []
    return write_csv(path, header, ([rec.get(k) for k in header] for rec in records))


def write_dataclasses(path, items: Sequence) -> Path:
    header = [f.name for f in fields(items[0])] if items else []
    return write_csv(path, header, ([getattr(it, k) for k in header] for it in items))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def export_dataset(data: Dataset, path, x_names: Sequence[str] | None = None,
                   outcome: str = "y", surrogate: str = "z") -> Path:
    """Write a dataset with the outcome blank wherever it is unobserved."""
    names = list(x_names) if x_names is not None else [f"x{j + 1}" for j in range(data.p)]
    header = [outcome] + ([surrogate] if data.z is not None else []) + names
    rows = []
    for i in range(data.n):
        row = [data.y[i] if data.r[i] == 1 else None]
        if data.z is not None:
            row.append(data.z[i])
        row.extend(data.x[i])
        rows.append(row)
    return write_csv(path, header, rows)


@dataclass
class LoadedData:
    data: Dataset
    covariates: list[str]
    rejects: list[tuple[int, str, list[str]]]
    n_rows: int

    @property
    def reject_fraction(self) -> float:
        return len(self.rejects) / self.n_rows if self.n_rows else 0.0


def _parse(cell: str) -> float:
    v = float(cell)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {cell!r}")
    return v


def load_analysis_csv(path, outcome: str, surrogate: str | None = None,
                      covariates: Sequence[str] | None = None) -> LoadedData:
    """Read user data; a blank outcome means missing, any other bad cell rejects the row."""
    header, rows = read_csv(path)
    if outcome not in header:
        raise KeyError(f"outcome column {outcome!r} not in {header}")
    if surrogate is not None and surrogate not in header:
        raise KeyError(f"surrogate column {surrogate!r} not in {header}")
    if covariates is None:
        covariates = [h for h in header if h not in (outcome, surrogate)]
    missing = [c for c in covariates if c not in header]
    if missing:
        raise KeyError(f"covariate columns {missing} not in {header}")
    yi = header.index(outcome)
    zi = header.index(surrogate) if surrogate is not None else None
    xi = [header.index(c) for c in covariates]
    xs, zs, rs, ys, rejects = [], [], [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            rejects.append((lineno, f"expected {len(header)} cells, got {len(row)}", row))
            continue
        try:
            x = [_parse(row[k]) for k in xi]
            z = _parse(row[zi]) if zi is not None else None
            cell = row[yi].strip()
            r = 0 if cell == "" else 1
            y = _parse(cell) if r else math.nan
        except ValueError as exc:
            rejects.append((lineno, str(exc), row))
            continue
        xs.append(x)
        zs.append(z)
        rs.append(r)
        ys.append(y)
    x = np.array(xs, dtype=float).reshape(len(xs), len(xi))
    z = np.array(zs, dtype=float) if zi is not None else None
    data = Dataset(x, z, np.array(rs, dtype=int), np.array(ys, dtype=float))
    return LoadedData(data, list(covariates), rejects, len(rows))
