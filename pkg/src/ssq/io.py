"""CSV ingestion and report emission.

Reports are plain CSV preceded by ``# key=value`` lines that echo the fully
resolved configuration. Floats are written with 17 significant digits, so
every value parses back to the identical double.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset
from .errors import DataError
from .simulation import MetricsRow, MetricsTable, OracleConstants


@dataclass(frozen=True)
class Table:
    """Header plus string cells as read from disk."""

    header: list[str]
    rows: list[list[str]]
    path: str = ""

    def column(self, name: str) -> int:
        try:
            return self.header.index(name)
        except ValueError:
            raise DataError(f"{self.path}: no column named {name!r}") from None


def read_table(path) -> Table:
    path = str(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(line for line in fh if not line.startswith("#"))
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError(f"{path}: empty file, header row required") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path}: row {lineno} has {len(row)} fields, "
                                    f"header has {len(header)}")
                rows.append([c.strip() for c in row])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    return Table(header, rows, path)


def _to_float(cell: str, path: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {col!r}: {cell!r} is not numeric") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def _code_levels(tables: Sequence[Table], name: str) -> dict[str, int]:
    levels = set()
    for t in tables:
        if name in t.header:
            j = t.column(name)
            levels.update(r[j] for r in t.rows)
    return {lev: k for k, lev in enumerate(sorted(levels))}


def _covariates(table: Table, names: list[str], codes: dict[str, dict[str, int]]) -> np.ndarray:
    out = np.empty((len(table.rows), len(names)))
    for c, name in enumerate(names):
        j = table.column(name)
        for i, row in enumerate(table.rows):
            if name in codes:
                out[i, c] = codes[name][row[j]]
            else:
                out[i, c] = _to_float(row[j], table.path, i + 2, name)
    return out


@dataclass(frozen=True)
class LoadedData:
    data: Dataset
    covariates: list[str]
    response: str | None


def load_data(path, response: str | None = "y", unlabeled_path=None,
              categorical: Iterable[str] = ()) -> LoadedData:
    """Read one mixed file, or a labeled file plus an unlabeled file.

    In the single-file form rows with an empty response cell are unlabeled.
    All non-response columns are covariates in header order; columns listed
    in ``categorical`` are integer-coded by sorted level.
    """
    main = read_table(path)
    tables = [main]
    extra = read_table(unlabeled_path) if unlabeled_path is not None else None
    if extra is not None:
        tables.append(extra)
    names = [h for h in main.header if h != response]
    if not names:
        raise DataError(f"{main.path}: no covariate columns")
    codes = {name: _code_levels(tables, name) for name in categorical}
    for name in codes:
        if name not in names:
            raise DataError(f"categorical column {name!r} is not a covariate")
    if response is None or response not in main.header:
        if response is not None:
            raise DataError(f"{main.path}: no column named {response!r}")
        raise DataError("no labeled rows: a response column is required")
    j = main.column(response)
    labeled = [i for i, r in enumerate(main.rows) if r[j] != ""]
    unlabeled = [i for i, r in enumerate(main.rows) if r[j] == ""]
    if not labeled:
        raise DataError("no labeled rows")
    x_all = _covariates(main, names, codes)
    y = np.array([_to_float(main.rows[i][j], main.path, i + 2, response) for i in labeled])
    xu = x_all[unlabeled]
    if extra is not None:
        missing = [n for n in names if n not in extra.header]
        if missing:
            raise DataError(f"{extra.path}: missing covariate column(s) {missing}")
        if response in extra.header:
            k = extra.column(response)
            if any(r[k] != "" for r in extra.rows):
                raise DataError(f"{extra.path}: unlabeled file has response values")
        xu = np.vstack([xu, _covariates(extra, names, codes)])
    data = Dataset(labeled_y=y, labeled_x=x_all[labeled],
                   unlabeled_x=xu.reshape(-1, len(names)))
    return LoadedData(data, names, response)


def load_csv(path, response_column: str | None = "y", unlabeled_path=None,
             categorical: Iterable[str] = ()) -> Dataset:
    return load_data(path, response_column, unlabeled_path, categorical).data


def fmt(v) -> str:
    """Lossless text form: 17 significant digits for floats."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_csv(data: Dataset, names: Sequence[str] | None = None, response: str = "y") -> str:
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(data.p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*names, response])
    for x, y in zip(data.labeled_x, data.labeled_y):
        w.writerow([*map(fmt, x), fmt(y)])
    for x in data.unlabeled_x:
        w.writerow([*map(fmt, x), ""])
    return buf.getvalue()


def write_dataset(path, data: Dataset, names: Sequence[str] | None = None,
                  response: str = "y") -> None:
    atomic_write(path, dataset_csv(data, names, response))


def report_csv(rows: Sequence[dict], meta: dict, columns: Sequence[str] | None = None) -> str:
    columns = list(columns) if columns is not None else list(rows[0]) if rows else []
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    return buf.getvalue()


def parse_report(text: str) -> tuple[dict[str, str], list[dict[str, str]]]:
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    return meta, [dict(r) for r in reader]


def read_report(path) -> tuple[dict[str, str], list[dict[str, str]]]:
    with open(path, encoding="utf-8") as fh:
        return parse_report(fh.read())


_ROW_TYPES = {f.name: f.type for f in fields(MetricsRow)}


def metrics_csv(table: MetricsTable) -> str:
    meta = dict(table.config)
    if table.oracle is not None:
        meta.update({f"oracle_{k}": v for k, v in vars(table.oracle).items()})
    return report_csv(table.as_dicts(), meta, list(_ROW_TYPES))


def metrics_from_csv(text: str) -> MetricsTable:
    meta, rows = parse_report(text)
    conv = {"int": int, "float": float, "str": str}
    parsed = [MetricsRow(**{k: conv[_ROW_TYPES[k]](v) for k, v in r.items()}) for r in rows]
    oracle = None
    okeys = ["theta0", "sigma2_sup", "sigma2_eff", "ore"]
    if all(f"oracle_{k}" in meta for k in okeys):
        oracle = OracleConstants(**{k: float(meta.pop(f"oracle_{k}")) for k in okeys})
    return MetricsTable(parsed, oracle, meta)


def markdown_table(rows: Sequence[dict], columns: Sequence[str], digits: int = 4) -> str:
    """Aligned markdown; floats rounded for display only."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.{digits}f}"
        return fmt(v)
    cells = [[cell(r[c]) for c in columns] for r in rows]
    text = [bool(rows) and isinstance(rows[0][c], str) for c in columns]
    widths = [max(len(c), *(len(row[j]) for row in cells)) if cells else len(c)
              for j, c in enumerate(columns)]
    lines = ["| " + " | ".join(c.ljust(w) for c, w in zip(columns, widths)) + " |",
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    for row in cells:
        lines.append("| " + " | ".join(v.ljust(w) if t else v.rjust(w)
                                       for v, w, t in zip(row, widths, text)) + " |")
    return "\n".join(lines) + "\n"
