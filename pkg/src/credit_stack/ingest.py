"""Statement-level CSV ingestion and cleaning.

Raw input is one CSV row per (customer, monthly statement).  The module
parses it against an explicit column schema, compacts storage widths,
strips injected noise by rounding, masks configured outlier ranges to
missing, and joins per-customer labels.  All steps are deterministic:
the same file and schema always produce a bit-identical table.

Missing markers: quiet NaN for continuous cells, code -1 for
categorical cells, ordinal -1 for dates.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from datetime import date as _date
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DuplicateStatementError,
    EmptyFileError,
    CodeOverflowError,
    MissingColumnError,
    MissingLabelError,
    NonPositivePrecisionError,
)
from .serialize import ensure_parent

log = logging.getLogger(__name__)

MISSING_CODE = -1
MAX_STATEMENTS = 13

_KINDS = ("continuous", "categorical", "identifier", "date")
_STORAGES = ("int8", "int16", "float32")
_STORAGE_DTYPES = {"int8": np.int8, "int16": np.int16, "float32": np.float32}


@dataclass(frozen=True)
class ColumnSchema:
    """Declared name, kind, storage width and valid range of one column."""

    name: str
    kind: str
    storage: str = "float32"
    valid_range: tuple[float, float] | None = None


@dataclass
class StatementTable:
    """Columnar statement records, contiguous per customer.

    Rows are grouped by customer in first-appearance order and sorted by
    statement date within each customer; ``statement_index`` numbers them
    1..n.  ``columns`` maps each non-identifier schema name to a per-row
    array (dates stored as proleptic ordinals).
    """

    schema: list[ColumnSchema]
    customer_ids: np.ndarray
    statement_index: np.ndarray
    columns: dict[str, np.ndarray]

    @property
    def n_rows(self) -> int:
        return int(self.customer_ids.size)

    def customers(self) -> np.ndarray:
        """Unique customer ids in first-appearance order."""
        ids = self.customer_ids
        if ids.size == 0:
            return ids
        keep = np.empty(ids.size, dtype=bool)
        keep[0] = True
        keep[1:] = ids[1:] != ids[:-1]
        return ids[keep]

    def row_starts(self) -> np.ndarray:
        """Start offsets of each customer's contiguous row block."""
        ids = self.customer_ids
        keep = np.empty(ids.size, dtype=bool)
        keep[0] = True
        keep[1:] = ids[1:] != ids[:-1]
        return np.flatnonzero(keep)


@dataclass
class LabeledTable:
    """A statement table paired with one binary label per customer."""

    table: StatementTable
    target: np.ndarray  # aligned with table.customers()


# ---------------------------------------------------------------------------
# schema handling


def load_schema(source) -> list[ColumnSchema]:
    """Build a column schema from a JSON document, path, or parsed list."""
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schema {source}: {exc}") from exc
    else:
        doc = source
    if not isinstance(doc, list) or not doc:
        raise ConfigError("schema must be a non-empty JSON array of column objects")

    schema: list[ColumnSchema] = []
    for entry in doc:
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise ConfigError(f"schema entry needs 'name' and 'kind': {entry!r}")
        kind = entry["kind"]
        if kind not in _KINDS:
            raise ConfigError(f"unknown column kind {kind!r} for {entry['name']!r}")
        storage = entry.get("storage", "int8" if kind == "categorical" else "float32")
        if storage not in _STORAGES:
            raise ConfigError(f"unknown storage {storage!r} for {entry['name']!r}")
        rng = entry.get("valid_range")
        if rng is not None:
            if len(rng) != 2 or not all(isinstance(v, (int, float)) for v in rng):
                raise ConfigError(f"valid_range must be [low, high]: {rng!r}")
            if rng[0] > rng[1]:
                raise ConfigError(f"valid_range low > high for {entry['name']!r}")
            rng = (float(rng[0]), float(rng[1]))
        schema.append(ColumnSchema(entry["name"], kind, storage, rng))

    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate column names in schema")
    n_id = sum(c.kind == "identifier" for c in schema)
    if n_id != 1:
        raise ConfigError(f"schema must declare exactly one identifier column, found {n_id}")
    if sum(c.kind == "date" for c in schema) > 1:
        raise ConfigError("schema may declare at most one date column")
    return schema


def schema_to_json(schema: list[ColumnSchema]) -> list[dict]:
    out = []
    for col in schema:
        entry: dict = {"name": col.name, "kind": col.kind, "storage": col.storage}
        if col.valid_range is not None:
            entry["valid_range"] = [col.valid_range[0], col.valid_range[1]]
        out.append(entry)
    return out


def _id_column(schema: list[ColumnSchema]) -> ColumnSchema:
    return next(c for c in schema if c.kind == "identifier")


def _date_column(schema: list[ColumnSchema]) -> ColumnSchema | None:
    return next((c for c in schema if c.kind == "date"), None)


# ---------------------------------------------------------------------------
# parsing


def _parse_float(cell: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def _parse_code(cell: str) -> int:
    try:
        code = int(cell)
    except ValueError:
        return MISSING_CODE
    return code if code >= 0 else MISSING_CODE


def _parse_ordinal(cell: str) -> int:
    try:
        return _date.fromisoformat(cell.strip()).toordinal()
    except ValueError:
        return MISSING_CODE


def parse_csv(path, schema: list[ColumnSchema]) -> StatementTable:
    """Read a raw statement CSV into a sorted, indexed table.

    The header must carry exactly the schema's column names (any order).
    Unparseable or empty cells become the missing marker.  Rows are
    re-ordered by (customer first appearance, date ascending) and each
    customer's statements are numbered from 1.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyFileError(f"{path}: no header row") from None
            records = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not records:
        raise EmptyFileError(f"{path}: no data rows")

    want = [c.name for c in schema]
    if sorted(header) != sorted(want):
        missing = sorted(set(want) - set(header))
        extra = sorted(set(header) - set(want))
        raise MissingColumnError(
            f"{path}: header does not match schema"
            + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {extra}" if extra else "")
        )
    pos = {name: header.index(name) for name in want}

    width = len(header)
    for i, rec in enumerate(records):
        if len(rec) != width:
            raise DataError(f"{path}: row {i + 2} has {len(rec)} cells, expected {width}")

    cells = {name: [rec[pos[name]] for rec in records] for name in want}

    id_col = _id_column(schema)
    ids = cells[id_col.name]
    for i, cid in enumerate(ids):
        if not cid:
            raise DataError(f"{path}: empty customer identifier at row {i + 2}")
    ids = np.asarray(ids, dtype=object)

    columns: dict[str, np.ndarray] = {}
    for col in schema:
        if col.kind == "identifier":
            continue
        raw = cells[col.name]
        if col.kind == "continuous":
            columns[col.name] = np.array([_parse_float(c) for c in raw], dtype=np.float64)
        elif col.kind == "categorical":
            columns[col.name] = np.array([_parse_code(c) for c in raw], dtype=np.int64)
        else:  # date
            columns[col.name] = np.array([_parse_ordinal(c) for c in raw], dtype=np.int64)

    # first-appearance rank per customer, then date, fixes the row order
    rank_of: dict = {}
    for cid in ids:
        if cid not in rank_of:
            rank_of[cid] = len(rank_of)
    ranks = np.array([rank_of[cid] for cid in ids], dtype=np.int64)

    date_col = _date_column(schema)
    date_key = columns[date_col.name] if date_col else np.arange(ids.size, dtype=np.int64)
    order = np.lexsort((date_key, ranks))

    ids = ids[order]
    ranks = ranks[order]
    columns = {name: arr[order] for name, arr in columns.items()}

    if date_col is not None:
        dates = columns[date_col.name]
        dup = (ranks[1:] == ranks[:-1]) & (dates[1:] == dates[:-1])
        if dup.any():
            i = int(np.flatnonzero(dup)[0]) + 1
            when = "<missing>" if dates[i] < 0 else _date.fromordinal(int(dates[i])).isoformat()
            raise DuplicateStatementError(
                f"customer {ids[i]!r} has two statements dated {when}"
            )

    starts = np.flatnonzero(np.concatenate(([True], ranks[1:] != ranks[:-1])))
    counts = np.diff(np.concatenate((starts, [ids.size])))
    if counts.max() > MAX_STATEMENTS:
        worst = int(np.argmax(counts))
        raise DataError(
            f"customer {ids[starts[worst]]!r} has {counts[worst]} statements,"
            f" limit is {MAX_STATEMENTS}"
        )
    index = np.arange(ids.size, dtype=np.int32) - np.repeat(starts, counts).astype(np.int32) + 1

    return StatementTable(list(schema), ids, index, columns)


# ---------------------------------------------------------------------------
# cleaning


def compact_types(table: StatementTable, schema: list[ColumnSchema]) -> StatementTable:
    """Narrow column storage: float32 values, int8/int16 codes.

    Categorical columns get the narrowest signed integer width that
    holds their largest observed code (the -1 missing sentinel always
    fits), promoting past the schema hint when necessary.  The returned
    table carries the updated schema.
    """
    new_schema: list[ColumnSchema] = []
    columns = dict(table.columns)
    for col in schema:
        if col.kind == "continuous":
            columns[col.name] = columns[col.name].astype(np.float32)
            new_schema.append(replace(col, storage="float32"))
        elif col.kind == "categorical":
            codes = columns[col.name]
            top = int(codes.max()) if codes.size else 0
            if top <= np.iinfo(np.int8).max:
                storage = "int8"
            elif top <= np.iinfo(np.int16).max:
                storage = "int16"
            else:
                raise CodeOverflowError(
                    f"column {col.name!r}: code {top} exceeds 16-bit storage"
                )
            columns[col.name] = codes.astype(_STORAGE_DTYPES[storage])
            new_schema.append(replace(col, storage=storage))
        else:
            new_schema.append(col)
    return StatementTable(new_schema, table.customer_ids, table.statement_index, columns)


def denoise_round(table: StatementTable, precision: float = 0.01) -> StatementTable:
    """Snap continuous values to the nearest multiple of ``precision``.

    Exact halves round away from zero.  Missing cells and non-continuous
    columns pass through untouched; applying the same precision twice is
    an identity.
    """
    if not precision > 0:
        raise NonPositivePrecisionError(f"precision must be > 0, got {precision}")
    columns = dict(table.columns)
    for col in table.schema:
        if col.kind != "continuous":
            continue
        values = columns[col.name]
        x = values.astype(np.float64)
        snapped = np.sign(x) * np.floor(np.abs(x) / precision + 0.5) * precision
        columns[col.name] = snapped.astype(values.dtype)
    return StatementTable(table.schema, table.customer_ids, table.statement_index, columns)


def mask_outliers(
    table: StatementTable, schema: list[ColumnSchema]
) -> tuple[StatementTable, dict[str, int]]:
    """Blank continuous cells outside their column's inclusive valid range.

    Returns the masked table and a per-column count of cells blanked.
    Columns without a configured range are untouched.
    """
    columns = dict(table.columns)
    masked: dict[str, int] = {}
    for col in schema:
        if col.kind != "continuous" or col.valid_range is None:
            continue
        low, high = col.valid_range
        values = columns[col.name].copy()
        bad = (values < low) | (values > high)  # NaN compares false: stays missing
        masked[col.name] = int(np.count_nonzero(bad))
        values[bad] = np.nan
        columns[col.name] = values
    return StatementTable(table.schema, table.customer_ids, table.statement_index, columns), masked


def join_labels(table: StatementTable, labels: Mapping[str, int]) -> LabeledTable:
    """Pair every customer in the table with its binary label.

    A customer without a label is an error; labels for unknown customers
    are ignored (their count is logged).
    """
    customers = table.customers()
    target = np.empty(customers.size, dtype=np.int8)
    for i, cid in enumerate(customers):
        if cid not in labels:
            raise MissingLabelError(f"no label for customer {cid!r}")
        value = labels[cid]
        if value not in (0, 1):
            raise DataError(f"label for customer {cid!r} must be 0 or 1, got {value!r}")
        target[i] = value
    extras = len(labels) - customers.size
    if extras > 0:
        log.warning("ignoring %d labels for customers absent from the table", extras)
    return LabeledTable(table, target)


# ---------------------------------------------------------------------------
# CSV round-trips


def _format_value(col: ColumnSchema, value) -> str:
    if col.kind == "continuous":
        if math.isnan(value):
            return ""
        return np.format_float_positional(value, unique=True, trim="0")
    if col.kind == "categorical":
        return "" if value == MISSING_CODE else str(int(value))
    # date
    return "" if value < 0 else _date.fromordinal(int(value)).isoformat()


def write_csv(table: StatementTable, path) -> None:
    """Write the table back out in the schema's column order."""
    with open(ensure_parent(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([c.name for c in table.schema])
        data_cols = []
        for col in table.schema:
            if col.kind == "identifier":
                data_cols.append(table.customer_ids)
            else:
                data_cols.append(table.columns[col.name])
        for i in range(table.n_rows):
            row = []
            for col, arr in zip(table.schema, data_cols):
                row.append(arr[i] if col.kind == "identifier" else _format_value(col, arr[i]))
            writer.writerow(row)


def read_labels(path) -> dict[str, int]:
    """Load a two-column (customer_id, target) CSV into a mapping."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyFileError(f"{path}: no header row") from None
            if len(header) < 2:
                raise MissingColumnError(f"{path}: expected customer_id and target columns")
            labels: dict[str, int] = {}
            for i, rec in enumerate(reader):
                if len(rec) < 2:
                    raise DataError(f"{path}: row {i + 2} is incomplete")
                try:
                    value = int(rec[1])
                except ValueError:
                    raise DataError(
                        f"{path}: row {i + 2}: label {rec[1]!r} is not an integer"
                    ) from None
                if value not in (0, 1):
                    raise DataError(
                        f"{path}: row {i + 2}: label must be 0 or 1, got {value}"
                    )
                labels[rec[0]] = value
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not labels:
        raise EmptyFileError(f"{path}: no label rows")
    return labels


def write_labels(labels: Mapping[str, int], path, header=("customer_id", "target")) -> None:
    with open(ensure_parent(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for cid, value in labels.items():
            writer.writerow([cid, int(value)])
