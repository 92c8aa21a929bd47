"""Loading RCT data from CSV and the train/tune/test split.

Files are read in chunks with pandas' C parser.  When a chunk fails to parse,
the offending rows are located by re-reading that chunk with :mod:`csv`, so
errors name the data row (1-based, header excluded) and column.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from rankbias._rng import generator
from rankbias.datagen import Dataset

__all__ = [
    "DataValidationError",
    "ColumnMapping",
    "SplitSpec",
    "load_csv",
    "split",
    "parse_split",
]

logger = logging.getLogger(__name__)

CHUNK_ROWS = 200_000


class DataValidationError(ValueError):
    """Input data violates the expected schema or value domain."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class ColumnMapping:
    """Which CSV columns hold features, treatment and outcome.

    ``treatment_probability=None`` estimates it as the treated share.
    ``extra_columns`` are loaded as ground truth when they are ``mu`` and
    ``tau``.
    """

    feature_columns: tuple[str, ...]
    treatment_column: str = "treatment"
    outcome_column: str = "outcome"
    treatment_probability: float | None = None
    extra_columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        object.__setattr__(self, "extra_columns", tuple(self.extra_columns))
        names = self.columns
        if len(set(names)) != len(names):
            raise ValueError(f"mapped column names must be distinct: {names}")
        if not self.feature_columns:
            raise ValueError("at least one feature column is required")
        p = self.treatment_probability
        if p is not None and not 0.0 < p < 1.0:
            raise ValueError(f"treatment probability must lie in (0, 1), got {p}")
        if set(self.extra_columns) - {"mu", "tau"}:
            raise ValueError("only 'mu' and 'tau' are supported as extra columns")

    @property
    def columns(self) -> tuple[str, ...]:
        return (
            self.feature_columns
            + (self.treatment_column, self.outcome_column)
            + self.extra_columns
        )


def _read_header(path: Path) -> list[str]:
    with open(path, newline="") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
    if not header or header == [""]:
        raise DataValidationError(f"{path}: missing header row")
    return [h.strip() for h in header]


def _locate_bad_value(path: Path, header: list[str], mapping: ColumnMapping, first_row: int) -> None:
    """Scan data rows from ``first_row`` (0-based) and raise on the first bad field."""
    pos = {c: header.index(c) for c in mapping.columns}
    binary = (mapping.treatment_column, mapping.outcome_column)
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for i, rec in enumerate(itertools.islice(rows, first_row, None), start=first_row + 1):
            if len(rec) != len(header):
                raise DataValidationError(
                    f"row {i}: expected {len(header)} fields, found {len(rec)}", row=i
                )
            for col, j in pos.items():
                raw = rec[j].strip()
                try:
                    v = float(raw)
                except ValueError:
                    kind = "binary" if col in binary else "numeric"
                    raise DataValidationError(
                        f"row {i}, column {col!r}: non-{kind} value {raw!r}", row=i, column=col
                    ) from None
                if not math.isfinite(v):
                    raise DataValidationError(
                        f"row {i}, column {col!r}: missing or non-finite value {raw!r}",
                        row=i,
                        column=col,
                    )
                if col in binary and v not in (0.0, 1.0):
                    raise DataValidationError(
                        f"row {i}, column {col!r}: value {raw!r} is not 0 or 1", row=i, column=col
                    )
    raise DataValidationError(f"{path}: unparseable data after row {first_row}")


def load_csv(path: str | Path, mapping: ColumnMapping, chunk_rows: int = CHUNK_ROWS) -> Dataset:
    """Load and validate an RCT data set in a single streaming pass."""
    path = Path(path)
    header = _read_header(path)
    missing = [c for c in mapping.columns if c not in header]
    if missing:
        raise DataValidationError(f"{path}: missing column(s) {missing}; header is {header}")
    if len(set(header)) != len(header):
        raise DataValidationError(f"{path}: duplicate column names in header")
    extra = [c for c in header if c not in mapping.columns]
    if extra:
        logger.info("ignoring unmapped columns %s", extra)

    cols = list(mapping.columns)
    binary = (mapping.treatment_column, mapping.outcome_column)
    parts: dict[str, list[np.ndarray]] = {c: [] for c in cols}
    offset = 0
    try:
        reader = pd.read_csv(
            path,
            usecols=cols,
            dtype={c: np.float64 for c in cols},
            chunksize=chunk_rows,
            engine="c",
            float_precision="round_trip",
            skipinitialspace=True,
        )
        for chunk in reader:
            n_chunk = len(chunk)
            for c in cols:
                v = chunk[c].to_numpy(dtype=np.float64)
                bad = ~np.isfinite(v)
                if c in binary:
                    bad |= (v != 0.0) & (v != 1.0)
                if bad.any():
                    i = offset + int(np.argmax(bad)) + 1
                    what = "is not 0 or 1" if c in binary and np.isfinite(v[i - offset - 1]) else "is missing or non-finite"
                    raise DataValidationError(
                        f"row {i}, column {c!r}: value {what}", row=i, column=c
                    )
                parts[c].append(v)
            offset += n_chunk
    except (ValueError, pd.errors.ParserError) as exc:
        if isinstance(exc, DataValidationError):
            raise
        _locate_bad_value(path, header, mapping, offset)

    if offset == 0:
        raise DataValidationError(f"{path}: empty file (header only)")

    def col(c: str) -> np.ndarray:
        return np.concatenate(parts[c])

    X = np.column_stack([col(c) for c in mapping.feature_columns])
    w = col(mapping.treatment_column).astype(np.int8)
    y = col(mapping.outcome_column).astype(np.int8)
    n_treated = int(w.sum())
    if mapping.treatment_probability is None:
        if n_treated == 0 or n_treated == offset:
            raise DataValidationError("cannot estimate treatment probability: one arm is empty")
        p = n_treated / offset
    else:
        p = mapping.treatment_probability
    truth = {c: col(c) for c in mapping.extra_columns}
    logger.info(
        "loaded %d rows from %s: %d treated, %d control, p=%.6g",
        offset, path, n_treated, offset - n_treated, p,
    )
    return Dataset(
        X, w, y, p, truth.get("mu"), truth.get("tau"), feature_names=mapping.feature_columns
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.1
    tune_fraction: float = 0.1
    test_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        fr = (self.train_fraction, self.tune_fraction, self.test_fraction)
        if any(not f > 0 for f in fr):
            raise ValueError(f"split fractions must be positive, got {fr}")
        if abs(math.fsum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {math.fsum(fr)}")


def parse_split(text: str, seed: int = 0) -> SplitSpec:
    """Parse ``"0.1,0.1,0.8"``."""
    try:
        a, b, c = (float(x) for x in text.split(","))
    except ValueError:
        raise ValueError(f"expected three comma-separated fractions, got {text!r}") from None
    return SplitSpec(a, b, c, seed)


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle rows with ``spec.seed`` and cut them into train, tune and test.

    Part sizes are rounded at the cumulative boundaries, so each is within one
    row of its exact fraction.  Rows keep their original order within a part.
    """
    n = data.n
    if n < 10:
        raise ValueError(f"need at least 10 rows to split, got {n}")
    b1 = int(round(spec.train_fraction * n))
    b2 = int(round((spec.train_fraction + spec.tune_fraction) * n))
    if not 0 < b1 < b2 < n:
        raise ValueError(f"split fractions leave an empty part for n={n}")
    perm = generator(spec.seed, 0x5B17).permutation(n)
    parts = (np.sort(perm[:b1]), np.sort(perm[b1:b2]), np.sort(perm[b2:]))
    return tuple(data.subset(p) for p in parts)  # type: ignore[return-value]
