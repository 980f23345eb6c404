"""Covariate ingestion, scaling and train/validation/test splitting."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import DataError, ParseError

CONTINUOUS = "continuous"
DISCRETE = "discrete"

# Covariates of the public Hillstrom e-mail campaign file (treatment/outcome columns excluded).
HILLSTROM_MAPPING = {
    "features": [
        "recency", "history_segment", "history", "mens",
        "womens", "zip_code", "newbie", "channel",
    ],
    "discrete": [
        "recency", "history_segment", "mens", "womens",
        "zip_code", "newbie", "channel",
    ],
}

DEFAULT_RATIOS = (0.49, 0.21, 0.30)


class ConstantColumnWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CovariateMatrix:
    """An n x d feature table scaled column-wise to [0, 1]."""

    values: np.ndarray
    column_kinds: tuple[str, ...]
    column_names: tuple[str, ...]
    constant_columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("covariate values must be a 2-d array")
        n, d = values.shape
        if n < 2 or d < 1:
            raise ValueError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
        if not np.all(np.isfinite(values)):
            raise ValueError("covariate values must be finite")
        if len(self.column_kinds) != d or len(self.column_names) != d:
            raise ValueError("column metadata does not match the number of columns")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def has_constant_column(self) -> bool:
        return bool(self.constant_columns)

    def subset(self, rows: Sequence[int] | np.ndarray) -> "CovariateMatrix":
        """Select rows and rescale, so the subset is again on [0, 1]."""
        sub = self.values[np.asarray(rows)]
        scaled, constant = minmax_scale(sub)
        names = tuple(self.column_names[j] for j in constant)
        return CovariateMatrix(scaled, self.column_kinds, self.column_names, names)


def minmax_scale(values: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Scale each column to [0, 1]; zero-range columns become all zeros.

    Returns the scaled copy and the indices of the constant columns.
    """
    values = np.asarray(values, dtype=np.float64)
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    span = hi - lo
    constant = [j for j in range(values.shape[1]) if span[j] == 0]
    safe = np.where(span == 0, 1.0, span)
    scaled = (values - lo) / safe
    scaled[:, constant] = 0.0
    return scaled, constant


def load_mapping(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        mapping = yaml.safe_load(fh) or {}
    if not isinstance(mapping, dict):
        raise DataError(f"column mapping {path} must be a key-value document")
    return mapping


def _is_number(text: str) -> bool:
    try:
        return math.isfinite(float(text))
    except ValueError:
        return False


def load_covariates(
    path: str | Path, mapping: Mapping | str | Path | None = None
) -> CovariateMatrix:
    """Read a comma-separated covariate table with a header row.

    ``mapping`` may name the feature columns (``features``) and which of
    them are discrete (``discrete``); it may be a dict or a YAML file path.
    Without it every column is a feature, and a column is discrete when any
    of its cells is non-numeric. Discrete columns are coded by order of first
    appearance; all columns are then min-max scaled.
    """
    path = Path(path)
    if mapping is not None and not isinstance(mapping, Mapping):
        mapping = load_mapping(mapping)
    mapping = dict(mapping or {})

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if r]

    features = list(mapping.get("features") or header)
    missing = [c for c in features if c not in header]
    if missing:
        raise DataError(f"feature columns not in header: {missing}")
    if not features:
        raise DataError(f"{path} has no usable feature column")
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"row {i} has {len(r)} cells, header has {len(header)}")

    position = {name: header.index(name) for name in features}
    if "discrete" in mapping:
        discrete = set(mapping["discrete"] or [])
    else:
        discrete = {
            c for c in features if not all(_is_number(r[position[c]].strip()) for r in rows)
        }

    raw = np.empty((len(rows), len(features)), dtype=np.float64)
    kinds = []
    for j, name in enumerate(features):
        col = position[name]
        if name in discrete:
            kinds.append(DISCRETE)
            codes: dict[str, int] = {}
            for i, r in enumerate(rows):
                cell = r[col].strip()
                if cell == "":
                    raise ParseError(i + 1, name, r[col])
                raw[i, j] = codes.setdefault(cell, len(codes))
        else:
            kinds.append(CONTINUOUS)
            for i, r in enumerate(rows):
                cell = r[col].strip()
                if not _is_number(cell):
                    raise ParseError(i + 1, name, r[col])
                raw[i, j] = float(cell)

    if raw.shape[0] < 2:
        raise DataError(f"{path} needs at least two data rows")
    scaled, constant = minmax_scale(raw)
    constant_names = tuple(features[j] for j in constant)
    if constant_names:
        warnings.warn(
            f"constant columns scaled to zero: {list(constant_names)}", ConstantColumnWarning
        )
    return CovariateMatrix(scaled, tuple(kinds), tuple(features), constant_names)


def synthesize_covariates(
    n: int, d: int = 8, n_discrete: int = 7, seed: int = 0, levels: int = 4
) -> CovariateMatrix:
    """Stand-in covariates: uniform continuous columns followed by discrete
    columns uniform over ``levels`` equispaced values in [0, 1]."""
    if not 0 <= n_discrete <= d:
        raise ValueError(f"n_discrete must lie in [0, d], got {n_discrete} with d={d}")
    rng = np.random.default_rng(seed)
    n_cont = d - n_discrete
    cont = rng.random((n, n_cont))
    disc = rng.integers(0, levels, size=(n, n_discrete)) / (levels - 1)
    values = np.hstack([cont, disc])
    kinds = (CONTINUOUS,) * n_cont + (DISCRETE,) * n_discrete
    names = tuple(f"x{j + 1}" for j in range(d))
    return CovariateMatrix(values, kinds, names)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split(n: int, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> SplitIndices:
    """Shuffle 0..n-1 and cut at floor(r_train*n) and floor(r_train*n)+floor(r_val*n)."""
    if n < 3:
        raise ValueError(f"need n >= 3 to split, got {n}")
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return SplitIndices(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:n_train + n_val]),
        np.sort(perm[n_train + n_val:]),
    )
