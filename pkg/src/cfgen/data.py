"""Dataset ingestion, encoding, robust scale statistics, and splitting.

Continuous columns are min-max scaled to [0, 1] from observed extrema;
categorical columns become one-hot blocks in first-appearance order. The
encoded layout is: all continuous columns (schema order), then the one-hot
blocks. Decoding soft one-hot blocks takes the argmax.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConfigurationError, ParseError, RangeError

log = logging.getLogger(__name__)

# Education-style rank scores: higher means more advanced. Used for ordered
# categorical constraints where "decrease" must be well defined.
EDUCATION_RANKS = {
    "HS-Grad": 0.0, "School": 0.0,
    "Bachelors": 1.0, "Assoc": 1.0, "Some-college": 1.0,
    "Masters": 2.0,
    "Prof-school": 3.0, "Doctorate": 3.0,
}


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "continuous" | "categorical"
    min: float | None = None
    max: float | None = None
    categories: tuple[str, ...] | None = None
    ranks: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "continuous":
            if self.min is None or self.max is None or not self.min < self.max:
                raise ConfigurationError(
                    f"column {self.name!r}: continuous needs min < max, got {self.min}, {self.max}")
        elif self.kind == "categorical":
            if not self.categories:
                raise ConfigurationError(f"column {self.name!r}: no categories")
            if len(set(self.categories)) != len(self.categories):
                raise ConfigurationError(f"column {self.name!r}: duplicate categories")
            if self.ranks is not None and len(self.ranks) != len(self.categories):
                raise ConfigurationError(
                    f"column {self.name!r}: rank vector length != category count")
        else:
            raise ConfigurationError(f"column {self.name!r}: unknown kind {self.kind!r}")

    @property
    def width(self) -> int:
        return 1 if self.kind == "continuous" else len(self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[ColumnSpec, ...]
    target: str

    @property
    def continuous(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind == "continuous"]

    @property
    def categorical(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind == "categorical"]

    @property
    def encoded_width(self) -> int:
        return sum(c.width for c in self.columns_encoded_order())

    def columns_encoded_order(self) -> list[ColumnSpec]:
        return self.continuous + self.categorical

    def block_slices(self) -> dict[str, slice]:
        """Column name -> slice into the encoded vector."""
        out: dict[str, slice] = {}
        off = 0
        for c in self.columns_encoded_order():
            out[c.name] = slice(off, off + c.width)
            off += c.width
        return out

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise ConfigurationError(f"unknown column {name!r}")

    def to_config(self) -> dict:
        cols = []
        for c in self.columns:
            d: dict = {"name": c.name, "kind": c.kind}
            if c.kind == "continuous":
                d["min"], d["max"] = c.min, c.max
            else:
                d["categories"] = list(c.categories)
                if c.ranks is not None:
                    d["ranks"] = list(c.ranks)
            cols.append(d)
        return {"target": self.target, "columns": cols}

    @staticmethod
    def from_config(cfg: dict) -> "FeatureSchema":
        cols = []
        for d in cfg["columns"]:
            if d["kind"] == "continuous":
                cols.append(ColumnSpec(d["name"], "continuous", min=d["min"], max=d["max"]))
            else:
                cols.append(ColumnSpec(d["name"], "categorical",
                                       categories=tuple(d["categories"]),
                                       ranks=tuple(d["ranks"]) if d.get("ranks") else None))
        return FeatureSchema(columns=tuple(cols), target=cfg["target"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_config(), indent=2))

    @staticmethod
    def load(path: str | Path) -> "FeatureSchema":
        return FeatureSchema.from_config(json.loads(Path(path).read_text()))


def fit_schema(df: pd.DataFrame, kinds: dict[str, str], target: str,
               rank_vectors: dict[str, dict[str, float] | str] | None = None
               ) -> FeatureSchema:
    """Fit observed extrema / category lists. ``kinds`` declares each feature
    column; ``rank_vectors`` may map a categorical column to a score dict or
    to the string "education" for the built-in education ranking."""
    if df.empty:
        raise ConfigurationError("cannot fit a schema on an empty table")
    rank_vectors = rank_vectors or {}
    cols: list[ColumnSpec] = []
    for name, kind in kinds.items():
        if name == target:
            continue
        series = df[name]
        if kind == "continuous":
            vals = pd.to_numeric(series, errors="coerce")
            if vals.isna().any():
                row = int(vals.index[vals.isna()][0])
                raise ParseError(f"column {name!r}, row {row}: non-numeric value")
            cols.append(ColumnSpec(name, "continuous",
                                   min=float(vals.min()), max=float(vals.max())))
        else:
            cats = tuple(pd.unique(series.astype(str)))
            ranks = None
            rv = rank_vectors.get(name)
            if rv == "education":
                rv = EDUCATION_RANKS
            if rv is not None:
                missing = [c for c in cats if c not in rv]
                if missing:
                    raise ConfigurationError(
                        f"column {name!r}: no rank for categories {missing}")
                ranks = tuple(float(rv[c]) for c in cats)
            cols.append(ColumnSpec(name, "categorical", categories=cats, ranks=ranks))
    return FeatureSchema(columns=tuple(cols), target=target)


def encode(schema: FeatureSchema, df: pd.DataFrame, mode: str = "strict") -> np.ndarray:
    """Rows -> (n, encoded_width) float64 matrix.

    ``mode="strict"`` raises RangeError on out-of-range continuous values
    (ingestion); ``mode="clamp"`` clips with a warning (generation time).
    """
    n = len(df)
    out = np.zeros((n, schema.encoded_width))
    slices = schema.block_slices()
    for c in schema.continuous:
        v = pd.to_numeric(df[c.name], errors="coerce").to_numpy(dtype=np.float64)
        if np.isnan(v).any():
            row = int(np.flatnonzero(np.isnan(v))[0])
            raise ParseError(f"column {c.name!r}, row {row}: non-numeric value")
        scaled = (v - c.min) / (c.max - c.min)
        if scaled.min() < 0.0 or scaled.max() > 1.0:
            if mode == "strict":
                raise RangeError(
                    f"column {c.name!r}: value outside observed range [{c.min}, {c.max}]")
            log.warning("column %r: clamping %d out-of-range values",
                        c.name, int(((scaled < 0) | (scaled > 1)).sum()))
            scaled = np.clip(scaled, 0.0, 1.0)
        out[:, slices[c.name]] = scaled[:, None]
    for c in schema.categorical:
        lookup = {cat: i for i, cat in enumerate(c.categories)}
        for r, val in enumerate(df[c.name].astype(str)):
            if val not in lookup:
                raise ParseError(f"column {c.name!r}, row {r}: unknown category {val!r}")
            out[r, slices[c.name].start + lookup[val]] = 1.0
    return out


def decode(schema: FeatureSchema, X: np.ndarray) -> pd.DataFrame:
    """Encoded (possibly soft) matrix -> raw rows. Continuous entries are
    clamped to [0, 1] before unscaling; soft one-hot blocks take the argmax."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    slices = schema.block_slices()
    data: dict[str, object] = {}
    for c in schema.continuous:
        v = np.clip(X[:, slices[c.name]].reshape(-1), 0.0, 1.0)
        data[c.name] = c.min + v * (c.max - c.min)
    for c in schema.categorical:
        idx = np.argmax(X[:, slices[c.name]], axis=1)
        data[c.name] = [c.categories[i] for i in idx]
    # preserve the schema's declared column order
    return pd.DataFrame({c.name: data[c.name] for c in schema.columns})


def rank_scores(schema: FeatureSchema, name: str, values: Sequence[str]) -> np.ndarray:
    """Map category labels to their rank scores."""
    c = schema.column(name)
    if c.ranks is None:
        raise ConfigurationError(f"column {name!r} has no rank vector")
    lookup = dict(zip(c.categories, c.ranks))
    return np.array([lookup[str(v)] for v in values], dtype=np.float64)


MAD_FLOOR = 1e-4  # constant columns would otherwise blow up proximity


@dataclass(frozen=True)
class MadStats:
    """Per continuous feature: median absolute deviation, raw units."""
    values: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def mad(df: pd.DataFrame, schema: FeatureSchema) -> MadStats:
    if len(df) < 1:
        raise ConfigurationError("MAD needs at least one row")
    out: dict[str, float] = {}
    for c in schema.continuous:
        v = pd.to_numeric(df[c.name]).to_numpy(dtype=np.float64)
        m = float(np.median(np.abs(v - np.median(v))))
        out[c.name] = m if m > 0.0 else MAD_FLOOR
    return MadStats(out)


def adult_filter(df: pd.DataFrame, age_col: str = "Age", target: str = "y") -> pd.DataFrame:
    """Keep rows with (age > 35 and y = 0) or (age < 45 and y = 1)."""
    age = pd.to_numeric(df[age_col])
    y = pd.to_numeric(df[target])
    keep = ((age > 35) & (y == 0)) | ((age < 45) & (y == 1))
    return df[keep].reset_index(drop=True)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def split(n: int, seed: int) -> SplitIndices:
    """Seeded shuffle, then an 80/10/10 cut."""
    if n < 10:
        raise ConfigurationError("need at least 10 rows to split 80/10/10")
    idx = np.random.default_rng(seed).permutation(n)
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    return SplitIndices(train=idx[:n_train],
                        validation=idx[n_train:n_train + n_val],
                        test=idx[n_train + n_val:])
