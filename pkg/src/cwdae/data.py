"""Schema handling, CSV ingestion and the one-hot / z-score encoding.

Schema files are line oriented, one column per line::

    # comments and blank lines are ignored
    age,continuous
    rooms,ordinal          # optional third field: decimals kept at synthesis (default 1)
    city,discrete,north|south|east

Column order in the file fixes the order of the encoded vector: a continuous
or ordinal column takes one slot, a discrete column with T levels takes T
one-hot slots, so ``D = |I_c| + sum_j T_j``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

KINDS = ("continuous", "ordinal", "discrete")


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    levels: tuple[str, ...] = ()
    decimals: int | None = None

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def width(self) -> int:
        return len(self.levels) if self.is_discrete else 1

    def to_line(self) -> str:
        if self.is_discrete:
            return f"{self.name},discrete,{'|'.join(self.levels)}"
        if self.kind == "ordinal" and self.decimals is not None:
            return f"{self.name},ordinal,{self.decimals}"
        return f"{self.name},{self.kind}"


@dataclass(frozen=True)
class TabularSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise SchemaError("schema has no columns")
        seen = set()
        for col in self.columns:
            if not col.name or any(c in col.name for c in ",\n\r"):
                raise SchemaError(f"invalid column name {col.name!r}")
            if col.name in seen:
                raise SchemaError(f"duplicate column name {col.name!r}")
            seen.add(col.name)
            if col.kind not in KINDS:
                raise SchemaError(f"column {col.name!r}: unknown kind {col.kind!r}")
            if col.is_discrete:
                if len(col.levels) < 2:
                    raise SchemaError(f"column {col.name!r}: discrete columns need at least 2 levels")
                if len(set(col.levels)) != len(col.levels):
                    raise SchemaError(f"column {col.name!r}: repeated level")
            elif col.levels:
                raise SchemaError(f"column {col.name!r}: only discrete columns carry levels")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def continuous(self) -> list[Column]:
        """Continuous and ordinal columns (both are modelled by quantile heads)."""
        return [c for c in self.columns if not c.is_discrete]

    @property
    def discrete(self) -> list[Column]:
        return [c for c in self.columns if c.is_discrete]

    @property
    def D(self) -> int:
        return sum(c.width for c in self.columns)

    def slices(self) -> dict[str, slice]:
        """Position of every column inside the encoded vector."""
        out, pos = {}, 0
        for c in self.columns:
            out[c.name] = slice(pos, pos + c.width)
            pos += c.width
        return out

    def to_text(self) -> str:
        return "".join(c.to_line() + "\n" for c in self.columns)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "TabularSchema":
        cols = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 2 or len(parts) > 3:
                raise SchemaError(f"line {lineno}: expected 'name,kind[,extra]', got {raw!r}")
            name, kind = parts[0], parts[1]
            if kind not in KINDS:
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
            extra = parts[2] if len(parts) == 3 else None
            if kind == "discrete":
                if not extra:
                    raise SchemaError(f"column {name!r}: discrete columns need at least 2 levels")
                cols.append(Column(name, kind, tuple(extra.split("|"))))
            elif kind == "ordinal":
                cols.append(Column(name, kind, decimals=None if extra is None else int(extra)))
            else:
                if extra:
                    raise SchemaError(f"column {name!r}: continuous columns take no extra field")
                cols.append(Column(name, kind))
        return cls(tuple(cols))

    @classmethod
    def infer(cls, df: pd.DataFrame) -> "TabularSchema":
        """Numeric dtypes become continuous, everything else discrete."""
        cols = []
        for name in df.columns:
            s = df[name]
            if pd.api.types.is_numeric_dtype(s) and not pd.api.types.is_bool_dtype(s):
                cols.append(Column(str(name), "continuous"))
            else:
                cols.append(Column(str(name), "discrete", tuple(sorted(s.astype(str).unique()))))
        return cls(tuple(cols))


def load_schema(path) -> TabularSchema:
    return TabularSchema.from_text(Path(path).read_text(encoding="utf-8"))


def save_schema(schema: TabularSchema, path) -> None:
    Path(path).write_text(schema.to_text(), encoding="utf-8")


def read_table(path, schema: TabularSchema) -> pd.DataFrame:
    """Read a CSV with a header matching the schema; no missing values allowed."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    return coerce_table(df, schema)


def coerce_table(df: pd.DataFrame, schema: TabularSchema) -> pd.DataFrame:
    """Validate a raw table against ``schema`` and fix column dtypes."""
    missing = [n for n in schema.names if n not in df.columns]
    if missing:
        raise DataError(f"columns missing from table: {missing}")
    out = {}
    for col in schema.columns:
        s = df[col.name]
        if col.is_discrete:
            s = s.astype(str)
            bad = ~s.isin(col.levels)
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise DataError(f"row {row}, column {col.name!r}: unknown level {s.iloc[row]!r}")
            out[col.name] = s.to_numpy(dtype=object)
        else:
            raw = s.replace("", np.nan) if s.dtype == object else s
            vals = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                row = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise DataError(f"row {row}, column {col.name!r}: missing or non-numeric value")
            out[col.name] = vals
    return pd.DataFrame(out, columns=schema.names)


class TabularEncoder(TransformerMixin, BaseEstimator):
    """z-score continuous columns and one-hot encode discrete ones.

    Standardization uses the population (1/n) standard deviation of the rows
    passed to ``fit``; later ``transform`` calls never touch the statistics.
    """

    def __init__(self, schema: TabularSchema | None = None):
        self.schema = schema

    def fit(self, X, y=None):
        schema = self.schema if self.schema is not None else TabularSchema.infer(X)
        df = coerce_table(pd.DataFrame(X), schema)
        self.schema_ = schema
        names = [c.name for c in schema.continuous]
        self.mean_ = np.array([df[n].mean() for n in names], dtype=np.float64)
        self.scale_ = np.array([df[n].std(ddof=0) for n in names], dtype=np.float64)
        const = [n for n, s in zip(names, self.scale_) if not s > 0]
        if const:
            raise DataError(f"constant continuous column(s) {const} cannot be standardized")
        self.n_features_out_ = schema.D
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "mean_")
        df = coerce_table(pd.DataFrame(X), self.schema_)
        out = np.zeros((len(df), self.schema_.D))
        slices = self.schema_.slices()
        ci = 0
        for col in self.schema_.columns:
            sl = slices[col.name]
            if col.is_discrete:
                codes = pd.Categorical(df[col.name], categories=col.levels).codes
                out[np.arange(len(df)), sl.start + codes] = 1.0
            else:
                out[:, sl.start] = (df[col.name].to_numpy() - self.mean_[ci]) / self.scale_[ci]
                ci += 1
        return out

    def inverse_transform(self, Z) -> pd.DataFrame:
        check_is_fitted(self, "mean_")
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.schema_.D:
            raise DataError(f"expected {self.schema_.D} encoded columns, got shape {Z.shape}")
        slices = self.schema_.slices()
        out = {}
        ci = 0
        for col in self.schema_.columns:
            sl = slices[col.name]
            if col.is_discrete:
                idx = np.argmax(Z[:, sl], axis=1)
                out[col.name] = np.asarray(col.levels, dtype=object)[idx]
            else:
                out[col.name] = Z[:, sl.start] * self.scale_[ci] + self.mean_[ci]
                ci += 1
        return pd.DataFrame(out, columns=self.schema_.names)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "mean_")
        names = []
        for col in self.schema_.columns:
            if col.is_discrete:
                names.extend(f"{col.name}={lvl}" for lvl in col.levels)
            else:
                names.append(col.name)
        return np.asarray(names, dtype=object)


@dataclass
class EncodedDataset:
    matrix: np.ndarray
    encoder: TabularEncoder
    frame: pd.DataFrame = field(repr=False)

    @property
    def schema(self) -> TabularSchema:
        return self.encoder.schema_

    def __len__(self) -> int:
        return self.matrix.shape[0]


def encode(source, schema: TabularSchema, fit_stats: bool = True,
           encoder: TabularEncoder | None = None) -> EncodedDataset:
    """Encode a CSV path (or an already loaded frame).

    With ``fit_stats=False`` the statistics of ``encoder`` (fitted on the
    training rows) are applied unchanged.
    """
    df = source if isinstance(source, pd.DataFrame) else read_table(source, schema)
    df = coerce_table(df, schema)
    if fit_stats:
        encoder = TabularEncoder(schema).fit(df)
    elif encoder is None:
        raise DataError("fit_stats=False needs a fitted encoder")
    return EncodedDataset(encoder.transform(df), encoder, df)


def split(df: pd.DataFrame, train_fraction: float, seed: int = 0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Seeded random split into disjoint train / test frames."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(df)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"split of {n} rows at {train_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    train = df.iloc[np.sort(perm[:n_train])].reset_index(drop=True)
    test = df.iloc[np.sort(perm[n_train:])].reset_index(drop=True)
    return train, test


def split_files(train_path, test_path, schema: TabularSchema) -> tuple[EncodedDataset, EncodedDataset]:
    """Explicit train/test files; statistics are fitted on the training file only."""
    train = encode(train_path, schema, fit_stats=True)
    test = encode(test_path, schema, fit_stats=False, encoder=train.encoder)
    if len(train) == 0 or len(test) == 0:
        raise DataError("empty train or test file")
    return train, test


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

