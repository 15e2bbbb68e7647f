"""Synthetic table generation from a trained model.

Rows are produced by drawing z from the prior, evaluating each continuous
column's quantile function at a uniform level, and drawing each discrete
column with the Gumbel-max trick. Values are mapped back to the original
units and level labels before they leave this module.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import SchemaError, TabularSchema
from .heads import gumbel_max_sample, segment_weights
from .model import CwdaeModel, Streams, decoder_heads, head_layout

DEFAULT_ORDINAL_DECIMALS = 1
GRID_SIZE = 41
GRID_LIMIT = 3.0


@dataclass(frozen=True)
class SynthesisRequest:
    n: int
    seed: int = 0
    median_only: bool = False

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be non-negative, got {self.n}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_schema(model: CwdaeModel, schema: TabularSchema | None) -> None:
    if schema is not None and schema.digest() != model.schema.digest():
        raise SchemaError("model was trained against a different schema")


def decode_rows(model: CwdaeModel, z: np.ndarray, alpha=None, streams: Streams | None = None,
                mode_for_discrete: bool = False) -> pd.DataFrame:
    """Decode latent rows into a table in original units.

    ``alpha`` fixes the quantile level of every continuous column (e.g. 0.5);
    otherwise it is drawn per row and column from ``streams``. Discrete
    columns take their most probable level when ``mode_for_discrete`` is set
    and a Gumbel-max draw otherwise.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1, model.latent_dim)
    n = z.shape[0]
    out = decoder_heads(model, z).data
    cols = {}
    ci = 0
    for j, (col, sl) in enumerate(head_layout(model.schema, model.n_knots)):
        block = out[:, sl]
        if col.is_discrete:
            if mode_for_discrete:
                idx = np.argmax(block, axis=1)
            else:
                idx = gumbel_max_sample(_softmax(block), streams.rng("gumbel", j))
            cols[col.name] = np.asarray(col.levels, dtype=object)[idx]
        else:
            if alpha is None:
                a = streams.rng("alpha", j).uniform(0.0, 1.0, size=n)
            else:
                a = np.full(n, float(alpha))
            w = segment_weights(a, model.n_knots)
            q = block[:, 0] + (np.logaddexp(0.0, block[:, 1:]) * w).sum(axis=1)
            v = q * model.scale[ci] + model.mean[ci]
            if col.kind == "ordinal":
                v = np.round(v, DEFAULT_ORDINAL_DECIMALS if col.decimals is None else col.decimals)
            cols[col.name] = v
            ci += 1
    return pd.DataFrame(cols, columns=model.schema.names)


def generate(model: CwdaeModel, req: SynthesisRequest, schema: TabularSchema | None = None) -> pd.DataFrame:
    """Draw ``req.n`` synthetic rows; identical requests give identical tables."""
    _check_schema(model, schema)
    streams = Streams(req.seed, "generate")
    z = streams.rng("z").standard_normal((req.n, model.latent_dim))
    return decode_rows(model, z, 0.5 if req.median_only else None, streams)


def latent_grid(size: int = GRID_SIZE, limit: float = GRID_LIMIT) -> np.ndarray:
    """size x size points over [-limit, limit]^2, z1 varying slowest."""
    axis = np.linspace(-limit, limit, size)
    z1, z2 = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([z1.ravel(), z2.ravel()])


def emit_latent_scatter(model: CwdaeModel, mode: str = "prior", n: int = 2000, seed: int = 0,
                        schema: TabularSchema | None = None, grid_size: int = GRID_SIZE) -> pd.DataFrame:
    """Latent coordinates next to their median-decoded rows.

    ``mode="prior"`` draws ``n`` points from N(0, I); ``mode="grid"`` uses a
    regular grid of ``grid_size``^2 points over [-3, 3]^2.
    """
    _check_schema(model, schema)
    if model.latent_dim != 2:
        raise ValueError(f"latent scatter needs a 2-D latent space, got d = {model.latent_dim}")
    if mode == "prior":
        z = Streams(seed, "scatter").rng("z").standard_normal((n, 2))
    elif mode == "grid":
        z = latent_grid(grid_size)
    else:
        raise ValueError(f"mode must be 'prior' or 'grid', got {mode!r}")
    table = decode_rows(model, z, 0.5, mode_for_discrete=True)
    table.insert(0, "z2", z[:, 1])
    table.insert(0, "z1", z[:, 0])
    return table


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_table(df: pd.DataFrame, path, schema: TabularSchema | None = None) -> None:
    """RFC-4180 CSV; floats round-trip (17 significant digits), ordinals keep their decimals."""
    kinds = {c.name: c for c in schema.columns} if schema is not None else {}
    formatters = []
    for name in df.columns:
        col = kinds.get(name)
        if col is not None and col.is_discrete:
            formatters.append(str)
        elif col is not None and col.kind == "ordinal":
            d = DEFAULT_ORDINAL_DECIMALS if col.decimals is None else col.decimals
            formatters.append(lambda v, d=d: format(float(v), f".{d}f"))
        elif pd.api.types.is_float_dtype(df[name]):
            formatters.append(_fmt)
        else:
            formatters.append(str)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(df.columns))
        for row in df.itertuples(index=False, name=None):
            w.writerow([f(v) for f, v in zip(formatters, row)])
