"""Versioned checkpoint container.

Layout: a UTF-8 text header terminated by a line ``END`` followed by the raw
little-endian float64 blocks in header order::

    CWDAE-CKPT 1
    schema_sha256: <hex>
    config: <json>
    n_train: <int>
    schema_lines: <k>
    <k schema lines>
    blocks: <m>
    <name> <d0>x<d1>...
    END
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import TabularSchema
from .model import CwdaeModel, TrainConfig

MAGIC = "CWDAE-CKPT"
VERSION = 1
_STATS = ("stats.mean", "stats.scale")


class CheckpointError(ValueError):
    pass


def _blocks(model: CwdaeModel) -> list[tuple[str, np.ndarray]]:
    out = [(k, t.data) for k, t in model.params.items()]
    out.append((_STATS[0], model.mean))
    out.append((_STATS[1], model.scale))
    return out


def to_bytes(model: CwdaeModel) -> bytes:
    schema_lines = model.schema.to_text().splitlines()
    blocks = _blocks(model)
    head = [f"{MAGIC} {VERSION}",
            f"schema_sha256: {model.schema.digest()}",
            "config: " + json.dumps(model.config.to_dict(), sort_keys=True),
            f"n_train: {int(model.n_train)}",
            f"schema_lines: {len(schema_lines)}",
            *schema_lines,
            f"blocks: {len(blocks)}"]
    for name, arr in blocks:
        head.append(f"{name} {'x'.join(str(d) for d in arr.shape)}")
    head.append("END")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in blocks)
    return ("\n".join(head) + "\n").encode("utf-8") + body


def save_checkpoint(model: CwdaeModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def _field(line: str, key: str) -> str:
    prefix = key + ": "
    if not line.startswith(prefix):
        raise CheckpointError(f"expected '{key}' in checkpoint header, got {line[:60]!r}")
    return line[len(prefix):]


def from_bytes(raw: bytes, schema: TabularSchema | None = None) -> CwdaeModel:
    """Parse a checkpoint; ``schema`` (if given) must hash to the stored value."""
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise CheckpointError("truncated checkpoint header")
    lines = raw[:end].decode("utf-8").split("\n")
    body = memoryview(raw)[end + len(b"\nEND\n"):]
    magic = lines[0].split(" ")
    if len(magic) != 2 or magic[0] != MAGIC:
        raise CheckpointError("not a CWDAE checkpoint")
    if magic[1] != str(VERSION):
        raise CheckpointError(f"unsupported checkpoint version {magic[1]} (expected {VERSION})")
    digest = _field(lines[1], "schema_sha256")
    cfg = TrainConfig(**json.loads(_field(lines[2], "config")))
    n_train = int(_field(lines[3], "n_train"))
    k = int(_field(lines[4], "schema_lines"))
    stored = TabularSchema.from_text("\n".join(lines[5:5 + k]))
    if stored.digest() != digest:
        raise CheckpointError("schema hash mismatch: checkpoint header is inconsistent")
    if schema is not None and schema.digest() != digest:
        raise CheckpointError("schema hash mismatch: checkpoint was trained on a different schema")
    m = int(_field(lines[5 + k], "blocks"))
    specs = lines[6 + k:6 + k + m]
    if len(specs) != m:
        raise CheckpointError("truncated block table")
    arrays, pos = {}, 0
    for spec in specs:
        name, dims = spec.rsplit(" ", 1)
        shape = tuple(int(d) for d in dims.split("x")) if dims else ()
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + size > len(body):
            raise CheckpointError(f"truncated data for block {name!r}")
        arrays[name] = np.frombuffer(body[pos:pos + size], dtype="<f8").astype(np.float64).reshape(shape)
        pos += size
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last block")
    mean, scale = arrays.pop(_STATS[0]), arrays.pop(_STATS[1])
    params = {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}
    model = CwdaeModel(stored, params, mean, scale, cfg.latent_dim, cfg.n_knots, n_train, cfg)
    expected = {**model.enc_spec.param_shapes("enc."), **model.dec_spec.param_shapes("dec.")}
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise CheckpointError("parameter blocks do not match the architecture implied by the schema")
    return model


def load_checkpoint(path, schema: TabularSchema | None = None) -> CwdaeModel:
    return from_bytes(Path(path).read_bytes(), schema)
