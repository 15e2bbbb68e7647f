import numpy as np
import pytest

from cwdae.checkpoint import CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from cwdae.data import Column, TabularSchema, encode
from cwdae.model import Streams, TrainConfig, loss, train
from test_model import MIXED, mixed_frame


@pytest.fixture(scope="module")
def trained():
    ds = encode(mixed_frame(40, seed=2), MIXED)
    model, _ = train(ds, TrainConfig(epochs=2, batch_size=20, seed=1))
    return model, ds


def test_save_load_save_is_byte_identical(trained, tmp_path):
    model, _ = trained
    save_checkpoint(model, tmp_path / "a.ckpt")
    again = load_checkpoint(tmp_path / "a.ckpt", MIXED)
    save_checkpoint(again, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert again.n_train == 40 and again.config == model.config


def test_loaded_model_gives_identical_loss(trained):
    model, ds = trained
    again = from_bytes(to_bytes(model))
    a = loss(model, ds.matrix, model.config, 1.0, Streams(5))[1]
    b = loss(again, ds.matrix, model.config, 1.0, Streams(5))[1]
    assert a == b


def test_edited_schema_hash_rejected(trained):
    raw = to_bytes(trained[0])
    start = raw.index(b"schema_sha256: ") + len(b"schema_sha256: ")
    flipped = b"0" if raw[start:start + 1] != b"0" else b"1"
    with pytest.raises(CheckpointError, match="hash"):
        from_bytes(raw[:start] + flipped + raw[start + 1:])


def test_other_schema_rejected(trained):
    other = TabularSchema((Column("a", "continuous"),))
    with pytest.raises(CheckpointError, match="different schema"):
        from_bytes(to_bytes(trained[0]), other)


@pytest.mark.parametrize("edit", [
    lambda raw: raw[:-8],
    lambda raw: raw + b"\0",
    lambda raw: raw.replace(b"CWDAE-CKPT 1", b"CWDAE-CKPT 9", 1),
    lambda raw: raw.replace(b"CWDAE-CKPT", b"NOPE-CKPT!", 1),
    lambda raw: raw[:raw.index(b"\nEND\n")],
])
def test_corrupt_files_rejected(trained, edit):
    with pytest.raises(CheckpointError):
        from_bytes(edit(to_bytes(trained[0])))


def test_values_survive_exactly(trained):
    model, _ = trained
    again = from_bytes(to_bytes(model))
    for k in model.params:
        np.testing.assert_array_equal(model.params[k].data, again.params[k].data)
    np.testing.assert_array_equal(model.mean, again.mean)
    np.testing.assert_array_equal(model.scale, again.scale)
