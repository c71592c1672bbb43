"""Checkpoint format: byte-stable round trips, dtype handling, corruption."""

import numpy as np
import pytest

from vqbridge.checkpoint import (
    MAGIC,
    load_checkpoint,
    restore_rng,
    rng_state,
    save_checkpoint,
)
from vqbridge.errors import ContractViolation, DataError


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "embed.weight": rng.normal(size=(7, 4)),
        "out.bias": rng.normal(size=(7,)),
        "adam.t": np.asarray(3.0),
    }


def test_round_trip_values_meta_dtype(tmp_path):
    path = tmp_path / "a.ckpt"
    arrays = sample_arrays()
    meta = {"step": 3, "config": {"d_model": 4}, "rng": {"x": 1}}
    save_checkpoint(path, arrays, meta, dtype="f64")
    loaded, meta2, dtype = load_checkpoint(path)
    assert dtype == "f64"
    assert meta2 == meta
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].shape == arrays[name].shape
        assert np.array_equal(loaded[name], arrays[name])
        assert loaded[name].dtype == np.float64


def test_save_load_save_is_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    arrays = sample_arrays()
    meta = {"step": 1, "note": "x"}
    save_checkpoint(p1, arrays, meta)
    loaded, meta2, _ = load_checkpoint(p1)
    save_checkpoint(p2, loaded, meta2)
    assert p1.read_bytes() == p2.read_bytes()


def test_f32_export_rounds_and_shrinks(tmp_path):
    p64, p32 = tmp_path / "a64.ckpt", tmp_path / "a32.ckpt"
    arrays = sample_arrays()
    save_checkpoint(p64, arrays, {}, dtype="f64")
    save_checkpoint(p32, arrays, {}, dtype="f32")
    assert p32.stat().st_size < p64.stat().st_size
    loaded, _, dtype = load_checkpoint(p32)
    assert dtype == "f32"
    for name in arrays:
        assert loaded[name].dtype == np.float64  # widened on load
        assert np.array_equal(loaded[name], arrays[name].astype(np.float32))


def test_zero_dim_array_round_trip(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, {"t": np.asarray(42.0)}, {})
    loaded, _, _ = load_checkpoint(path)
    assert loaded["t"].shape == ()
    assert float(loaded["t"]) == 42.0


def test_bad_magic_raises(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, sample_arrays(), {})
    raw = path.read_bytes()
    path.write_bytes(raw.replace(MAGIC.encode(), b"other-format v9", 1))
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_truncated_blob_raises(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, sample_arrays(), {})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_trailing_bytes_raise(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, sample_arrays(), {})
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_missing_blob_marker_raises(tmp_path):
    path = tmp_path / "a.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_rejects_unknown_dtype_and_empty(tmp_path):
    with pytest.raises(ContractViolation):
        save_checkpoint(tmp_path / "x.ckpt", sample_arrays(), {}, dtype="f16")
    with pytest.raises(ContractViolation):
        save_checkpoint(tmp_path / "x.ckpt", {}, {})


def test_array_name_with_space_rejected(tmp_path):
    with pytest.raises(ContractViolation):
        save_checkpoint(tmp_path / "x.ckpt", {"bad name": np.zeros(2)}, {})


def test_rng_state_round_trip_continues_stream():
    rng = np.random.default_rng(123)
    rng.random(17)  # advance
    state = rng_state(rng)
    expected = rng.random(5)
    resumed = restore_rng(state)
    assert np.array_equal(resumed.random(5), expected)


def test_rng_state_survives_json(tmp_path):
    import json

    rng = np.random.default_rng(9)
    rng.integers(0, 100, 11)
    state = json.loads(json.dumps(rng_state(rng)))
    expected = rng.random(4)
    assert np.array_equal(restore_rng(state).random(4), expected)
