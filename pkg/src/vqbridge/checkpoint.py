"""Checkpoint files: a text header followed by a little-endian float blob.

Header lines (UTF-8):

    vqbridge-checkpoint v1
    dtype=f32|f64
    meta=<one-line JSON: config, step, RNG states, anything the caller needs>
    n_arrays=<count>
    <name> <dim0> <dim1> ...        (one line per array, in blob order)
    blob:

The raw bytes of every array follow immediately after the ``blob:`` line,
concatenated in header order, little-endian, C-contiguous.  64-bit blobs
preserve training state exactly (resume is bit-identical); 32-bit blobs are
the compact export format.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError

MAGIC = "vqbridge-checkpoint v1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    meta: dict,
    dtype: str = "f64",
):
    if dtype not in _DTYPES:
        raise ContractViolation(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    if not arrays:
        raise ContractViolation("refusing to write an empty checkpoint")
    np_dtype = _DTYPES[dtype]
    lines = [MAGIC, f"dtype={dtype}", f"meta={json.dumps(meta, sort_keys=True)}",
             f"n_arrays={len(arrays)}"]
    blobs = []
    for name, arr in arrays.items():
        if "\n" in name or " " in name:
            raise ContractViolation(f"array name {name!r} must not contain spaces")
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(" ".join([name] + [str(d) for d in arr.shape]))
        blobs.append(np.ascontiguousarray(arr, dtype=np_dtype).tobytes())
    lines.append("blob:")
    payload = "\n".join(lines).encode("utf-8") + b"\n" + b"".join(blobs)
    Path(path).write_bytes(payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, str]:
    """Returns (arrays as float64, meta dict, stored dtype label)."""
    raw = Path(path).read_bytes()
    marker = b"\nblob:\n"
    cut = raw.find(marker)
    if cut < 0:
        raise DataError(f"{path}: not a checkpoint file (missing blob marker)")
    header = raw[:cut].decode("utf-8").splitlines()
    blob = raw[cut + len(marker):]
    if not header or header[0] != MAGIC:
        raise DataError(f"{path}: bad magic line {header[0] if header else '<empty>'!r}")

    fields = {}
    for line in header[1:4]:
        key, _, value = line.partition("=")
        fields[key] = value
    dtype = fields.get("dtype")
    if dtype not in _DTYPES:
        raise DataError(f"{path}: unknown dtype {dtype!r}")
    try:
        meta = json.loads(fields.get("meta", ""))
        n_arrays = int(fields.get("n_arrays", ""))
    except (json.JSONDecodeError, ValueError) as e:
        raise DataError(f"{path}: corrupt header: {e}") from None
    if len(header) != 4 + n_arrays:
        raise DataError(f"{path}: expected {n_arrays} array lines, found {len(header) - 4}")

    np_dtype = _DTYPES[dtype]
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for line in header[4:]:
        parts = line.split()
        name, shape = parts[0], tuple(int(d) for d in parts[1:])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np_dtype.itemsize
        if offset + nbytes > len(blob):
            raise DataError(f"{path}: blob truncated at array {name!r}")
        arr = np.frombuffer(blob, dtype=np_dtype, count=count, offset=offset)
        arrays[name] = arr.astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes after last array")
    return arrays, meta, dtype


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
