"""Reader/writer for the binary array interchange format used on disk.

Files carry the magic ``\\x93NUMPY``, format version 1.0, a header dict
with dtype descriptor, order flag and shape, then raw C-order data.  Only
little-endian float32/float64 C-order arrays are accepted; float32 loads
are widened to float64 so all in-memory arithmetic stays 64-bit.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = ["BadTensorFile", "read_tensor", "write_tensor", "read_header"]

MAGIC = b"\x93NUMPY"
_DTYPES = {"<f4": np.float32, "<f8": np.float64}


class BadTensorFile(ValidationError):
    """Tensor file failed a format check."""


def _parse_header(path: Path, fh) -> tuple[tuple[int, ...], str]:
    magic = fh.read(6)
    if magic != MAGIC:
        raise BadTensorFile(f"{path}: bad magic {magic!r}")
    version = fh.read(2)
    if len(version) != 2 or version[0] != 1:
        raise BadTensorFile(f"{path}: unsupported format version {tuple(version)}")
    (header_len,) = struct.unpack("<H", fh.read(2))
    header = fh.read(header_len).decode("latin1")
    try:
        meta = ast.literal_eval(header)
    except (ValueError, SyntaxError) as exc:
        raise BadTensorFile(f"{path}: unparseable header") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise BadTensorFile(f"{path}: malformed header dict")
    if meta["descr"] not in _DTYPES:
        raise BadTensorFile(f"{path}: unsupported dtype {meta['descr']!r}")
    if meta["fortran_order"] is not False:
        raise BadTensorFile(f"{path}: fortran_order=True is not supported")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise BadTensorFile(f"{path}: bad shape {shape!r}")
    return shape, meta["descr"]


def read_header(path) -> tuple[tuple[int, ...], str]:
    """Shape and dtype descriptor without loading the data."""
    path = Path(path)
    with open(path, "rb") as fh:
        return _parse_header(path, fh)


def read_tensor(path) -> np.ndarray:
    """Load an array, widening float32 to float64."""
    path = Path(path)
    with open(path, "rb") as fh:
        shape, descr = _parse_header(path, fh)
        raw = fh.read()
    dtype = _DTYPES[descr]
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != count * dtype().itemsize:
        raise BadTensorFile(f"{path}: data length {len(raw)} != header shape {shape}")
    data = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return np.ascontiguousarray(data, dtype=np.float64)


def write_tensor(path, value, dtype: str = "float64") -> None:
    """Write an array as version 1.0, C order, little-endian float32/float64."""
    value = np.asarray(value)
    np_dtype = {"float32": np.float32, "float64": np.float64}.get(dtype)
    if np_dtype is None:
        raise ValidationError(f"unsupported write dtype {dtype!r}")
    arr = np.ascontiguousarray(value, dtype=np_dtype)
    descr = "<f4" if np_dtype is np.float32 else "<f8"
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {arr.shape}, }}"
    prefix_len = len(MAGIC) + 2 + 2
    pad = (64 - (prefix_len + len(header) + 1) % 64) % 64
    header = header + " " * pad + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))
