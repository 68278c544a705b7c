"""Minimal reader/writer for ``.npy`` arrays and uncompressed ``.npz`` archives.

Supported element types: ``|u1``, ``<f4``, ``<f8``; C order only.  Compressed
archive members are rejected rather than inflated.
"""

from __future__ import annotations

import ast
import struct
import zipfile
from pathlib import Path

import numpy as np

from hspk.errors import FormatError

MAGIC = b"\x93NUMPY"
_DTYPES = {"|u1": np.uint8, "<u1": np.uint8, "u1": np.uint8, "<f4": np.float32, "<f8": np.float64}


def parse_header(text: str) -> tuple[np.dtype, bool, tuple[int, ...]]:
    """Parse the python-literal header dict into ``(dtype, fortran_order, shape)``."""
    try:
        meta = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unparseable npy header {text!r}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"npy header must have exactly descr/fortran_order/shape, got {meta!r}")
    descr = meta["descr"]
    if descr not in _DTYPES:
        raise FormatError(f"unsupported element type {descr!r}")
    shape = tuple(int(n) for n in meta["shape"])
    return np.dtype(_DTYPES[descr]), bool(meta["fortran_order"]), shape


def loads_npy(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    if buf[:6] != MAGIC:
        raise FormatError(f"{name}: bad magic, not an npy file")
    major = buf[6]
    if major == 1:
        (hlen,) = struct.unpack("<H", buf[8:10])
        start = 10
    elif major in (2, 3):
        (hlen,) = struct.unpack("<I", buf[8:12])
        start = 12
    else:
        raise FormatError(f"{name}: unsupported npy version {major}")
    header = buf[start : start + hlen].decode("latin1" if major < 3 else "utf8")
    dtype, fortran, shape = parse_header(header)
    if fortran:
        raise FormatError(f"{name}: fortran_order arrays are an unsupported layout")
    payload = buf[start + hlen :]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{name}: payload length {len(payload)} != expected {expected} for shape {shape}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_npy(path) -> np.ndarray:
    path = Path(path)
    return loads_npy(path.read_bytes(), str(path))


def dumps_npy(array: np.ndarray) -> bytes:
    arr = np.asarray(array, order="C")
    descr = {np.dtype(np.uint8): "|u1", np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}.get(arr.dtype)
    if descr is None:
        raise FormatError(f"cannot write element type {arr.dtype}")
    shape = repr(tuple(int(n) for n in arr.shape))
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}"
    # pad so the payload starts on a 64-byte boundary, newline-terminated
    total = len(MAGIC) + 4 + len(header) + 1
    header += " " * ((-total) % 64) + "\n"
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header.encode("latin1") + arr.astype(arr.dtype.newbyteorder("<")).tobytes()


def write_npy(path, array: np.ndarray) -> None:
    Path(path).write_bytes(dumps_npy(array))


def read_npz(path) -> dict[str, np.ndarray]:
    path = Path(path)
    out = {}
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a zip archive") from exc
    with zf:
        for info in zf.infolist():
            if info.compress_type != zipfile.ZIP_STORED:
                raise FormatError(
                    f"{path}: member {info.filename!r} is compressed; compressed archives unsupported; "
                    "re-save uncompressed (numpy.savez, not savez_compressed)"
                )
            key = info.filename[:-4] if info.filename.endswith(".npy") else info.filename
            out[key] = loads_npy(zf.read(info), f"{path}:{info.filename}")
    return out


def read_npy_archive(path) -> dict[str, np.ndarray]:
    """Read ``.npy`` or ``.npz`` into named arrays; ``uint8`` data is rescaled to [0, 1]."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(6)
    arrays = {"arr_0": read_npy(path)} if head == MAGIC else read_npz(path)
    return {k: (v.astype(np.float64) / 255.0 if v.dtype == np.uint8 else v) for k, v in arrays.items()}
