"""HSCK1 checkpoint container: an ordered list of named little-endian float32 tensors.

Layout::

    b"HSCK1"            magic
    u16                 format version (1)
    u32                 tensor count
    per tensor:
      u16 + utf8        name
      u8                dtype code (0 = float32)
      u8                rank
      u32 * rank        extents
      f32 * prod(ext)   row-major payload

All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from hspk.autograd import AdamState
from hspk.errors import FormatError

MAGIC = b"HSCK1"
VERSION = 1
ADAM_PREFIX = "__adam__/"


def dumps_checkpoint(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        encoded = name.encode("utf8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", 0, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads_checkpoint(buf: bytes, name: str = "<bytes>") -> dict[str, np.ndarray]:
    if buf[:5] != MAGIC:
        raise FormatError(f"{name}: not an HSCK1 checkpoint")
    version, count = struct.unpack_from("<HI", buf, 5)
    if version != VERSION:
        raise FormatError(f"{name}: unsupported checkpoint version {version}")
    pos = 11
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            key = buf[pos : pos + nlen].decode("utf8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if code != 0:
                raise FormatError(f"{name}: unknown dtype code {code} for {key!r}")
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise FormatError(f"{name}: truncated payload for {key!r}")
            if key in out:
                raise FormatError(f"{name}: duplicate tensor name {key!r}")
            out[key] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"{name}: truncated checkpoint") from exc
    if pos != len(buf):
        raise FormatError(f"{name}: {len(buf) - pos} trailing bytes")
    return out


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    try:
        path.write_bytes(dumps_checkpoint(arrays))
    except OSError as exc:
        raise FormatError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads_checkpoint(buf, str(path))


def adam_arrays(prefix: str, state: AdamState) -> dict[str, np.ndarray]:
    out = {f"{ADAM_PREFIX}{prefix}/t": np.array([state.t], dtype=np.float32)}
    for key, m in state.m.items():
        out[f"{ADAM_PREFIX}{prefix}/m/{key}"] = m
        out[f"{ADAM_PREFIX}{prefix}/v/{key}"] = state.v[key]
    return out


def restore_adam(prefix: str, arrays: dict[str, np.ndarray], state: AdamState) -> None:
    head = f"{ADAM_PREFIX}{prefix}/"
    if head + "t" not in arrays:
        return
    state.t = int(arrays[head + "t"][0])
    for key, arr in arrays.items():
        if key.startswith(head + "m/"):
            state.m[key[len(head) + 2 :]] = arr.copy()
        elif key.startswith(head + "v/"):
            state.v[key[len(head) + 2 :]] = arr.copy()
