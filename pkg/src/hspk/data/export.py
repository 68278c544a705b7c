"""Binary PGM images and plain CSV tables."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hspk.errors import FormatError


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] to 0..255 with round-half-up: ``floor(v * 255 + 0.5)``."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"PGM export needs a 2-D image, got shape {img.shape}")
    data = img if img.dtype == np.uint8 else to_bytes(img)
    H, W = data.shape
    try:
        Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + data.tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 image with maxval 255; returns uint8."""
    path = Path(path)
    buf = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise FormatError(f"{path}: only binary P5 with maxval 255 is supported")
    W, H = int(tokens[1]), int(tokens[2])
    data = buf[pos + 1 :]
    if len(data) != W * H:
        raise FormatError(f"{path}: payload {len(data)} bytes, expected {W * H}")
    return np.frombuffer(data, dtype=np.uint8).reshape(H, W).copy()


def triptych(*images: np.ndarray, gap: int = 2) -> np.ndarray:
    """Side-by-side panels separated by white gaps, all resampled to the tallest extent."""
    H = max(im.shape[0] for im in images)
    panels = []
    for im in images:
        if im.shape[0] != H:
            f = H // im.shape[0]
            im = np.kron(im, np.ones((f, f)))
        panels.append(np.asarray(im, dtype=np.float64))
        panels.append(np.ones((H, gap)))
    return np.concatenate(panels[:-1], axis=1)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Header row then one newline-terminated row per record; floats use ``repr`` and NaN is blank."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


class CsvAppender:
    """Streams rows to a CSV as they are produced (used for per-step metrics)."""

    def __init__(self, path, header: Sequence[str]):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(header)

    def write(self, row: Sequence) -> None:
        self._writer.writerow([_fmt(v) for v in row])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
