"""HSPK1 speckle-pair dataset container, split bookkeeping and dataset builders.

File layout (little-endian)::

    b"HSPK1"   magic
    u32        header length in bytes
    utf8 JSON  header (sorted keys)
    records    fixed-size structs, train then val then test:
               u32 index, u16 config_id, u8 split, u8 pad,
               f32[H*W] speckle, f32[H*W] label

The header records every seed and parameter needed to regenerate each record.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hspk.data.npyio import read_npy_archive
from hspk.data.synthetic import gen_synthetic_labels, synthetic_label
from hspk.errors import ContractError, DimensionError, FormatError
from hspk.speckle import SpeckleConfig, TransmissionMatrix, build_tm, normalize_speckle, propagate, slm_image

MAGIC = b"HSPK1"
SPLITS = ("train", "val", "test")
# the published split: 50,000 / 2,947 / 5,883 of 58,830 pairs
PUBLISHED_SPLIT = (50_000 / 58_830, 2_947 / 58_830, 5_883 / 58_830)


def record_dtype(extent: int) -> np.dtype:
    return np.dtype(
        [
            ("index", "<u4"),
            ("config_id", "<u2"),
            ("split", "u1"),
            ("pad", "u1"),
            ("speckle", "<f4", (extent, extent)),
            ("label", "<f4", (extent, extent)),
        ]
    )


def split_counts(n: int, ratios=PUBLISHED_SPLIT) -> tuple[int, ...]:
    """Largest-remainder rounding of ``n * ratios``; the counts always sum to ``n``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0, atol=1e-9):
        raise ContractError(f"split ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    exact = n * ratios
    counts = np.floor(exact + 1e-9).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return tuple(int(c) for c in counts)


@dataclass
class Dataset:
    header: dict
    records: np.ndarray  # structured array of record_dtype

    @property
    def extent(self) -> int:
        return int(self.header["extent"])

    def __len__(self) -> int:
        return len(self.records)

    @property
    def speckle(self) -> np.ndarray:
        return self.records["speckle"]

    @property
    def label(self) -> np.ndarray:
        return self.records["label"]

    @property
    def config_id(self) -> np.ndarray:
        return self.records["config_id"]

    def split(self, name: str) -> Dataset:
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}; expected one of {SPLITS}")
        sel = self.records[self.records["split"] == SPLITS.index(name)]
        return Dataset(self.header, sel)

    def subset(self, idx) -> Dataset:
        return Dataset(self.header, self.records[np.asarray(idx)])

    def save(self, path) -> None:
        path = Path(path)
        counts = {s: int((self.records["split"] == i).sum()) for i, s in enumerate(SPLITS)}
        header = dict(self.header, counts=counts)
        blob = json.dumps(header, sort_keys=True).encode("utf8")
        try:
            with open(path, "wb") as fh:
                fh.write(MAGIC + struct.pack("<I", len(blob)) + blob)
                # keep records grouped train, val, test
                order = np.argsort(self.records["split"], kind="stable")
                fh.write(self.records[order].tobytes())
        except OSError as exc:
            raise FormatError(f"cannot write dataset {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> Dataset:
        path = Path(path)
        try:
            buf = path.read_bytes()
        except OSError as exc:
            raise FormatError(f"cannot read dataset {path}: {exc}") from exc
        if buf[:5] != MAGIC:
            raise FormatError(f"{path}: not an HSPK1 dataset")
        (hlen,) = struct.unpack_from("<I", buf, 5)
        try:
            header = json.loads(buf[9 : 9 + hlen].decode("utf8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt header") from exc
        dt = record_dtype(int(header["extent"]))
        body = buf[9 + hlen :]
        if len(body) % dt.itemsize:
            raise FormatError(f"{path}: record block length {len(body)} is not a multiple of {dt.itemsize}")
        records = np.frombuffer(body, dtype=dt).copy()
        expected = sum(header["counts"].values())
        if len(records) != expected:
            raise FormatError(f"{path}: header promises {expected} records, found {len(records)}")
        return cls(header, records)


def _n_threads() -> int:
    try:
        return max(1, int(os.environ.get("HSPK_THREADS", "1")))
    except ValueError:
        return 1


def speckle_for_label(label: np.ndarray, tm: TransmissionMatrix, config: SpeckleConfig) -> np.ndarray:
    """Normalized speckle image for one label (computed per record for bit-stable regeneration)."""
    raw = propagate(slm_image(label, config.slm_extent), tm)
    return normalize_speckle(raw, config).astype(np.float32)


def label_source_synthetic(n: int, extent: int, seed: int) -> dict:
    return {"source": "synthetic", "n": int(n), "extent": int(extent), "seed": int(seed)}


def label_source_npy(path, key: str | None, n: int) -> dict:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"source": "npy", "path": str(path), "key": key, "n": int(n), "sha256": digest}


def labels_from_archive(path, extent: int, key: str | None = None, limit: int | None = None) -> np.ndarray:
    """Images from an ``.npy``/``.npz`` archive, resized to ``extent`` by bilinear resampling."""
    arrays = read_npy_archive(path)
    if key is None:
        key = next((k for k in arrays if k.endswith("images")), next(iter(arrays)))
    if key not in arrays:
        raise FormatError(f"{path}: no array named {key!r}; have {sorted(arrays)}")
    imgs = np.asarray(arrays[key], dtype=np.float64)
    if imgs.ndim == 2:
        imgs = imgs[None]
    if imgs.ndim != 3:
        raise DimensionError(f"{path}:{key} must hold (n, H, W) images, got {imgs.shape}")
    if limit is not None:
        imgs = imgs[:limit]
    return np.clip(np.stack([resize_bilinear(im, extent) for im in imgs]), 0.0, 1.0)


def resize_bilinear(image: np.ndarray, extent: int) -> np.ndarray:
    """Half-pixel bilinear resize of a square-ish image to ``extent x extent``."""
    H, W = image.shape
    if H == extent and W == extent:
        return image

    def axis_matrix(n_in):
        A = np.zeros((extent, n_in))
        for d in range(extent):
            s = min(max((d + 0.5) * n_in / extent - 0.5, 0.0), n_in - 1.0)
            i0 = int(np.floor(s))
            i1 = min(i0 + 1, n_in - 1)
            A[d, i0] += 1 - (s - i0)
            A[d, i1] += s - i0
        return A

    return axis_matrix(H) @ image @ axis_matrix(W).T


def build_dataset(
    labels: np.ndarray,
    tms: list[TransmissionMatrix],
    config: SpeckleConfig,
    ratios=PUBLISHED_SPLIT,
    label_source: dict | None = None,
) -> list[Dataset]:
    """One dataset per transmission matrix; records keep the label order, split contiguously."""
    if not tms:
        raise ContractError("build_dataset needs at least one fiber configuration")
    labels = np.asarray(labels, dtype=np.float64)
    n, H, W = labels.shape
    if H != W or H != config.camera_extent:
        raise DimensionError(f"labels are {H}x{W}; speckle images are {config.camera_extent}x{config.camera_extent}")
    counts = split_counts(n, ratios)
    split_ids = np.repeat(np.arange(3, dtype=np.uint8), counts)
    out = []
    for tm in tms:
        records = np.zeros(n, dtype=record_dtype(H))
        records["index"] = np.arange(n)
        records["config_id"] = tm.config_id
        records["split"] = split_ids
        records["label"] = labels.astype(np.float32)

        def work(i, tm=tm, records=records):
            records["speckle"][i] = speckle_for_label(labels[i], tm, config)

        threads = _n_threads()
        if threads == 1:
            for i in range(n):
                work(i)
        else:
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(work, range(n)))
        header = {
            "magic": "HSPK1",
            "version": 1,
            "endianness": "little",
            "extent": H,
            "config_ids": [tm.config_id],
            "tm": {"seed": tm.seed, "config_id": tm.config_id, "M": tm.shape[0], "N": tm.shape[1]},
            "speckle": {
                "slm_extent": config.slm_extent,
                "camera_extent": config.camera_extent,
                "percentile": config.percentile,
                "seed": config.seed,
                "encoding": "phase",
            },
            "labels": label_source or {"source": "inline", "n": n},
            "split_ratios": [float(r) for r in ratios],
            "preprocessing": "label area-averaged to the SLM grid; speckle scaled by its percentile and clamped",
        }
        out.append(Dataset(header, records))
    return out


def regenerate_record(header: dict, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Recompute ``(speckle, label)`` for record ``index`` from the header alone."""
    src = header["labels"]
    extent = int(header["extent"])
    if src["source"] == "synthetic":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([src["seed"], index])))
        label = synthetic_label(rng, extent)
    elif src["source"] == "npy":
        label = labels_from_archive(src["path"], extent, src.get("key"), limit=index + 1)[index]
    else:
        raise ContractError(f"labels of source {src['source']!r} cannot be regenerated")
    sp = header["speckle"]
    config = SpeckleConfig(sp["slm_extent"], sp["camera_extent"], sp["percentile"], sp["seed"])
    tm_info = header["tm"]
    tm = build_tm(tm_info["seed"], tm_info["M"], tm_info["N"], tm_info["config_id"])
    return speckle_for_label(label, tm, config), label.astype(np.float32)


def compose_perturbed(datasets: list[Dataset], per_config_count: int, seed: int) -> Dataset:
    """Seeded sample of ``per_config_count`` training records from each configuration, shuffled together."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    parts = []
    for ds in datasets:
        train = ds.split("train")
        if len(train) < per_config_count:
            raise ContractError(
                f"configuration {ds.header['config_ids']} has {len(train)} training records, need {per_config_count}"
            )
        pick = np.sort(rng.choice(len(train), per_config_count, replace=False))
        parts.append(train.records[pick])
    combined = np.concatenate(parts)
    combined = combined[rng.permutation(len(combined))]
    header = dict(datasets[0].header)
    header["config_ids"] = sorted({c for ds in datasets for c in ds.header["config_ids"]})
    header["composed"] = {"per_config_count": per_config_count, "seed": seed}
    return Dataset(header, combined)


def generate_labels(source: str, n: int, extent: int, seed: int) -> tuple[np.ndarray, dict]:
    """Resolve a label spec (``synthetic`` or ``npy:<path>``) into images plus header provenance."""
    if source == "synthetic":
        return gen_synthetic_labels(n, extent, seed), label_source_synthetic(n, extent, seed)
    if source.startswith("npy:"):
        path = source[4:]
        labels = labels_from_archive(path, extent, limit=n)
        return labels, label_source_npy(path, None, len(labels))
    raise ContractError(f"unknown label source {source!r}; use 'synthetic' or 'npy:<path>'")
