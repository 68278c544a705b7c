"""Organ-like synthetic label images: a few soft-edged blobs on a dark background."""

from __future__ import annotations

import numpy as np

from hspk.errors import ContractError


def _soft_ellipse(yy, xx, cy, cx, ry, rx, theta, edge):
    c, s = np.cos(theta), np.sin(theta)
    u = ((xx - cx) * c + (yy - cy) * s) / rx
    v = (-(xx - cx) * s + (yy - cy) * c) / ry
    r = np.sqrt(u * u + v * v)
    return 1.0 / (1.0 + np.exp((r - 1.0) / edge))


def _soft_rect(yy, xx, cy, cx, ry, rx, theta, edge):
    c, s = np.cos(theta), np.sin(theta)
    u = np.abs(((xx - cx) * c + (yy - cy) * s) / rx)
    v = np.abs((-(xx - cx) * s + (yy - cy) * c) / ry)
    r = np.maximum(u, v)
    return 1.0 / (1.0 + np.exp((r - 1.0) / edge))


def synthetic_label(rng: np.random.Generator, extent: int) -> np.ndarray:
    coords = (np.arange(extent) + 0.5) / extent
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    img = np.zeros((extent, extent))
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.25, 0.75, size=2)
        ry, rx = rng.uniform(0.08, 0.28, size=2)
        theta = rng.uniform(0, np.pi)
        edge = rng.uniform(0.03, 0.12)
        level = rng.uniform(0.35, 1.0)
        shape = _soft_ellipse if rng.random() < 0.7 else _soft_rect
        mask = shape(yy, xx, cy, cx, ry, rx, theta, edge)
        img = img * (1.0 - mask) + level * mask
    return np.clip(img, 0.0, 1.0)


def gen_synthetic_labels(n: int, extent: int, seed: int) -> np.ndarray:
    """``n`` deterministic labels of shape ``(extent, extent)``; record ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ContractError(f"need at least one label, got n={n}")
    out = np.empty((n, extent, extent))
    for i in range(n):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        out[i] = synthetic_label(rng, extent)
    return out


def foreground_fraction(labels: np.ndarray, threshold: float = 0.1) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels > threshold).reshape(len(labels), -1).mean(axis=1)
