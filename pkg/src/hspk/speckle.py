"""Transmission-matrix surrogate for coherent light through a multimode fiber.

A label image is phase-encoded (as a phase-only modulator would do), mixed by
a random complex matrix standing in for one fiber configuration, and detected
as intensity.  Each fiber configuration is an independent matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hspk.errors import CapacityError, ContractError, DimensionError

# complex128 entries: 16 bytes each; 2**26 entries is 1 GiB
DEFAULT_MAX_ENTRIES = 2**26


@dataclass(frozen=True)
class SpeckleConfig:
    slm_extent: int = 32  # side of the phase-encoded input; N = slm_extent**2
    camera_extent: int = 64  # side of the detected speckle image; M = camera_extent**2
    percentile: float = 99.9
    seed: int = 1234

    def __post_init__(self):
        if self.slm_extent < 1 or self.camera_extent < 1:
            raise ContractError(f"extents must be positive: {self}")
        if not 50.0 < self.percentile <= 100.0:
            raise ContractError(f"percentile must lie in (50, 100], got {self.percentile}")

    @property
    def n_inputs(self) -> int:
        return self.slm_extent**2

    @property
    def n_outputs(self) -> int:
        return self.camera_extent**2


@dataclass(frozen=True)
class TransmissionMatrix:
    entries: np.ndarray  # (M, N) complex128
    seed: int
    config_id: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def config_seed(seed: int, config_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(config_id)])


def build_tm(seed: int, M: int, N: int, config_id: int = 0, max_entries: int = DEFAULT_MAX_ENTRIES) -> TransmissionMatrix:
    """Random circular complex Gaussian matrix, entry variance 1/N.

    Seeded by ``(seed, config_id)`` so each configuration is an independent,
    reproducible draw.
    """
    if M < 1 or N < 1:
        raise ContractError(f"matrix extents must be positive, got {M}x{N}")
    if M * N > max_entries:
        raise CapacityError(f"transmission matrix {M}x{N} exceeds the {max_entries}-entry budget")
    rng = np.random.Generator(np.random.PCG64(config_seed(seed, config_id)))
    scale = math.sqrt(0.5 / N)
    re = rng.standard_normal((M, N))
    im = rng.standard_normal((M, N))
    entries = (re + 1j * im) * scale
    entries.setflags(write=False)
    return TransmissionMatrix(entries, int(seed), int(config_id))


def encode_phase(label: np.ndarray) -> np.ndarray:
    """Field ``exp(i*pi*I)`` for intensities in [0, 1], flattened on the last two axes."""
    label = np.asarray(label, dtype=np.float64)
    flat = label.reshape(label.shape[:-2] + (-1,)) if label.ndim >= 2 else label
    return np.exp(1j * np.pi * flat)


def propagate(label: np.ndarray, tm: TransmissionMatrix) -> np.ndarray:
    """Raw output intensities ``|T u|^2``; accepts one image or a stack of images."""
    label = np.asarray(label, dtype=np.float64)
    M, N = tm.shape
    n_in = label.shape[-1] * label.shape[-2] if label.ndim >= 2 else label.shape[-1]
    if n_in != N:
        raise DimensionError(f"label has {n_in} pixels but the matrix expects {N}")
    if label.min(initial=0.0) < 0.0 or label.max(initial=0.0) > 1.0:
        raise ContractError("label values must lie in [0, 1]")
    u = encode_phase(label) if label.ndim >= 2 else np.exp(1j * np.pi * label)
    field = u @ tm.entries.T
    return field.real**2 + field.imag**2


def normalize_speckle(raw: np.ndarray, config: SpeckleConfig | None = None, percentile: float | None = None) -> np.ndarray:
    """Scale a frame by its percentile value, clamp to [0, 1], reshape to a square image.

    Accepts a stack of frames along leading axes; each frame is scaled by its
    own percentile.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        raise ContractError("speckle intensities must be non-negative")
    pct = percentile if percentile is not None else (config.percentile if config else 99.9)
    M = raw.shape[-1]
    side = math.isqrt(M)
    if side * side != M:
        raise DimensionError(f"frame length {M} is not a perfect square")
    if config is not None and M != config.n_outputs:
        raise DimensionError(f"frame length {M} does not match camera extent {config.camera_extent}")
    scale = np.percentile(raw, pct, axis=-1, keepdims=True)
    if np.any(scale <= 0):
        raise ContractError("degenerate speckle frame (percentile intensity is zero)")
    out = np.clip(raw / scale, 0.0, 1.0)
    return out.reshape(raw.shape[:-1] + (side, side))


def slm_image(label: np.ndarray, slm_extent: int) -> np.ndarray:
    """Area-average a label down to the modulator grid (identity when extents match)."""
    label = np.asarray(label, dtype=np.float64)
    H, W = label.shape[-2:]
    if H == slm_extent and W == slm_extent:
        return label
    if H % slm_extent or W % slm_extent:
        raise DimensionError(f"label extent {H}x{W} is not a multiple of the SLM extent {slm_extent}")
    fh, fw = H // slm_extent, W // slm_extent
    lead = label.shape[:-2]
    return label.reshape(*lead, slm_extent, fh, slm_extent, fw).mean(axis=(-3, -1))


def speckle_images(labels: np.ndarray, tm: TransmissionMatrix, config: SpeckleConfig) -> np.ndarray:
    """Full label -> normalized speckle image pipeline for a stack ``(n, H, W)``."""
    raw = propagate(slm_image(labels, config.slm_extent), tm)
    return normalize_speckle(raw, config)


@dataclass
class StatsReport:
    ks_distance_exponential: float
    mean: float
    variance: float
    n_samples: int
    contrast: float  # std / mean; 1 for fully developed speckle
    beta_a: float  # method-of-moments beta fit to intensities / sum over the frame
    beta_b: float
    note: str = (
        "Normalized intensities of a finite-power field follow a beta law; "
        "for many modes it tends to the exponential law tested here."
    )


def ks_distance_exponential(samples: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between mean-scaled samples and Exp(1)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    m = x.mean()
    if m <= 0:
        return 1.0
    x = x / m
    n = x.size
    cdf = -np.expm1(-x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


MIN_STATS_SAMPLES = 10_000


def stats_check(frames: np.ndarray, frame_axis_last: bool = True) -> StatsReport:
    """Pooled intensity statistics of raw speckle frames (shape ``(..., M)``)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.size < MIN_STATS_SAMPLES:
        raise ContractError(f"need at least {MIN_STATS_SAMPLES} pooled samples, got {frames.size}")
    per_frame = frames.reshape(-1, frames.shape[-1]) if frame_axis_last else frames.reshape(1, -1)
    scaled = per_frame / per_frame.mean(axis=1, keepdims=True)
    pooled = scaled.ravel()
    frac = per_frame / per_frame.sum(axis=1, keepdims=True)
    fm, fv = frac.mean(), frac.var()
    common = fm * (1 - fm) / fv - 1 if fv > 0 else float("inf")
    return StatsReport(
        ks_distance_exponential=ks_distance_exponential(pooled),
        mean=float(frames.mean()),
        variance=float(frames.var()),
        n_samples=int(frames.size),
        contrast=float(pooled.std() / pooled.mean()),
        beta_a=float(fm * common),
        beta_b=float((1 - fm) * common),
    )


def simulate_frames(config: SpeckleConfig, realizations: int = 3, seed: int = 0) -> np.ndarray:
    """Raw intensity frames ``(realizations, M)`` of one fixed random label through independent matrices."""
    rng = np.random.default_rng(seed)
    label = rng.random((config.slm_extent, config.slm_extent))
    frames = [
        propagate(label, build_tm(config.seed, config.n_outputs, config.n_inputs, config_id=r))
        for r in range(realizations)
    ]
    return np.stack(frames)


def simulate_stats(config: SpeckleConfig, realizations: int = 3, seed: int = 0) -> StatsReport:
    """Pooled statistics of :func:`simulate_frames`."""
    return stats_check(simulate_frames(config, realizations, seed))
