"""Smooth, differentiable marginal and joint intensity histograms.

Each pixel spreads unit mass over a bank of Gaussian kernels centred on
linearly spaced bins in [0, 1].  Summing those soft assignments gives a
marginal histogram; the product of two images' assignment matrices gives
their joint histogram.

Images may carry any leading batch axes; the last two axes are spatial.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from hspk.autograd import Tensor, clamp, exp, matmul, swapaxes
from hspk.autograd.tensor import make
from hspk.errors import ContractError, DimensionError


@dataclass(frozen=True)
class KernelBank:
    k: int = 256
    sigma: float = 0.01

    def __post_init__(self):
        if self.k < 2:
            raise ContractError(f"kernel bank needs at least 2 bins, got {self.k}")
        if not self.sigma > 0:
            raise ContractError(f"kernel width must be positive, got {self.sigma}")

    @cached_property
    def centers(self) -> np.ndarray:
        c = np.arange(self.k, dtype=np.float64) / (self.k - 1)
        c.setflags(write=False)
        return c


@dataclass
class SmoothHistogram:
    counts: Tensor  # unnormalized bin masses, shape (..., k)
    probs: Tensor  # normalized to unit mass


@dataclass
class JointHistogram:
    counts: Tensor  # (..., k, k); rows index the first image's bins
    probs: Tensor


def _pixels(image) -> Tensor:
    t = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64))
    if t.ndim < 2:
        raise DimensionError(f"image must have at least 2 axes, got shape {t.shape}")
    if t.shape[-1] * t.shape[-2] == 0:
        raise ContractError("empty image")
    return t.reshape(t.shape[:-2] + (t.shape[-2] * t.shape[-1],))


def kernel_weights(image, bank: KernelBank = KernelBank(), raw: bool = False) -> Tensor:
    """Per-pixel bin assignments, shape ``(..., P, k)``; rows sum to one.

    Values are clamped to [0, 1] first.  With ``raw=True`` the un-normalized
    Gaussian responses are returned instead.
    """
    px = clamp(_pixels(image), 0.0, 1.0)
    centers = bank.centers.astype(px.dtype)
    if raw:
        z = (px.reshape(px.shape + (1,)) - centers) * (1.0 / bank.sigma)
        return exp(z * z * -0.5)
    return _normalized_weights(px, centers, bank.sigma)


def _normalized_weights(px: Tensor, centers: np.ndarray, sigma: float) -> Tensor:
    # Row normalization of Gaussian responses is a softmax over the logits
    # -(I - b)^2 / 2 sigma^2; shifting by the row maximum changes nothing
    # mathematically but keeps the nearest bin at exp(0) = 1.
    diff = px.data[..., None] - centers
    logits = diff * diff * (-0.5 / sigma**2)
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    # flush subnormals: they carry no mass and make the matmuls crawl
    w[w < np.finfo(w.dtype).tiny] = 0.0
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise ContractError("every kernel response underflowed for some pixel")
    w /= total
    w[w < np.finfo(w.dtype).tiny] = 0.0

    def backward(g):
        # d logit_i / dI = -(I - b_i) / sigma^2
        dlogit = diff * (-1.0 / sigma**2)
        gw = g * w
        return ((gw * dlogit).sum(axis=-1) - gw.sum(axis=-1) * (w * dlogit).sum(axis=-1),)

    return make(w, (px,), backward, "kernel_weights")


def marginal(image, bank: KernelBank = KernelBank()) -> SmoothHistogram:
    w = kernel_weights(image, bank)
    counts = w.sum(axis=-2)
    return SmoothHistogram(counts, counts / counts.sum(axis=-1, keepdims=True))


def joint(image_a, image_b, bank: KernelBank = KernelBank()) -> JointHistogram:
    """Joint histogram with ``probs[..., i, j]`` pairing bin i of A with bin j of B."""
    a = image_a if isinstance(image_a, Tensor) else Tensor(np.asarray(image_a, dtype=np.float64))
    b = image_b if isinstance(image_b, Tensor) else Tensor(np.asarray(image_b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError(f"joint histogram needs equal shapes, got {a.shape} and {b.shape}")
    return joint_from_weights(kernel_weights(a, bank), kernel_weights(b, bank))


def joint_from_weights(wa: Tensor, wb: Tensor) -> JointHistogram:
    counts = matmul(swapaxes(wa, -1, -2), wb)
    # sum_ij H(i,j) regrouped per pixel as sum_p rowA(p) * rowB(p): same value,
    # but symmetric in (A, B) so joint(A, B) == joint(B, A).T bit for bit
    total = (wa.sum(axis=-1) * wb.sum(axis=-1)).sum(axis=-1)
    total = total.reshape(total.shape + (1, 1))
    return JointHistogram(counts, counts / total)


def hard_histogram(image, k: int = 256) -> np.ndarray:
    """Ordinary normalized histogram with ``k`` equal-width bins over [0, 1]."""
    values = np.clip(np.asarray(image, dtype=np.float64).ravel(), 0.0, 1.0)
    counts, _ = np.histogram(values, bins=k, range=(0.0, 1.0))
    return counts / counts.sum()


def smooth_mass_per_hard_bin(probs: np.ndarray, bank: KernelBank, k_hard: int = 256) -> np.ndarray:
    """Collect the smooth histogram's bin masses into ``k_hard`` equal-width bins over [0, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    idx = np.minimum(np.floor(bank.centers * k_hard).astype(int), k_hard - 1)
    out = np.zeros(k_hard)
    np.add.at(out, idx, probs)
    return out


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
