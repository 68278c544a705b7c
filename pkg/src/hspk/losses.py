"""Training objectives and the SSIM evaluation metric.

Image arguments follow the autograd convention ``(B, 1, H, W)`` (any leading
axes work for the histogram losses).  Losses over a batch are averaged per
image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from hspk.autograd import (
    Tensor,
    abs_,
    avg_pool2x2,
    bce_with_logits,
    clamp,
    conv2d,
    log2,
    upsample_bilinear,
)
from hspk.errors import ContractError, DimensionError
from hspk.hcu import KernelBank, joint_from_weights, kernel_weights

LOG_FLOOR = 1e-12
C1 = 0.01**2
C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    mi: float = 1.0
    ssim: float = 5.0

    def __post_init__(self):
        if self.mi < 0 or self.ssim < 0:
            raise ContractError(f"loss weights must be non-negative, got {self}")


@dataclass
class EntropyReport:
    h_label: np.ndarray  # bits, per image
    h_cond: np.ndarray
    mi: np.ndarray


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def entropy_bits(probs: Tensor) -> Tensor:
    """Shannon entropy over the last axis, log arguments floored at 1e-12."""
    return -(probs * log2(clamp(probs, LOG_FLOOR, None))).sum(axis=-1)


def mi_loss(label, generated, bank: KernelBank = KernelBank()) -> tuple[Tensor, EntropyReport]:
    """Conditional entropy H(label | generated) in bits, averaged over leading axes.

    Minimising it maximises the mutual information between the two images,
    because the label entropy does not depend on the generator.
    """
    y = _as_tensor(label)
    g = _as_tensor(generated)
    if y.shape != g.shape:
        raise DimensionError(f"mi_loss needs equal shapes, got {y.shape} and {g.shape}")
    wy = kernel_weights(y, bank)
    wg = kernel_weights(g, bank)
    p_joint = joint_from_weights(wy, wg).probs
    hg = wg.sum(axis=-2)
    p_g = hg / hg.sum(axis=-1, keepdims=True)
    p_g = p_g.reshape(p_g.shape[:-1] + (1,) + p_g.shape[-1:])
    log_ratio = log2(clamp(p_joint, LOG_FLOOR, None)) - log2(clamp(p_g, LOG_FLOOR, None))
    h_cond = -(p_joint * log_ratio).sum(axis=(-2, -1))

    hy = wy.data.sum(axis=-2)
    p_y = hy / hy.sum(axis=-1, keepdims=True)
    h_y = -(p_y * np.log2(np.maximum(p_y, LOG_FLOOR))).sum(axis=-1)
    report = EntropyReport(h_label=h_y, h_cond=h_cond.data.copy(), mi=h_y - h_cond.data)
    return h_cond.mean(), report


# -- SSIM ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    w = np.outer(g, g)
    w.setflags(write=False)
    return w


def window_for(extent: int) -> tuple[int, float]:
    """Gaussian window used at a given image extent: 11/1.5, or 7/1.0 below 32 px."""
    return (11, 1.5) if extent >= 32 else (7, 1.0)


def _ssim_maps(a: Tensor, b: Tensor, size: int, sigma: float) -> tuple[Tensor, Tensor]:
    """Luminance and contrast-structure maps over valid window positions."""
    w = Tensor(gaussian_window(size, sigma)[None, None].astype(a.dtype))

    def blur(t):
        return conv2d(t, w)

    mu_a, mu_b = blur(a), blur(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    s_aa = blur(a * a) - mu_aa
    s_bb = blur(b * b) - mu_bb
    s_ab = blur(a * b) - mu_ab
    lum = (mu_ab * 2.0 + C1) / (mu_aa + mu_bb + C1)
    cs = (s_ab * 2.0 + C2) / (s_aa + s_bb + C2)
    return lum, cs


def _as_nchw(x) -> Tensor:
    t = _as_tensor(x)
    if t.ndim == 2:
        t = t.reshape((1, 1) + t.shape)
    elif t.ndim == 3:
        t = t.reshape((t.shape[0], 1) + t.shape[1:])
    if t.ndim != 4 or t.shape[1] != 1:
        raise DimensionError(f"expected single-channel images, got shape {t.shape}")
    return t


@dataclass(frozen=True)
class MsSsimConfig:
    weights: tuple[float, ...] = (0.25, 0.35, 0.40)

    @property
    def scales(self) -> int:
        return len(self.weights)

    @property
    def normalized(self) -> tuple[float, ...]:
        s = sum(self.weights)
        return tuple(w / s for w in self.weights)


@dataclass
class MsSsimTerms:
    cs: list[Tensor] = field(default_factory=list)  # per scale, shape (B,)
    luminance: Tensor | None = None  # coarsest scale, shape (B,)
    value: Tensor | None = None  # combined, shape (B,)


CS_FLOOR = 1e-6


def ms_ssim_terms(a, b, config: MsSsimConfig = MsSsimConfig()) -> MsSsimTerms:
    """Per-scale mean contrast-structure terms and coarsest-scale mean luminance."""
    x, y = _as_nchw(a), _as_nchw(b)
    if x.shape != y.shape:
        raise DimensionError(f"ms_ssim needs equal shapes, got {x.shape} and {y.shape}")
    weights = config.normalized
    terms = MsSsimTerms()
    value = None
    for s in range(config.scales):
        extent = min(x.shape[-2:])
        size, sigma = window_for(extent)
        if extent < size:
            raise DimensionError(
                f"image extent {extent} at scale {s + 1} is smaller than the {size}-px window; "
                f"use fewer than {config.scales} scales or larger images"
            )
        lum, cs = _ssim_maps(x, y, size, sigma)
        cs_mean = clamp(cs.mean(axis=(1, 2, 3)), CS_FLOOR, None)
        terms.cs.append(cs_mean)
        factor = cs_mean ** weights[s]
        value = factor if value is None else value * factor
        if s == config.scales - 1:
            lum_mean = clamp(lum.mean(axis=(1, 2, 3)), CS_FLOOR, None)
            terms.luminance = lum_mean
            value = value * lum_mean ** weights[s]
        else:
            x, y = avg_pool2x2(x), avg_pool2x2(y)
    terms.value = value
    return terms


def ms_ssim(a, b, config: MsSsimConfig = MsSsimConfig()) -> Tensor:
    """Multiscale SSIM averaged over the batch."""
    return ms_ssim_terms(a, b, config).value.mean()


def ssim_loss_3scale(g1, g2, g3, label, config: MsSsimConfig = MsSsimConfig()) -> Tensor:
    """Sum over the three refinement outputs of ``1 - MS-SSIM(upsampled G_m, label)``."""
    y = _as_nchw(label)
    total = None
    for g in (g1, g2, g3):
        g = _as_nchw(g)
        factor = y.shape[-1] // g.shape[-1]
        if factor * g.shape[-1] != y.shape[-1] or factor * g.shape[-2] != y.shape[-2]:
            raise DimensionError(f"cannot upsample {g.shape} to label extent {y.shape}")
        term = 1.0 - ms_ssim(upsample_bilinear(g, factor), y, config)
        total = term if total is None else total + term
    return total


def ssim_metric(a, b) -> np.ndarray:
    """Single-scale SSIM per image (no gradients); returns shape ``(B,)``."""
    x = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    y = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"ssim needs equal shapes, got {x.shape} and {y.shape}")
    xt, yt = _as_nchw(x), _as_nchw(y)
    extent = min(xt.shape[-2:])
    size, sigma = window_for(extent)
    if extent < size:
        raise DimensionError(f"image extent {extent} is smaller than the {size}-px SSIM window")
    lum, cs = _ssim_maps(xt, yt, size, sigma)
    return (lum.data * cs.data).mean(axis=(1, 2, 3))


# -- adversarial --------------------------------------------------------------------


def adversarial_g_loss(logits_fake: Tensor) -> Tensor:
    return bce_with_logits(logits_fake, 1)


def discriminator_loss(logits_real: Tensor, logits_fake: Tensor) -> Tensor:
    return bce_with_logits(logits_real, 1) * 0.5 + bce_with_logits(logits_fake, 0) * 0.5


def generator_total(adv, mi, ssim3, weights: LossWeights):
    return adv + mi * weights.mi + ssim3 * weights.ssim


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    return abs_(a - b).mean()
