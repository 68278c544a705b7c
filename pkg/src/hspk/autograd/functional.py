"""Neural-network ops: convolution, resampling, normalization, padding, BCE."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hspk.autograd.tensor import Tensor, make, softplus
from hspk.errors import DimensionError


def pad2d(x: Tensor, pad: int | tuple[int, int, int, int]) -> Tensor:
    """Zero-pad the two trailing axes; ``pad`` is ``(top, bottom, left, right)`` or one int."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    top, bottom, left, right = pad
    if min(pad) < 0:
        raise DimensionError(f"negative padding {pad}")
    if not any(pad):
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, widths)
    H, W = x.shape[-2:]
    return make(out, (x,), lambda g: (g[..., top : top + H, left : left + W],), "pad2d")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[B,Cin,H,W]`` with ``weight[Cout,Cin,kh,kw]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = weight.shape
    if C != Cin:
        raise DimensionError(f"conv2d channel mismatch: input {C}, weight {Cin}")
    if bias is not None and bias.shape != (Cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({Cout},)")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise DimensionError(f"conv2d output extent {Ho}x{Wo} is not positive")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # (B, Ho, Wo, Cout) -> (B, Cout, Ho, Wo)
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            # (B, Ho, Wo, Cin, kh, kw)
            gcols = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[..., i, j]
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward, "conv2d")


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """Interpolation matrix ``(n_in*factor, n_in)`` with half-pixel centers and edge clamping."""
    n_out = n_in * factor
    A = np.zeros((n_out, n_in))
    for d in range(n_out):
        s = (d + 0.5) / factor - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        t = s - i0
        A[d, i0] += 1.0 - t
        A[d, i1] += t
    A.setflags(write=False)
    return A


def upsample_bilinear(x: Tensor, factor: int = 2) -> Tensor:
    """Separable bilinear upsampling of the last two axes by an integer factor."""
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise DimensionError(f"upsample needs spatial extents >= 1, got {x.shape}")
    if factor == 1:
        return x
    H, W = x.shape[-2:]
    Ah = bilinear_matrix(H, factor).astype(x.dtype)
    Aw = bilinear_matrix(W, factor).astype(x.dtype)
    out = Ah @ x.data @ Aw.T
    return make(out, (x,), lambda g: (Ah.T @ g @ Aw,), "upsample")


def upsample_bilinear_x2(x: Tensor) -> Tensor:
    return upsample_bilinear(x, 2)


def avg_pool2x2(x: Tensor) -> Tensor:
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"avg_pool2x2 needs even extents, got {H}x{W}")
    lead = x.shape[:-2]
    out = x.data.reshape(*lead, H // 2, 2, W // 2, 2).mean(axis=(-3, -1))

    def backward(g):
        g = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
        return (g * 0.25,)

    return make(out, (x,), backward, "avg_pool2x2")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of ``x[B,C,H,W]``.

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm shape mismatch {x.shape} vs gamma {gamma.shape}")
    axes = (0, 2, 3)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                gx = (inv[None, :, None, None] / n) * (
                    n * gxhat
                    - gxhat.sum(axis=axes)[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
                )
            else:
                gx = gxhat * inv[None, :, None, None]
        return gx, gg, gbeta

    return make(out, (x, gamma, beta), backward, "batch_norm")


def bce_with_logits(logits: Tensor, target: float) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a constant 0/1 target."""
    if target == 1:
        return softplus(-logits).mean()
    if target == 0:
        return softplus(logits).mean()
    raise ValueError(f"target must be 0 or 1, got {target}")
