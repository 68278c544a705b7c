"""U-Net generator with three-scale residual refinement, and a conditional patch discriminator.

Decoder stages are numbered from the deepest (``D1``) to full resolution
(``Dn``).  The refinement chain attaches to the last four of them and emits
images at 1/4, 1/2 and full resolution; the last one is the prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hspk.autograd import (
    Tensor,
    batch_norm,
    concat,
    conv2d,
    leaky_relu,
    pad2d,
    relu,
    sigmoid,
    upsample_bilinear_x2,
)
from hspk.errors import ConfigError, DimensionError


# standard deviation of a unit normal truncated to [-2, 2]
_TRUNC_STD = math.sqrt(1.0 - 4.0 * math.exp(-2.0) / math.sqrt(2.0 * math.pi) / math.erf(math.sqrt(2.0)))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draws redrawn outside two standard deviations, rescaled so the result has std ``std``."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * (std / _TRUNC_STD)


class Module:
    """Ordered container of named parameters and batch-norm buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def train(self, mode: bool = True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def conv(self, name: str, cin: int, cout: int, k: int, bias: bool = True) -> None:
        self.params[f"{name}.weight"] = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
        if bias:
            self.params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True)

    def norm(self, name: str, c: int) -> None:
        self.params[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(c)
        self.buffers[f"{name}.running_var"] = np.ones(c)

    def apply_conv(self, name: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
        return conv2d(x, self.params[f"{name}.weight"], self.params.get(f"{name}.bias"), stride, padding)

    def apply_norm(self, name: str, x: Tensor) -> Tensor:
        return batch_norm(
            x,
            self.params[f"{name}.gamma"],
            self.params[f"{name}.beta"],
            self.buffers[f"{name}.running_mean"],
            self.buffers[f"{name}.running_var"],
            self.training,
        )

    def init_params(self, seed: int, dtype=np.float32) -> None:
        """Truncated-normal (std 0.02) conv weights, zero biases, unit BN scale."""
        rng = np.random.Generator(np.random.PCG64(seed))
        for name, p in self.params.items():
            if name.endswith(".weight"):
                p.data = truncated_normal(rng, p.shape).astype(dtype)
            elif name.endswith(".gamma"):
                p.data = np.ones(p.shape, dtype=dtype)
            else:
                p.data = np.zeros(p.shape, dtype=dtype)
            p.grad = None
        for name, b in self.buffers.items():
            b[...] = 0.0 if name.endswith("running_mean") else 1.0

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update({f"buffer:{name}": b for name, b in self.buffers.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], dtype=None) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint has no parameter {name!r}")
            arr = np.asarray(arrays[name])
            if arr.shape != p.shape:
                raise ConfigError(f"parameter {name!r} shape {arr.shape} != model {p.shape}")
            p.data = arr.astype(dtype or arr.dtype).copy()
        for name, b in self.buffers.items():
            key = f"buffer:{name}"
            if key in arrays:
                b[...] = arrays[key]


@dataclass
class GeneratorConfig:
    extent: int = 64
    encoder_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256, 256, 256])
    decoder_channels: list[int] | None = None
    tfrm_channels: list[int] = field(default_factory=lambda: [16, 16, 16])
    refine: bool = True  # False: plain U-Net head on the last decoder stage

    def __post_init__(self):
        depth = len(self.encoder_channels)
        if self.decoder_channels is None:
            self.decoder_channels = list(reversed(self.encoder_channels[:-1])) + [self.encoder_channels[0]]
        if len(self.decoder_channels) != depth:
            raise ConfigError("encoder and decoder depths differ")
        if depth < 4:
            raise ConfigError("refinement needs at least four decoder stages")
        if self.extent % (2**depth):
            raise ConfigError(f"extent {self.extent} is not divisible by 2**{depth}")
        if len(self.tfrm_channels) != 3:
            raise ConfigError("tfrm_channels needs one width per refinement scale")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)


class Generator(Module):
    def __init__(self, config: GeneratorConfig = None):
        super().__init__()
        self.config = config = config or GeneratorConfig()
        n = config.depth
        enc, dec = config.encoder_channels, config.decoder_channels
        cin = 1
        for i, c in enumerate(enc, start=1):
            self.conv(f"enc{i}", cin, c, 4)
            if i > 1:
                self.norm(f"enc{i}.bn", c)
            cin = c
        prev = enc[-1]
        for k, c in enumerate(dec, start=1):
            skip = enc[n - k - 1] if k < n else 0
            self.conv(f"dec{k}", prev + skip, c, 3)
            self.norm(f"dec{k}.bn", c)
            prev = c
        if config.refine:
            incoming = [dec[n - 4], 1, 1]
            for m in range(3):
                cat = incoming[m] + dec[n - 3 + m]
                self.conv(f"tfrm{m + 1}.shortcut", cat, 1, 1)
                self.conv(f"tfrm{m + 1}.main1", cat, config.tfrm_channels[m], 3)
                self.conv(f"tfrm{m + 1}.main2", config.tfrm_channels[m], 1, 3)
        else:
            self.conv("head", dec[-1], 1, 1)

    def decoder_features(self, x: Tensor) -> list[Tensor]:
        n = self.config.depth
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.config.extent,) * 2:
            raise DimensionError(f"generator expects (B, 1, {self.config.extent}, {self.config.extent}), got {x.shape}")
        skips = []
        h = x
        for i in range(1, n + 1):
            h = self.apply_conv(f"enc{i}", h, stride=2, padding=1)
            if i > 1:
                h = self.apply_norm(f"enc{i}.bn", h)
            h = leaky_relu(h, 0.2)
            skips.append(h)
        feats = []
        for k in range(1, n + 1):
            h = upsample_bilinear_x2(h)
            if k < n:
                h = concat([h, skips[n - k - 1]], axis=1)
            h = relu(self.apply_norm(f"dec{k}.bn", self.apply_conv(f"dec{k}", h, padding=1)))
            feats.append(h)
        return feats

    def tfrm_stage(self, m: int, incoming: Tensor, decoder: Tensor, activate: bool = True) -> Tensor:
        """One refinement stage: 1x1 shortcut plus two 3x3 convolutions on ``U(incoming) || decoder``."""
        z = concat([upsample_bilinear_x2(incoming), decoder], axis=1)
        short = self.apply_conv(f"tfrm{m}.shortcut", z)
        main = leaky_relu(self.apply_conv(f"tfrm{m}.main1", z, padding=1), 0.2)
        main = self.apply_conv(f"tfrm{m}.main2", main, padding=1)
        out = short + main
        return sigmoid(out) if activate else out

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor] | Tensor:
        """Return ``(G1, G2, G3)`` at 1/4, 1/2, full resolution; a single image without refinement."""
        feats = self.decoder_features(x)
        n = self.config.depth
        if not self.config.refine:
            return sigmoid(self.apply_conv("head", feats[-1]))
        g1 = self.tfrm_stage(1, feats[n - 4], feats[n - 3])
        g2 = self.tfrm_stage(2, g1, feats[n - 2])
        g3 = self.tfrm_stage(3, g2, feats[n - 1])
        return g1, g2, g3

    __call__ = forward

    def predict(self, x: Tensor) -> Tensor:
        out = self.forward(x)
        return out[-1] if isinstance(out, tuple) else out


@dataclass
class DiscriminatorConfig:
    channels: list[int] = field(default_factory=lambda: [32, 64, 128])


class Discriminator(Module):
    """Patch classifier on ``candidate || speckle``; emits a logit grid of extent L / 2**len(channels)."""

    def __init__(self, config: DiscriminatorConfig = None):
        super().__init__()
        self.config = config = config or DiscriminatorConfig()
        cin = 2
        for i, c in enumerate(config.channels, start=1):
            self.conv(f"d{i}", cin, c, 4)
            if i > 1:
                self.norm(f"d{i}.bn", c)
            cin = c
        self.conv("logit", cin, 1, 4)

    def forward(self, candidate: Tensor, speckle: Tensor) -> Tensor:
        if candidate.shape != speckle.shape:
            raise DimensionError(f"candidate {candidate.shape} and speckle {speckle.shape} differ")
        h = concat([candidate, speckle], axis=1)
        for i in range(1, len(self.config.channels) + 1):
            h = self.apply_conv(f"d{i}", h, stride=2, padding=1)
            if i > 1:
                h = self.apply_norm(f"d{i}.bn", h)
            h = leaky_relu(h, 0.2)
        # asymmetric padding keeps the 4x4, stride-1 logit layer extent-preserving
        return self.apply_conv("logit", pad2d(h, (1, 2, 1, 2)))

    __call__ = forward

    def receptive_field(self) -> int:
        rf = 4
        for _ in self.config.channels:
            rf = rf * 2 + 2
        return rf
