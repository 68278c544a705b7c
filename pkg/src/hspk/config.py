"""Run configuration: nested dataclasses loaded from YAML with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from hspk.errors import ConfigError
from hspk.hcu import KernelBank
from hspk.losses import LossWeights, MsSsimConfig
from hspk.networks import DiscriminatorConfig, GeneratorConfig
from hspk.speckle import SpeckleConfig


@dataclass
class SpeckleSection:
    slm_extent: int = 32
    camera_extent: int = 64
    percentile: float = 99.9
    seed: int = 1234

    def build(self) -> SpeckleConfig:
        return SpeckleConfig(self.slm_extent, self.camera_extent, self.percentile, self.seed)


@dataclass
class HcuSection:
    bins: int = 256
    sigma: float = 0.01

    def build(self) -> KernelBank:
        return KernelBank(self.bins, self.sigma)


@dataclass
class GeneratorSection:
    encoder_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256, 256, 256])
    decoder_channels: list[int] | None = None
    tfrm_channels: list[int] = field(default_factory=lambda: [16, 16, 16])


@dataclass
class DiscriminatorSection:
    channels: list[int] = field(default_factory=lambda: [32, 64, 128])


@dataclass
class LossSection:
    mi: float = 1.0
    ssim: float = 5.0
    ms_ssim_weights: list[float] = field(default_factory=lambda: [0.25, 0.35, 0.40])
    l1_pix2pix: float = 100.0
    l1_unet: float = 1.0


@dataclass
class TrainSection:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    variant: str = "histospeckle"
    eval_every: int = 1  # epochs between validation passes and checkpoints
    val_records: int = 64
    max_steps: int | None = None
    reduced_fraction: float = 0.3
    per_config_count: int | None = None  # perturbed preset; default 24% of one configuration's training split
    config_id: int = 0  # configuration used by the single-fiber presets


@dataclass
class DataSection:
    n_labels: int = 5883
    labels: str = "synthetic"
    label_seed: int = 2024
    configs: int = 3
    split_ratios: list[float] | None = None  # None: the published 50,000 / 2,947 / 5,883 proportions
    paths: list[str] | None = None  # HSPK1 files used by training; one per fiber configuration


@dataclass
class RunConfig:
    seed: int = 0
    figures: bool = True
    speckle: SpeckleSection = field(default_factory=SpeckleSection)
    hcu: HcuSection = field(default_factory=HcuSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    discriminator: DiscriminatorSection = field(default_factory=DiscriminatorSection)
    losses: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)

    # -- derived component configs --------------------------------------------
    def generator_config(self, refine: bool = True) -> GeneratorConfig:
        g = self.generator
        return GeneratorConfig(
            extent=self.speckle.camera_extent,
            encoder_channels=list(g.encoder_channels),
            decoder_channels=None if g.decoder_channels is None else list(g.decoder_channels),
            tfrm_channels=list(g.tfrm_channels),
            refine=refine,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(list(self.discriminator.channels))

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.losses.mi, self.losses.ssim)

    def ms_ssim_config(self) -> MsSsimConfig:
        return MsSsimConfig(tuple(self.losses.ms_ssim_weights))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}" if where else name) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


_SECTIONS = {
    (RunConfig, "speckle"): SpeckleSection,
    (RunConfig, "hcu"): HcuSection,
    (RunConfig, "generator"): GeneratorSection,
    (RunConfig, "discriminator"): DiscriminatorSection,
    (RunConfig, "losses"): LossSection,
    (RunConfig, "train"): TrainSection,
    (RunConfig, "data"): DataSection,
}


def from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return from_dict(data)


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Set dotted keys (``train.epochs``) on a copy; unknown keys are rejected."""
    data = config.to_dict()
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = dotted.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
    return from_dict(data)


def dump_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


def smoke_config(seed: int = 0) -> RunConfig:
    """Desk-top smoke scale: 32 px images, five-level U-Net, narrow channels."""
    cfg = RunConfig(seed=seed)
    cfg.speckle = SpeckleSection(slm_extent=16, camera_extent=32)
    cfg.generator = GeneratorSection(encoder_channels=[16, 32, 64, 64, 64], tfrm_channels=[8, 8, 8])
    cfg.discriminator = DiscriminatorSection(channels=[16, 32])
    cfg.data = DataSection(n_labels=2000)
    cfg.train = TrainSection(epochs=3, max_steps=500, val_records=32)
    return cfg
