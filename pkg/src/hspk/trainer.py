"""Adversarial training loop, evaluation and histogram-alignment reporting."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from hspk.autograd import Adam, Tensor, no_grad
from hspk.config import RunConfig
from hspk.data.checkpoint import adam_arrays, load_checkpoint, restore_adam, save_checkpoint
from hspk.data.dataset import Dataset, compose_perturbed
from hspk.data.export import CsvAppender, triptych, write_csv, write_pgm
from hspk.errors import ConfigError, ContractError, NumericError
from hspk.hcu import KernelBank, marginal
from hspk.losses import (
    adversarial_g_loss,
    discriminator_loss,
    generator_total,
    l1_loss,
    mi_loss,
    ms_ssim,
    ssim_loss_3scale,
    ssim_metric,
)
from hspk.networks import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig

log = logging.getLogger(__name__)

VARIANTS = ("histospeckle", "unet_baseline", "pix2pix_baseline")
PRESETS = ("full", "reduced30", "perturbed")
METRIC_COLUMNS = (
    "step",
    "epoch",
    "L_Dis",
    "L_adv",
    "L_MI",
    "L_SSIM",
    "L_L1",
    "L_Gen",
    "L_total",
    "val_ssim",
    "hist_emd",
)
# per-configuration sample for the perturbed preset: 12,000 of each 50,000-record training split
PERTURBED_FRACTION = 12_000 / 50_000


class TrainingAborted(NumericError):
    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass
class Models:
    generator: Generator
    discriminator: Discriminator | None
    g_opt: Adam
    d_opt: Adam | None
    variant: str

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"G/{k}": v for k, v in self.generator.state().items()}
        out.update(adam_arrays("G", self.g_opt.state))
        if self.discriminator is not None:
            out.update({f"D/{k}": v for k, v in self.discriminator.state().items()})
            out.update(adam_arrays("D", self.d_opt.state))
        return out


def build_models(config: RunConfig, variant: str | None = None, seed: int | None = None) -> Models:
    variant = variant or config.train.variant
    if variant not in VARIANTS:
        raise ConfigError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
    seed = config.seed if seed is None else seed
    t = config.train
    gen = Generator(config.generator_config(refine=variant == "histospeckle"))
    gen.init_params(seed * 2 + 0)
    disc = None
    d_opt = None
    if variant != "unet_baseline":
        disc = Discriminator(config.discriminator_config())
        disc.init_params(seed * 2 + 1)
        d_opt = Adam(disc.params, t.lr, t.beta1, t.beta2, t.eps)
    g_opt = Adam(gen.params, t.lr, t.beta1, t.beta2, t.eps)
    return Models(gen, disc, g_opt, d_opt, variant)


def generator_from_state(arrays: dict[str, np.ndarray], extent: int) -> Generator:
    """Rebuild a generator whose layout is inferred from checkpoint tensor shapes."""
    state = {k[2:]: v for k, v in arrays.items() if k.startswith("G/")} or dict(arrays)
    enc = []
    i = 1
    while f"enc{i}.weight" in state:
        enc.append(state[f"enc{i}.weight"].shape[0])
        i += 1
    dec = [state[f"dec{k}.weight"].shape[0] for k in range(1, len(enc) + 1)]
    refine = "tfrm1.shortcut.weight" in state
    tfrm = [state[f"tfrm{m}.main1.weight"].shape[0] for m in (1, 2, 3)] if refine else [1, 1, 1]
    gen = Generator(GeneratorConfig(extent=extent, encoder_channels=enc, decoder_channels=dec, tfrm_channels=tfrm, refine=refine))
    gen.load_state(state, dtype=np.float32)
    return gen


def save_models(path, models: Models) -> None:
    save_checkpoint(path, models.arrays())


def load_models(path, config: RunConfig, variant: str | None = None) -> Models:
    models = build_models(config, variant)
    arrays = load_checkpoint(path)
    models.generator.load_state({k[2:]: v for k, v in arrays.items() if k.startswith("G/")}, np.float32)
    restore_adam("G", arrays, models.g_opt.state)
    if models.discriminator is not None:
        models.discriminator.load_state({k[2:]: v for k, v in arrays.items() if k.startswith("D/")}, np.float32)
        restore_adam("D", arrays, models.d_opt.state)
    return models


def _batch_tensors(speckle: np.ndarray, label: np.ndarray) -> tuple[Tensor, Tensor]:
    x = Tensor(np.ascontiguousarray(speckle[:, None], dtype=np.float32))
    y = Tensor(np.ascontiguousarray(label[:, None], dtype=np.float32))
    return x, y


def _discriminator_update(models: Models, x: Tensor, y: Tensor, fake: Tensor) -> float:
    D = models.discriminator
    D.zero_grad()
    l_dis = discriminator_loss(D(y, x), D(fake.detach(), x))
    l_dis.backward()
    leaked = [n for n, p in models.generator.params.items() if p.grad is not None and np.any(p.grad)]
    if leaked:
        raise ContractError(f"discriminator step produced generator gradients: {leaked[:3]}")
    models.d_opt.step()
    D.zero_grad()
    return l_dis.item()


def train_step(
    speckle: np.ndarray,
    label: np.ndarray,
    models: Models,
    config: RunConfig,
    bank: KernelBank | None = None,
    update_discriminator: bool = True,
) -> dict[str, float]:
    """One discriminator update followed by one generator update; returns the loss values."""
    if len(speckle) == 0:
        raise ContractError("empty batch")
    bank = bank or config.hcu.build()
    weights = config.loss_weights()
    ms_cfg = config.ms_ssim_config()
    x, y = _batch_tensors(speckle, label)
    G, D = models.generator, models.discriminator
    G.train()
    row = dict.fromkeys(("L_Dis", "L_adv", "L_MI", "L_SSIM", "L_L1"), 0.0)

    if models.variant == "histospeckle":
        g1, g2, g3 = G(x)
        if update_discriminator:
            D.train()
            row["L_Dis"] = _discriminator_update(models, x, y, g3)
        G.zero_grad()
        adv = adversarial_g_loss(D(g3, x))
        mi, _ = mi_loss(y, g3, bank)
        s3 = ssim_loss_3scale(g1, g2, g3, y, ms_cfg)
        total = generator_total(adv, mi, s3, weights)
        row.update(L_adv=adv.item(), L_MI=mi.item(), L_SSIM=s3.item())
    elif models.variant == "pix2pix_baseline":
        out = G(x)
        if update_discriminator:
            D.train()
            row["L_Dis"] = _discriminator_update(models, x, y, out)
        G.zero_grad()
        adv = adversarial_g_loss(D(out, x))
        l1 = l1_loss(out, y)
        total = adv + l1 * config.losses.l1_pix2pix
        row.update(L_adv=adv.item(), L_L1=l1.item())
    else:
        out = G(x)
        G.zero_grad()
        s = 1.0 - ms_ssim(out, y, ms_cfg)
        l1 = l1_loss(out, y)
        total = s + l1 * config.losses.l1_unet
        row.update(L_SSIM=s.item(), L_L1=l1.item())

    total.backward()
    models.g_opt.step()
    G.zero_grad()
    if D is not None:
        D.zero_grad()
    row["L_Gen"] = total.item()
    row["L_total"] = row["L_Gen"] + row["L_Dis"]
    return row


def predict(generator, speckle: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode full-resolution predictions ``(n, H, W)``; ``generator`` may be any callable on arrays."""
    if not isinstance(generator, Generator):
        return np.asarray(generator(np.asarray(speckle)), dtype=np.float64)
    was_training = generator.training
    generator.eval()
    outs = []
    with no_grad():
        for start in range(0, len(speckle), batch_size):
            x = Tensor(np.ascontiguousarray(speckle[start : start + batch_size, None], dtype=np.float32))
            outs.append(generator.predict(x).data[:, 0])
    generator.train(was_training)
    return np.concatenate(outs).astype(np.float64)


def mean_histogram(images: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Smooth histogram averaged over images (each image weighted equally)."""
    probs = []
    for start in range(0, len(images), 64):
        probs.append(marginal(np.asarray(images[start : start + 64], dtype=np.float64), bank).probs.data)
    return np.concatenate(probs).mean(axis=0)


def emd_1d(p: np.ndarray, q: np.ndarray, bank: KernelBank) -> float:
    """Earth-mover distance between histograms on the bank's centers (CDF difference times bin spacing)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.abs(np.cumsum(p) - np.cumsum(q)).sum() / (bank.k - 1))


@dataclass
class FitResult:
    out_dir: Path
    rows: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    models: Models | None = None
    n_train: int = 0

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints[-1]


def select_training_set(preset: str, datasets: list[Dataset], config: RunConfig) -> Dataset:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    by_id = {ds.header["config_ids"][0]: ds for ds in datasets}
    primary = by_id.get(config.train.config_id, datasets[0])
    if preset == "full":
        return primary.split("train")
    if preset == "reduced30":
        train = primary.split("train")
        n = int(round(config.train.reduced_fraction * len(train)))
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 30])))
        pick = np.sort(rng.choice(len(train), n, replace=False))
        log.info("preset reduced30: using %d of %d training records (%.0f%% sample)", n, len(train), 100 * config.train.reduced_fraction)
        return train.subset(pick)
    count = config.train.per_config_count
    if count is None:
        count = int(round(PERTURBED_FRACTION * min(len(ds.split("train")) for ds in datasets)))
    log.info("preset perturbed: %d records from each of %d configurations", count, len(datasets))
    return compose_perturbed(datasets, count, config.seed)


def validation_set(preset: str, datasets: list[Dataset], config: RunConfig) -> Dataset:
    by_id = {ds.header["config_ids"][0]: ds for ds in datasets}
    if preset == "perturbed":
        parts = [ds.split("val").records for ds in datasets]
        return Dataset(datasets[0].header, np.concatenate(parts))
    return by_id.get(config.train.config_id, datasets[0]).split("val")


def fit(
    config: RunConfig,
    datasets: list[Dataset],
    out_dir,
    preset: str = "full",
    variant: str | None = None,
    progress: Callable[[dict], None] | None = None,
) -> FitResult:
    """Train from scratch and write ``metrics.csv`` plus checkpoints into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = config.train
    if t.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    train = select_training_set(preset, datasets, config)
    if len(train) == 0:
        raise ContractError("training split is empty")
    val = validation_set(preset, datasets, config)
    if t.val_records and len(val) > t.val_records:
        val = val.subset(np.arange(t.val_records))
    models = build_models(config, variant)
    bank = config.hcu.build()
    result = FitResult(out_dir, models=models, n_train=len(train))

    initial = out_dir / "ckpt_initial.hsck"
    save_models(initial, models)
    result.checkpoints.append(initial)
    truth_hist = mean_histogram(val.label, bank) if len(val) else None

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 1])))
    step = 0
    done = False
    with CsvAppender(out_dir / "metrics.csv", METRIC_COLUMNS) as metrics:
        for epoch in range(1, t.epochs + 1):
            order = rng.permutation(len(train))
            for start in range(0, len(order), t.batch_size):
                idx = np.sort(order[start : start + t.batch_size])
                batch = train.records[idx]
                try:
                    row = train_step(batch["speckle"], batch["label"], models, config, bank)
                except NumericError as exc:
                    diag = {
                        "step": step + 1,
                        "epoch": epoch,
                        "batch_positions": idx.tolist(),
                        "record_index": batch["index"].tolist(),
                        "config_id": batch["config_id"].tolist(),
                        "error": str(exc),
                    }
                    (out_dir / "nan_abort.json").write_text(json.dumps(diag, indent=2))
                    raise TrainingAborted(f"numeric abort at step {step + 1}: {exc}", diag) from exc
                step += 1
                row.update(step=step, epoch=epoch, val_ssim=float("nan"), hist_emd=float("nan"))
                last_of_epoch = start + t.batch_size >= len(order)
                hit_cap = t.max_steps is not None and step >= t.max_steps
                if (last_of_epoch and t.eval_every and epoch % t.eval_every == 0) or hit_cap:
                    if len(val):
                        pred = predict(models.generator, val.speckle)
                        row["val_ssim"] = float(ssim_metric(pred, val.label).mean())
                        row["hist_emd"] = emd_1d(mean_histogram(pred, bank), truth_hist, bank)
                    ck = out_dir / f"ckpt_step{step:06d}.hsck"
                    save_models(ck, models)
                    result.checkpoints.append(ck)
                metrics.write([row[c] for c in METRIC_COLUMNS])
                result.rows.append(row)
                if progress:
                    progress(row)
                if hit_cap:
                    done = True
                    break
            if done:
                break
    if step == 0:
        return result
    final = out_dir / "ckpt_final.hsck"
    save_models(final, models)
    result.checkpoints.append(final)
    return result


@dataclass
class EvalResult:
    mean_ssim: float
    ssim: np.ndarray
    per_config: dict[int, float]


def evaluate(generator, split: Dataset, out_dir=None, n_samples: int = 16, figures: bool = False, tag: str = "") -> EvalResult:
    """SSIM of generator predictions on ``split``; writes per-record CSV and PGM triptychs when ``out_dir`` is set."""
    if len(split) == 0:
        raise ContractError("cannot evaluate on an empty split")
    pred = predict(generator, split.speckle)
    scores = ssim_metric(pred, split.label)
    cids = split.config_id.astype(int)
    per_config = {int(c): float(scores[cids == c].mean()) for c in np.unique(cids)}
    res = EvalResult(float(scores.mean()), scores, per_config)
    if out_dir is None:
        return res
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = f"{tag}_" if tag else ""
    rows = [(int(i), int(c), float(s)) for i, c, s in zip(split.records["index"], cids, scores)]
    write_csv(out_dir / f"{prefix}ssim.csv", ("index", "config_id", "ssim"), rows)
    for c in per_config:
        sel = [r for r in rows if r[1] == c]
        write_csv(out_dir / f"{prefix}ssim_cf{c}.csv", ("index", "config_id", "ssim"), sel)
    write_csv(
        out_dir / f"{prefix}ssim_summary.csv",
        ("config_id", "n", "mean_ssim"),
        [(c, int((cids == c).sum()), v) for c, v in per_config.items()] + [("all", len(scores), res.mean_ssim)],
    )
    sample_dir = out_dir / f"{prefix}samples"
    sample_dir.mkdir(exist_ok=True)
    k = min(n_samples, len(split))
    for j in range(k):
        panel = triptych(split.speckle[j], split.label[j], pred[j])
        write_pgm(sample_dir / f"sample_{j:02d}.pgm", panel)
    if figures:
        from hspk import plotting

        plotting.plot_eval(out_dir / f"{prefix}eval.png", split.speckle[:k], split.label[:k], pred[:k], scores)
    return res


@dataclass
class HistogramReport:
    centers: np.ndarray
    truth: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    emd_initial: float
    emd_final: float


def histogram_report(initial_gen, final_gen, split: Dataset, bank: KernelBank = KernelBank(), out_dir=None, figures: bool = False) -> HistogramReport:
    """Smooth histograms of truth vs initial and final predictions, with 1-D EMD to the truth."""
    if len(split) == 0:
        raise ContractError("histogram report needs at least one record")
    truth = mean_histogram(split.label, bank)
    p_init = mean_histogram(np.clip(predict(initial_gen, split.speckle), 0, 1), bank)
    p_final = mean_histogram(np.clip(predict(final_gen, split.speckle), 0, 1), bank)
    rep = HistogramReport(bank.centers, truth, p_init, p_final, emd_1d(p_init, truth, bank), emd_1d(p_final, truth, bank))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(
            out_dir / "histogram.csv",
            ("bin", "center", "p_truth", "p_initial", "p_final"),
            [(i, c, a, b, d) for i, (c, a, b, d) in enumerate(zip(bank.centers, truth, p_init, p_final))],
        )
        write_csv(out_dir / "emd.csv", ("model", "emd_to_truth"), [("initial", rep.emd_initial), ("final", rep.emd_final)])
        if figures:
            from hspk import plotting

            plotting.plot_histograms(out_dir / "histogram.png", rep)
    return rep
