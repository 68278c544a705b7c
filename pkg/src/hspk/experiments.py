"""Variant comparison across training presets and seeds (the scaled-down benchmark table)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hspk.config import RunConfig, apply_overrides
from hspk.data.dataset import Dataset
from hspk.data.export import write_csv
from hspk.trainer import evaluate, fit

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("preset", "variant", "seed", "eval_set", "n_test", "mean_ssim")


@dataclass
class PresetSummary:
    preset: str
    wins: int
    seeds: int
    mean_histospeckle: float
    mean_baseline: float

    @property
    def passed(self) -> bool:
        return self.wins * 3 >= self.seeds * 2


def _test_split(preset: str, datasets: list[Dataset], config: RunConfig) -> Dataset:
    if preset == "perturbed":
        return Dataset(datasets[0].header, np.concatenate([ds.split("test").records for ds in datasets]))
    by_id = {ds.header["config_ids"][0]: ds for ds in datasets}
    return by_id.get(config.train.config_id, datasets[0]).split("test")


def run_comparison(
    config: RunConfig,
    datasets: list[Dataset],
    out_dir,
    seeds: Sequence[int] = (0, 1, 2),
    presets: Sequence[str] = ("full", "reduced30", "perturbed"),
    variants: Sequence[str] = ("histospeckle", "unet_baseline"),
    test_records: int | None = None,
) -> tuple[list[dict], list[PresetSummary]]:
    """Train every (preset, variant, seed), evaluate on the test split(s), and write ``comparison.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = []
    for preset in presets:
        test = _test_split(preset, datasets, config)
        if test_records is not None:
            # cap each configuration separately so a combined split keeps every configuration
            keep = [np.flatnonzero(test.config_id == c)[:test_records] for c in np.unique(test.config_id)]
            test = test.subset(np.sort(np.concatenate(keep)))
        for variant in variants:
            for seed in seeds:
                run_cfg = apply_overrides(config, {"seed": seed, "train.variant": variant})
                run_dir = out_dir / f"{preset}_{variant}_s{seed}"
                result = fit(run_cfg, datasets, run_dir, preset=preset)
                gen = result.models.generator
                res = evaluate(gen, test, run_dir / "eval")
                log.info("%s %s seed %d: mean test SSIM %.4f", preset, variant, seed, res.mean_ssim)
                table.append(dict(preset=preset, variant=variant, seed=seed, eval_set="all", n_test=len(test), mean_ssim=res.mean_ssim))
                if preset == "perturbed":
                    for cid, v in res.per_config.items():
                        n = int((test.config_id == cid).sum())
                        table.append(dict(preset=preset, variant=variant, seed=seed, eval_set=f"cf{cid}", n_test=n, mean_ssim=v))
    write_csv(out_dir / "comparison.csv", TABLE_COLUMNS, [[r[c] for c in TABLE_COLUMNS] for r in table])
    summaries = summarize(table, variants[0], variants[-1])
    write_csv(
        out_dir / "comparison_summary.csv",
        ("preset", "wins", "seeds", "mean_histospeckle", "mean_baseline", "passed"),
        [(s.preset, s.wins, s.seeds, s.mean_histospeckle, s.mean_baseline, int(s.passed)) for s in summaries],
    )
    if config.figures:
        from hspk import plotting

        plotting.plot_comparison(out_dir / "comparison.png", [r for r in table if r["eval_set"] == "all"])
    return table, summaries


def summarize(table: list[dict], variant: str = "histospeckle", baseline: str = "unet_baseline") -> list[PresetSummary]:
    """Per preset: number of seeds where ``variant`` scores at least ``baseline``."""
    out = []
    rows = [r for r in table if r["eval_set"] == "all"]
    for preset in dict.fromkeys(r["preset"] for r in rows):
        ours = {r["seed"]: r["mean_ssim"] for r in rows if r["preset"] == preset and r["variant"] == variant}
        base = {r["seed"]: r["mean_ssim"] for r in rows if r["preset"] == preset and r["variant"] == baseline}
        seeds = sorted(set(ours) & set(base))
        wins = sum(ours[s] >= base[s] for s in seeds)
        out.append(
            PresetSummary(
                preset,
                wins,
                len(seeds),
                float(np.mean([ours[s] for s in seeds])) if seeds else float("nan"),
                float(np.mean([base[s] for s in seeds])) if seeds else float("nan"),
            )
        )
    return out
