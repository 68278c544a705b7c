import numpy as np
import pytest

from hspk.data import read_csv
from hspk.experiments import TABLE_COLUMNS, PresetSummary, run_comparison, summarize
from conftest import tiny_config


def row(preset, variant, seed, v, eval_set="all"):
    return dict(preset=preset, variant=variant, seed=seed, eval_set=eval_set, n_test=10, mean_ssim=v)


def test_summarize_counts_wins():
    table = [
        row("full", "histospeckle", 0, 0.5),
        row("full", "unet_baseline", 0, 0.4),
        row("full", "histospeckle", 1, 0.3),
        row("full", "unet_baseline", 1, 0.4),
        row("full", "histospeckle", 2, 0.6),
        row("full", "unet_baseline", 2, 0.6),
        row("full", "histospeckle", 2, 0.0, eval_set="cf1"),
    ]
    (s,) = summarize(table)
    assert (s.preset, s.wins, s.seeds) == ("full", 2, 3)
    assert s.passed
    assert abs(s.mean_histospeckle - np.mean([0.5, 0.3, 0.6])) < 1e-15


@pytest.mark.parametrize("wins,seeds,ok", [(2, 3, True), (1, 3, False), (3, 3, True), (0, 0, True), (1, 2, False)])
def test_majority_rule(wins, seeds, ok):
    assert PresetSummary("p", wins, seeds, 0.0, 0.0).passed is ok


def test_run_comparison_tiny(tiny_sets, tmp_path):
    cfg = tiny_config(max_steps=1, per_config_count=6)
    table, summaries = run_comparison(cfg, tiny_sets, tmp_path, seeds=(0, 1), presets=("full", "perturbed"))
    header, rows = read_csv(tmp_path / "comparison.csv")
    assert tuple(header) == TABLE_COLUMNS
    # full: 2 variants x 2 seeds; perturbed: the same plus one row per configuration
    assert len(rows) == 4 + 4 * 4
    assert [s.preset for s in summaries] == ["full", "perturbed"]
    assert all(s.seeds == 2 for s in summaries)
    assert (tmp_path / "comparison_summary.csv").exists()
    assert {r["eval_set"] for r in table if r["preset"] == "perturbed"} == {"all", "cf0", "cf1", "cf2"}


def test_test_record_cap_applies_per_configuration(tiny_sets, tmp_path):
    cfg = tiny_config(max_steps=1, per_config_count=6)
    table, _ = run_comparison(cfg, tiny_sets, tmp_path, seeds=(0,), presets=("perturbed",), variants=("histospeckle",), test_records=2)
    n = {r["eval_set"]: r["n_test"] for r in table}
    assert n == {"all": 6, "cf0": 2, "cf1": 2, "cf2": 2}
