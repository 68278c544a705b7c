"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line.

The training criteria (6, 7, 8, 10) run the smoke profile and take several
minutes each.  Set ``HSPK_ACCEPTANCE_DIR`` to keep their artifacts, and
``HSPK_DESK_SCALE=1`` to run criterion 8 at the full desk scale (hours on a
single core).
"""

import io
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from hspk.autograd import Tensor, conv2d, grad_check, upsample_bilinear
from hspk.config import apply_overrides, smoke_config
from hspk.data import Dataset, build_dataset, gen_synthetic_labels, read_csv, read_npy, read_npy_archive, read_pgm, write_csv, write_npy, write_pgm
from hspk.data.checkpoint import load_checkpoint, save_checkpoint
from hspk.data.dataset import label_source_synthetic
from hspk.errors import FormatError
from hspk.experiments import run_comparison
from hspk.hcu import KernelBank, joint, kernel_weights, marginal
from hspk.losses import (
    C1,
    LossWeights,
    adversarial_g_loss,
    generator_total,
    mi_loss,
    ms_ssim,
    ms_ssim_terms,
    ssim_loss_3scale,
)
from hspk.networks import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from hspk.speckle import SpeckleConfig, TransmissionMatrix, build_tm, propagate, simulate_stats
from hspk.trainer import fit, generator_from_state, histogram_report

BANK = KernelBank()
SEEDS = (0, 1, 2)


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(f"\n{line}", file=sys.__stdout__, flush=True)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    keep = os.environ.get("HSPK_ACCEPTANCE_DIR")
    if keep:
        path = Path(keep)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def smoke_sets():
    """Three fiber configurations of 2,000 synthetic pairs at 32x32 (smoke scale)."""
    cfg = smoke_config()
    scfg = cfg.speckle.build()
    labels = gen_synthetic_labels(cfg.data.n_labels, scfg.camera_extent, cfg.data.label_seed)
    src = label_source_synthetic(cfg.data.n_labels, scfg.camera_extent, cfg.data.label_seed)
    tms = [build_tm(scfg.seed, scfg.n_outputs, scfg.n_inputs, c) for c in range(3)]
    return build_dataset(labels, tms, scfg, label_source=src)


@pytest.fixture(scope="module")
def smoke_runs(smoke_sets, workdir):
    """Seeded 500-step histospeckle smoke runs on configuration 0."""
    runs = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        runs[seed] = fit(smoke_config(seed), smoke_sets[:1], workdir / f"smoke_s{seed}")
        runs[seed].elapsed = time.perf_counter() - t0
    return runs


# -- 1 ---------------------------------------------------------------------------


def test_criterion_01_histogram_identities():
    t0 = time.perf_counter()
    r = np.random.default_rng(101)
    worst_sum = worst_marg = 0.0
    symmetric = True
    for _ in range(100):
        a, b = r.random((2, 16, 16))
        pa, pb = marginal(a, BANK).probs.data, marginal(b, BANK).probs.data
        jab = joint(a, b, BANK).probs.data
        jba = joint(b, a, BANK).probs.data
        worst_sum = max(worst_sum, abs(pa.sum() - 1), abs(pb.sum() - 1), abs(jab.sum() - 1))
        worst_marg = max(worst_marg, np.abs(jab.sum(axis=1) - pa).max(), np.abs(jab.sum(axis=0) - pb).max())
        symmetric &= jab.tobytes() == np.ascontiguousarray(jba.T).tobytes()
    elapsed = time.perf_counter() - t0
    ok = worst_sum < 1e-9 and worst_marg < 1e-9 and symmetric and elapsed < 30
    report(1, ok, f"max |sum-1| {worst_sum:.1e}, max marginalization error {worst_marg:.1e}, bitwise symmetric {symmetric}, {elapsed:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------------


def _full_objective_check(seed):
    # the complete generator objective, differentiated with respect to the speckle input
    gen = Generator(GeneratorConfig(extent=32, encoder_channels=[2, 4, 4, 4], tfrm_channels=[2, 2, 2]))
    gen.init_params(seed, dtype=np.float64)
    disc = Discriminator(DiscriminatorConfig([2, 4]))
    disc.init_params(seed + 10, dtype=np.float64)
    r = np.random.default_rng(seed)
    x = r.random((2, 1, 32, 32))
    y = Tensor(r.random((2, 1, 32, 32)))

    def objective(t):
        g1, g2, g3 = gen(t)
        return generator_total(adversarial_g_loss(disc(g3, t)), mi_loss(y, g3, BANK)[0], ssim_loss_3scale(g1, g2, g3, y), LossWeights())

    return grad_check(objective, x, indices=r.choice(x.size, 24, replace=False))


def _gradient_cases(seed):
    r = np.random.default_rng(seed)
    # histogram instances: 4x4 images in [0.05, 0.95] under fixed random projections of the bins
    img = r.uniform(0.05, 0.95, (4, 4))
    other = r.uniform(0.05, 0.95, (4, 4))
    proj = r.standard_normal(BANK.k)
    proj2 = r.standard_normal((BANK.k, BANK.k))
    mi_y, mi_g = r.random((8, 8)), r.uniform(0.05, 0.95, (8, 8))
    w = r.standard_normal((3, 2, 3, 3))
    xc = r.standard_normal((2, 2, 7, 7))
    up_x = r.standard_normal((1, 2, 4, 5))
    up_w = r.standard_normal((1, 2, 16, 20))
    a32, b32 = r.random((2, 32, 32))
    g1, g2, y = r.random((8, 8)), r.random((16, 16)), r.random((32, 32))
    probe32 = r.choice(32 * 32, 30, replace=False)
    return {
        "kernel_weights": lambda: grad_check(lambda t: (kernel_weights(t, BANK) * Tensor(proj)).sum(), img),
        "marginal": lambda: grad_check(lambda t: (marginal(t, BANK).probs * Tensor(proj)).sum(), img),
        "joint (first image)": lambda: grad_check(lambda t: (joint(t, Tensor(other), BANK).probs * Tensor(proj2)).sum(), img),
        "joint (second image)": lambda: grad_check(lambda t: (joint(Tensor(other), t, BANK).probs * Tensor(proj2)).sum(), img),
        "mi_loss": lambda: grad_check(lambda t: mi_loss(Tensor(mi_y), t, BANK)[0], mi_g),
        "ms_ssim": lambda: grad_check(lambda t: 1.0 - ms_ssim(t, Tensor(b32)), a32, indices=probe32, fd_dtype=np.longdouble),
        "ssim_loss_3scale": lambda: grad_check(
            lambda t: ssim_loss_3scale(Tensor(g1), Tensor(g2), t, Tensor(y)), a32, indices=probe32, fd_dtype=np.longdouble
        ),
        "conv2d input": lambda: grad_check(lambda t: (conv2d(t, Tensor(w), None, 2, 1) ** 2).sum(), xc),
        "conv2d weight": lambda: grad_check(lambda t: (conv2d(Tensor(xc), t, None, 2, 1) ** 2).sum(), w),
        "upsample": lambda: grad_check(lambda t: (upsample_bilinear(t, 4) * Tensor(up_w)).sum(), up_x),
        "full generator objective": lambda: _full_objective_check(seed),
    }


def test_criterion_02_gradient_suite():
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    for seed in SEEDS:
        for name, run in _gradient_cases(seed).items():
            worst[name] = max(worst.get(name, 0.0), run().max_rel_error)
    elapsed = time.perf_counter() - t0
    failing = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not failing and elapsed < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, ok, f"max relative error over {len(SEEDS)} seeds: {detail}; {elapsed:.0f}s")
    assert ok, failing


# -- 3 ---------------------------------------------------------------------------


def test_criterion_03_mi_identities():
    r = np.random.default_rng(303)
    low = high = np.inf
    for _ in range(100):
        y, g = r.random((2, 16, 16))
        loss, rep = mi_loss(y, g, BANK)
        low = min(low, loss.item() + 1e-9)
        high = min(high, float(rep.h_label) + 1e-9 - loss.item())
    worst_const = 0.0
    for _ in range(10):
        y = r.random((16, 16))
        h = float(mi_loss(y, y, BANK)[1].h_label)
        for level in (0.0, 0.5, 1.0):
            worst_const = max(worst_const, abs(mi_loss(y, np.full_like(y, level), BANK)[0].item() - h))
    ok = low >= 0 and high >= 0 and worst_const < 1e-6
    report(3, ok, f"min(L_MI + 1e-9) {low:.2e}, min(H(y) + 1e-9 - L_MI) {high:.2e}, constant-conditioner error {worst_const:.1e}")
    assert ok


# -- 4 ---------------------------------------------------------------------------


def test_criterion_04_ms_ssim_calibration():
    x = np.random.default_rng(404).random((64, 64))
    self_err = abs(ms_ssim(x, x).item() - 1.0)
    lum = ms_ssim_terms(np.zeros((32, 32)), np.ones((32, 32))).luminance.item()
    closed = C1 / (1.0 + C1)
    ok = self_err < 1e-9 and abs(lum - closed) < 1e-7 and abs(closed - 9.999e-5) < 1e-8
    report(4, ok, f"|ms_ssim(x,x) - 1| {self_err:.1e}, luminance(0 vs 1) {lum:.6e} vs closed form {closed:.6e}")
    assert ok


# -- 5 ---------------------------------------------------------------------------


def test_criterion_05_speckle_statistics():
    t0 = time.perf_counter()
    cfg = SpeckleConfig()
    rep = simulate_stats(cfg, realizations=3, seed=0)
    r = np.random.default_rng(505)
    n = 1024
    q, _ = np.linalg.qr(r.standard_normal((n, n)) + 1j * r.standard_normal((n, n)))
    energy_err = abs(propagate(r.random((32, 32)), TransmissionMatrix(q, 0, 0)).sum() - n)
    elapsed = time.perf_counter() - t0
    ok = cfg.n_outputs == 4096 and cfg.n_inputs == 1024 and rep.n_samples >= 10_000
    ok = ok and rep.ks_distance_exponential < 0.03 and energy_err < 1e-9 and elapsed < 60
    report(5, ok, f"M 4096, N 1024, {rep.n_samples} samples, KS {rep.ks_distance_exponential:.4f}, unitary energy error {energy_err:.1e}, {elapsed:.1f}s")
    assert ok


# -- 6 ---------------------------------------------------------------------------


def test_criterion_06_determinism(smoke_sets, smoke_runs, workdir):
    first = smoke_runs[0]
    second = fit(smoke_config(0), smoke_sets[:1], workdir / "smoke_s0_repeat")
    same_csv = (first.out_dir / "metrics.csv").read_bytes() == (second.out_dir / "metrics.csv").read_bytes()
    names_a = [p.name for p in first.checkpoints]
    names_b = [p.name for p in second.checkpoints]
    same_ck = names_a == names_b and all(a.read_bytes() == b.read_bytes() for a, b in zip(first.checkpoints, second.checkpoints))
    ok = same_csv and same_ck and len(first.rows) == 500
    report(6, ok, f"{len(first.rows)} steps twice: metrics identical {same_csv}, {len(names_a)} checkpoints identical {same_ck}")
    assert ok


# -- 7 ---------------------------------------------------------------------------


def test_criterion_07_histogram_alignment(smoke_sets, smoke_runs, workdir):
    test = smoke_sets[0].split("test")
    ratios, lines = [], []
    for seed, run in smoke_runs.items():
        g0 = load_checkpoint(run.checkpoints[0])
        g1 = load_checkpoint(run.final_checkpoint)
        rep = histogram_report(generator_from_state(g0, 32), generator_from_state(g1, 32), test, BANK, workdir / f"hist_s{seed}")
        ratios.append(rep.emd_final / rep.emd_initial)
        lines.append(f"s{seed} {rep.emd_initial:.4f}->{rep.emd_final:.4f}")
    median = float(np.median(ratios))
    elapsed = sum(r.elapsed for r in smoke_runs.values())
    ok = median <= 0.5 and elapsed < 900
    report(7, ok, f"median EMD ratio {median:.3f} (need <= 0.5); {', '.join(lines)}; training {elapsed:.0f}s")
    assert ok


def test_smoke_training_progress(smoke_runs):
    # companion check: generator loss over the last 50 steps below the first 50, majority of seeds
    wins = 0
    parts = []
    for seed, run in smoke_runs.items():
        gen = [r["L_Gen"] for r in run.rows]
        first, last = np.mean(gen[:50]), np.mean(gen[-50:])
        wins += last < first
        parts.append(f"s{seed} {first:.2f}->{last:.2f}")
    print(f"\nsmoke L_Gen first/last 50 steps: {', '.join(parts)}", file=sys.__stdout__)
    assert wins * 3 >= 2 * len(smoke_runs)


# -- 8 ---------------------------------------------------------------------------


def test_criterion_08_variant_comparison(smoke_sets, workdir, tmp_path_factory):
    """Soft-fail: the outcome is reported per preset; only the table structure is asserted."""
    if os.environ.get("HSPK_DESK_SCALE") == "1":
        from hspk.config import RunConfig

        config = RunConfig(figures=False)
        scfg = config.speckle.build()
        labels = gen_synthetic_labels(config.data.n_labels, scfg.camera_extent, config.data.label_seed)
        tms = [build_tm(scfg.seed, scfg.n_outputs, scfg.n_inputs, c) for c in range(3)]
        datasets = build_dataset(labels, tms, scfg)
        scale, test_records = "desk scale (5,000 train / 588 test per configuration, 20 epochs)", None
    else:
        config = apply_overrides(smoke_config(), {"figures": False, "train.max_steps": 200})
        datasets = smoke_sets
        scale, test_records = "reduced scale (smoke data, 200 steps per run)", 100
    t0 = time.perf_counter()
    table, summaries = run_comparison(config, datasets, workdir / "comparison", seeds=SEEDS, test_records=test_records)
    elapsed = time.perf_counter() - t0
    verdicts = []
    for s in summaries:
        verdicts.append(f"{s.preset} {'PASS' if s.passed else 'FAIL'} ({s.wins}/{s.seeds} seeds, {s.mean_histospeckle:.4f} vs {s.mean_baseline:.4f})")
    overall = all(s.passed for s in summaries)
    report(8, overall, f"[soft] {scale}: " + "; ".join(verdicts) + f"; {elapsed:.0f}s")
    header, rows = read_csv(workdir / "comparison" / "comparison.csv")
    assert [s.preset for s in summaries] == ["full", "reduced30", "perturbed"]
    assert all(s.seeds == len(SEEDS) for s in summaries)
    # one overall row per (preset, variant, seed) plus three per-configuration rows for each perturbed run
    assert len(rows) == 3 * 2 * len(SEEDS) + 2 * len(SEEDS) * 3


# -- 9 ---------------------------------------------------------------------------


def test_criterion_09_format_round_trips(smoke_sets, tmp_path):
    checks = {}
    ds = smoke_sets[0].subset(np.arange(50))
    ds.save(tmp_path / "a.hspk")
    back = Dataset.load(tmp_path / "a.hspk")
    back.save(tmp_path / "b.hspk")
    checks["dataset"] = back.records.tobytes() == ds.records.tobytes() and (tmp_path / "a.hspk").read_bytes() == (tmp_path / "b.hspk").read_bytes()

    arrays = {f"w{i}": np.random.default_rng(i).standard_normal((i + 1, 3)).astype(np.float32) for i in range(4)}
    save_checkpoint(tmp_path / "a.hsck", arrays)
    loaded = load_checkpoint(tmp_path / "a.hsck")
    save_checkpoint(tmp_path / "b.hsck", loaded)
    checks["checkpoint"] = all(loaded[k].tobytes() == v.tobytes() for k, v in arrays.items()) and (tmp_path / "a.hsck").read_bytes() == (
        tmp_path / "b.hsck"
    ).read_bytes()

    write_pgm(tmp_path / "a.pgm", ds.speckle[0])
    write_pgm(tmp_path / "b.pgm", read_pgm(tmp_path / "a.pgm"))
    checks["pgm"] = (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    write_csv(tmp_path / "a.csv", ["k", "v"], [(i, float(v)) for i, v in enumerate(ds.label[0, 0])])
    h, rows = read_csv(tmp_path / "a.csv")
    write_csv(tmp_path / "b.csv", h, rows)
    checks["csv"] = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes() and [float(r[1]) for r in rows] == [float(v) for v in ds.label[0, 0]]

    npy_ok = True
    for arr in (np.arange(6, dtype=np.uint8).reshape(2, 3), ds.label[:2], ds.label[:2].astype(np.float64)):
        write_npy(tmp_path / "a.npy", arr)
        again = read_npy(tmp_path / "a.npy")
        write_npy(tmp_path / "b.npy", again)
        ref = io.BytesIO()
        np.save(ref, arr)
        npy_ok &= again.tobytes() == arr.tobytes() and (tmp_path / "a.npy").read_bytes() == (tmp_path / "b.npy").read_bytes() == ref.getvalue()
    checks["npy"] = npy_ok

    np.savez_compressed(tmp_path / "c.npz", images=np.zeros((2, 4, 4), np.uint8))
    try:
        read_npy_archive(tmp_path / "c.npz")
        checks["compressed npz error"] = False
    except FormatError as exc:
        checks["compressed npz error"] = "compressed archives unsupported; re-save uncompressed" in str(exc)
    ok = all(checks.values())
    report(9, ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
    assert ok


# -- 10 --------------------------------------------------------------------------


def test_criterion_10_end_to_end_cli(workdir):
    root = workdir / "cli"
    common = ["--profile", "smoke", "--seed", "0"]

    def hspk(*args):
        proc = subprocess.run([sys.executable, "-m", "hspk", *map(str, args)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return dict(line.split("\t", 1) for line in proc.stdout.splitlines() if "\t" in line)

    t0 = time.perf_counter()
    hspk("gen-data", *common, "--out", root / "data")
    train = hspk("train", *common, "--set", "train.epochs=1", "--set", "train.max_steps=null", "--data-dir", root / "data", "--out", root / "train")
    ckpts = sorted((root / "train").glob("ckpt_step*.hsck"))
    ev = hspk("eval", *common, "--checkpoint", root / "train/ckpt_final.hsck", "--dataset", root / "data/cf0.hspk", "--split", "test", "--out", root / "eval")
    hist = hspk(
        "hist", *common, "--initial", root / "train/ckpt_initial.hsck", "--final", root / "train/ckpt_final.hsck", "--dataset", root / "data/cf0.hspk", "--out", root / "hist"
    )
    elapsed = time.perf_counter() - t0

    expected = [
        "data/cf0.hspk", "data/cf1.hspk", "data/cf2.hspk", "data/config.resolved",
        "train/metrics.csv", "train/ckpt_initial.hsck", "train/ckpt_final.hsck", "train/config.resolved", "train/losses.png",
        "eval/ssim.csv", "eval/ssim_cf0.csv", "eval/ssim_summary.csv", "eval/eval.png", "eval/config.resolved",
        *[f"eval/samples/sample_{i:02d}.pgm" for i in range(16)],
        "hist/histogram.csv", "hist/emd.csv", "hist/histogram.png", "hist/config.resolved",
    ]  # fmt: skip
    missing = [p for p in expected if not (root / p).is_file()]
    ok = not missing and len(ckpts) == 1 and elapsed < 600
    report(
        10,
        ok,
        f"gen-data -> train ({train['steps']} steps) -> eval (mean SSIM {ev['mean_ssim']}) -> hist (EMD {hist['emd_initial']} -> {hist['emd_final']}); "
        f"{len(expected) + len(ckpts) - len(missing)} files, missing {missing or 'none'}; {elapsed:.0f}s",
    )
    assert ok
