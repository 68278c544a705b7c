"""Command-line entry point: ``hspk gen-data | train | eval | hist | simulate | compare``.

Each command writes CSV/PGM (and, unless disabled, PNG) outputs into ``--out``
and prints tab-delimited ``key<TAB>value`` summary lines on stdout.

Exit codes: 0 success, 2 usage or configuration error, 3 data or format error,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from hspk import speckle as sp
from hspk.config import RunConfig, apply_overrides, dump_config, load_config, smoke_config
from hspk.data.checkpoint import load_checkpoint
from hspk.data.dataset import Dataset, build_dataset, generate_labels
from hspk.data.export import write_csv, write_pgm
from hspk.errors import ConfigError, HspkError
from hspk.trainer import PRESETS, VARIANTS, TrainingAborted, evaluate, fit, generator_from_state, histogram_report

log = logging.getLogger("hspk")


def emit(key: str, value) -> None:
    if isinstance(value, float):
        value = f"{value:.6f}"
    print(f"{key}\t{value}", flush=True)


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def resolve_config(args) -> RunConfig:
    if args.config:
        config = load_config(args.config)
    elif args.profile == "smoke":
        config = smoke_config()
    else:
        config = RunConfig()
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_figures:
        overrides["figures"] = False
    for flag, key in getattr(args, "_config_flags", ()):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return apply_overrides(config, overrides)


def _out_dir(args, config: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.resolved")
    return out


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return path


def _datasets(args, config: RunConfig) -> list[Dataset]:
    paths = list(args.dataset or [])
    if getattr(args, "data_dir", None):
        found = sorted(Path(args.data_dir).glob("cf*.hspk"))
        if not found:
            raise ConfigError(f"no cf*.hspk datasets in {args.data_dir}")
        paths += found
    if not paths:
        paths = list(config.data.paths or [])
    if not paths:
        raise ConfigError("no dataset given; use --dataset, --data-dir, or data.paths in the config")
    return [Dataset.load(_require(p)) for p in paths]


def _combined_split(datasets: list[Dataset], split: str, records: int | None) -> Dataset:
    parts = [ds.split(split).records[:records] for ds in datasets]
    return Dataset(datasets[0].header, np.concatenate(parts))


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = resolve_config(args)
    out = _out_dir(args, config)
    scfg = config.speckle.build()
    labels, source = generate_labels(config.data.labels, config.data.n_labels, scfg.camera_extent, config.data.label_seed)
    emit("labels", len(labels))
    emit("label_source", source["source"])
    ratios = config.data.split_ratios
    kwargs = {} if ratios is None else {"ratios": ratios}
    tms = [sp.build_tm(scfg.seed, scfg.n_outputs, scfg.n_inputs, config_id=c) for c in range(config.data.configs)]
    for ds in build_dataset(labels, tms, scfg, label_source=source, **kwargs):
        cid = ds.header["config_ids"][0]
        path = out / f"cf{cid}.hspk"
        ds.save(path)
        counts = [len(ds.split(s)) for s in ("train", "val", "test")]
        emit(f"cf{cid}", f"{path}\ttrain={counts[0]}\tval={counts[1]}\ttest={counts[2]}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    datasets = _datasets(args, config)
    out = _out_dir(args, config)
    try:
        result = fit(config, datasets, out, preset=args.preset)
    except TrainingAborted as exc:
        print(f"numeric abort: {exc}; diagnostic written to {out / 'nan_abort.json'}", file=sys.stderr)
        return exc.exit_code
    emit("train_records", result.n_train)
    emit("steps", len(result.rows))
    emit("metrics", out / "metrics.csv")
    emit("final_checkpoint", result.final_checkpoint)
    vals = [r["val_ssim"] for r in result.rows if r["val_ssim"] == r["val_ssim"]]
    if vals:
        emit("val_ssim", vals[-1])
    if config.figures and result.rows:
        from hspk import plotting

        plotting.plot_losses(out / "losses.png", result.rows)
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    datasets = [Dataset.load(_require(p)) for p in args.dataset]
    split = _combined_split(datasets, args.split, args.records)
    out = _out_dir(args, config)
    if args.model == "identity":
        # test double: returns the ground truth, whatever the speckle
        generator = lambda speckle: split.label  # noqa: E731
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --model identity)")
        generator = generator_from_state(load_checkpoint(_require(args.checkpoint)), split.extent)
    res = evaluate(generator, split, out, n_samples=args.samples, figures=config.figures)
    emit("records", len(split))
    emit("mean_ssim", res.mean_ssim)
    for cid, v in res.per_config.items():
        emit(f"mean_ssim_cf{cid}", v)
    return 0


def cmd_hist(args) -> int:
    config = resolve_config(args)
    datasets = [Dataset.load(_require(p)) for p in args.dataset]
    split = _combined_split(datasets, args.split, args.records)
    out = _out_dir(args, config)
    g0 = generator_from_state(load_checkpoint(_require(args.initial)), split.extent)
    g1 = generator_from_state(load_checkpoint(_require(args.final)), split.extent)
    rep = histogram_report(g0, g1, split, config.hcu.build(), out, figures=config.figures)
    emit("records", len(split))
    emit("emd_initial", rep.emd_initial)
    emit("emd_final", rep.emd_final)
    return 0


def cmd_simulate(args) -> int:
    config = resolve_config(args)
    scfg = config.speckle.build()
    out = _out_dir(args, config) if args.out else None
    if args.stats:
        frames = sp.simulate_frames(scfg, args.realizations, config.seed)
        rep = sp.stats_check(frames)
        emit("M", scfg.n_outputs)
        emit("N", scfg.n_inputs)
        emit("samples", rep.n_samples)
        emit("ks_distance", rep.ks_distance_exponential)
        emit("mean", rep.mean)
        emit("variance", rep.variance)
        emit("contrast", rep.contrast)
        emit("beta_a", rep.beta_a)
        emit("beta_b", rep.beta_b)
        if out is not None:
            write_csv(
                out / "speckle_stats.csv",
                ("ks_distance", "mean", "variance", "n_samples", "contrast", "beta_a", "beta_b"),
                [(rep.ks_distance_exponential, rep.mean, rep.variance, rep.n_samples, rep.contrast, rep.beta_a, rep.beta_b)],
            )
            if config.figures:
                from hspk import plotting

                plotting.plot_speckle_stats(out / "speckle_stats.png", frames, rep)
    if out is not None:
        labels, _ = generate_labels("synthetic", 1, scfg.camera_extent, config.data.label_seed)
        tm = sp.build_tm(scfg.seed, scfg.n_outputs, scfg.n_inputs, 0)
        images = sp.speckle_images(labels, tm, scfg)
        write_pgm(out / "speckle_sample.pgm", images[0])
        write_pgm(out / "label_sample.pgm", labels[0])
        emit("sample", out / "speckle_sample.pgm")
    return 0


def cmd_compare(args) -> int:
    from hspk.experiments import run_comparison

    config = resolve_config(args)
    datasets = _datasets(args, config)
    out = _out_dir(args, config)
    _, summaries = run_comparison(config, datasets, out, seeds=args.seeds, presets=args.presets, test_records=args.records)
    for s in summaries:
        emit(s.preset, f"wins={s.wins}/{s.seeds}\thistospeckle={s.mean_histospeckle:.4f}\tbaseline={s.mean_baseline:.4f}")
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--profile", choices=("default", "smoke"), default="default", help="built-in defaults when no --config is given")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value, e.g. train.epochs=1")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="hspk", description="Speckle-to-image reconstruction with histogram-aware losses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="simulate per-configuration speckle datasets")
    p.add_argument("--out", required=True)
    p.add_argument("--configs", type=int)
    p.add_argument("--labels", help="synthetic | npy:<path>")
    p.add_argument("--n-labels", type=int)
    p.set_defaults(func=cmd_gen_data, _config_flags=(("configs", "data.configs"), ("labels", "data.labels"), ("n_labels", "data.n_labels")))

    p = sub.add_parser("train", parents=[common], help="train a generator")
    p.add_argument("--preset", choices=PRESETS, default="full")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", action="append", help="HSPK1 file (repeat for several configurations)")
    p.add_argument("--data-dir", help="directory holding cf*.hspk files")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(
        func=cmd_train,
        _config_flags=(("variant", "train.variant"), ("epochs", "train.epochs"), ("max_steps", "train.max_steps")),
    )

    p = sub.add_parser("eval", parents=[common], help="SSIM of a checkpoint on a split")
    p.add_argument("--checkpoint")
    p.add_argument("--model", choices=("checkpoint", "identity"), default="checkpoint")
    p.add_argument("--dataset", action="append", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--records", type=int, help="cap on records per configuration")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hist", parents=[common], help="histogram alignment of initial vs final checkpoints")
    p.add_argument("--initial", required=True)
    p.add_argument("--final", required=True)
    p.add_argument("--dataset", action="append", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--records", type=int, help="cap on records per configuration")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("simulate", parents=[common], help="speckle simulator diagnostics")
    p.add_argument("--stats", action="store_true")
    p.add_argument("--realizations", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", parents=[common], help="variant comparison across presets and seeds")
    p.add_argument("--dataset", action="append")
    p.add_argument("--data-dir")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--presets", nargs="+", choices=PRESETS, default=list(PRESETS))
    p.add_argument("--records", type=int, help="cap on test records per configuration")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except HspkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
