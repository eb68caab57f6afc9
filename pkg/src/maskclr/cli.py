"""``maskclr`` command-line entry point.

Every command parses and validates its full configuration (and checks that its
inputs exist) before writing anything.
"""
import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from maskclr import audio, probe, sweeps, synthetic, tensorio, trainer, viz
from maskclr.config import RunConfig
from maskclr.errors import (BatchSizeError, ConfigError, DataError, FormatError, MaskCLRError,
                            ParameterError, TaskError)

log = logging.getLogger("maskclr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5


def _load_config(args, base=None):
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = (base or RunConfig()).validate()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"probe.seed={args.seed}"]
    return cfg.with_overrides(overrides) if overrides else cfg


def _need(path, what):
    if path is None or not Path(path).exists():
        raise ConfigError(f"{what} {path!s} does not exist")
    return Path(path)


def _float_list(text, what):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"{what}: {text!r} is not a comma-separated list of numbers") from None
    if not vals:
        raise ParameterError(f"{what}: empty list")
    return vals


def _manifest_clips(path, cfg):
    paths = audio.read_manifest(_need(path, "manifest"))
    if not paths:
        raise DataError(f"manifest {path} lists no files")
    return trainer.load_corpus(paths, cfg.audio)


def _clips_or_synthetic(args, cfg):
    if args.manifest:
        return _manifest_clips(args.manifest, cfg)
    return synthetic.sine_corpus(n_clips=8, seed=cfg.train.seed)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


# ----------------------------------------------------------------- commands

def cmd_pretrain(args, kind="contrastive"):
    cfg = _load_config(args)
    out = Path(args.out)
    if args.resume:
        _need(args.resume, "checkpoint")
    clips = _manifest_clips(args.manifest, cfg)
    if kind == "contrastive" and cfg.train.batch_size < 2:
        raise BatchSizeError("batch size must be >= 2")
    tr = trainer.Trainer.resume(args.resume, clips) if args.resume else trainer.Trainer(cfg, clips, kind)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    steps = args.steps if args.steps is not None else cfg.train.steps
    try:
        losses = tr.train(steps, log_path=log_path, checkpoint_path=out)
    except FloatingPointError as exc:
        last = tr.history[-1] if tr.history else {}
        print(f"aborting: {exc}; last logged step {last}", file=sys.stderr)
        return EXIT_NUMERIC
    tr.save(out)
    final = losses[-1] if losses else float("nan")
    print(f"final loss {final:.6f} after {tr.step_count} steps -> {out}")
    return EXIT_OK


def cmd_mae_pretrain(args):
    return cmd_pretrain(args, kind="mae")


def cmd_embed(args):
    ckpt = trainer.load_checkpoint(_need(args.checkpoint, "checkpoint"))
    if ckpt.kind != "contrastive":
        raise ConfigError("embed needs a contrastive checkpoint (this one holds an MAE model)")
    clips = [audio.load_clip(p, ckpt.run_config.audio)
             for p in audio.read_manifest(_need(args.manifest, "manifest"))]
    if not clips:
        raise DataError("manifest lists no files")
    views = trainer.embed_views(clips, ckpt.params, ckpt.run_config.audio)
    table = {"features": views[ckpt.params.config.patches[0]]}
    if len(views) > 1:
        table.update({f"features_{k}": v for k, v in views.items()})
    tensorio.save_table(args.out, ckpt.run_config.to_text(), table)
    print(f"wrote {len(clips)} x {table['features'].shape[1]} features -> {args.out}")
    return EXIT_OK


def _probe_tasks(args, cfg):
    _, feats = tensorio.load_table(_need(args.features, "features"))
    _, labels = tensorio.load_table(_need(args.labels, "labels")) if args.labels else (None, feats)
    missing = [k for k in ("labels", "split_train", "split_valid", "split_test") if k not in labels]
    if missing:
        raise FormatError(f"label table lacks {missing}")
    views = {k[len("features_"):]: v for k, v in feats.items() if k.startswith("features_")}
    if not views:
        views = {"features": feats["features"]}
    want = cfg.probe.representation
    if want != "auto":
        if want not in views:
            raise ConfigError(f"representation {want!r} not in feature file (have {sorted(views)})")
        views = {want: views[want]}
    y = labels["labels"]
    try:
        return {name: probe.Task(cfg.probe.kind, x, y, labels["split_train"], labels["split_valid"],
                                 labels["split_test"]) for name, x in views.items()}
    except TaskError as exc:
        raise ConfigError(f"invalid task: {exc}") from None


def cmd_probe(args):
    cfg = _load_config(args)
    tasks = _probe_tasks(args, cfg)
    grid = probe.enumerate_grid() if cfg.probe.grid == "full" else probe.quick_grid()
    result = probe.run_grid_views(tasks, configs=grid, seed=cfg.probe.seed, max_epochs=cfg.probe.max_epochs,
                                  patience=cfg.probe.patience, workers=args.workers)
    probe.write_results(args.out, result)
    best = dataclasses.asdict(result.best_config)
    tests = ", ".join(f"{k}={v:.4f}" for k, v in sorted(result.test_metrics.items()))
    print(f"winner [{result.representation}] cell {result.best.index} {best}: "
          f"valid={result.best.valid_metric:.4f} test {tests}")
    return EXIT_OK


def cmd_sweep_mask(args):
    cfg = _load_config(args)
    ratios = _float_list(args.ratios, "--ratios")
    bad = [r for r in ratios if not 0.0 <= r < 1.0]
    if bad:
        raise ParameterError(f"mask ratios must lie in [0, 1): {bad}")
    clips = _clips_or_synthetic(args, cfg)
    rows = sweeps.mask_sweep(cfg, ratios, clips, sweeps.frequency_probe_data(seed=cfg.probe.seed + 1),
                             steps=args.steps)
    _write_csv(args.out, sweeps.MASK_FIELDS, rows)
    print(f"wrote {len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_sweep_batch(args):
    cfg = _load_config(args)
    sizes = _float_list(args.sizes, "--sizes")
    if any(s != int(s) or s < 2 for s in sizes):
        raise ParameterError(f"batch sizes must be integers >= 2: {sizes}")
    clips = _clips_or_synthetic(args, cfg)
    rows = sweeps.batch_sweep(cfg, [int(s) for s in sizes], clips,
                              sweeps.frequency_probe_data(seed=cfg.probe.seed + 1), steps=args.steps)
    _write_csv(args.out, sweeps.BATCH_FIELDS, rows)
    print(f"wrote {len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_mae_dump(args):
    ckpt = trainer.load_checkpoint(_need(args.checkpoint, "checkpoint"))
    if not ckpt.params.has_decoder:
        raise ConfigError("checkpoint has no MAE decoder")
    cfg = _load_config(args, base=ckpt.run_config)
    clips = _manifest_clips(args.manifest, cfg)
    rng = np.random.default_rng(cfg.train.seed)
    written = viz.dump_mae(clips, ckpt.params, cfg.train.mask_ratio, rng, args.out, cfg.audio)
    print(f"wrote {len(written)} images -> {args.out}")
    return EXIT_OK


def cmd_make_synthetic(args):
    out = Path(args.out)
    if args.task:
        clips, labels = synthetic.frequency_task(n_per_class=args.clips, seed=args.seed or 0)
    else:
        clips, labels = synthetic.sine_corpus(n_clips=args.clips, seed=args.seed or 0), None
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for clip in clips:
        name = f"{clip.source_id}.wav"
        audio.encode_wav(out / name, clip.samples, clip.sample_rate)
        names.append(name)
    (out / "manifest.txt").write_text("\n".join(names) + "\n")
    if labels is not None:
        tr, va, te = sweeps.split_indices(len(clips), args.seed or 0)
        tensorio.save_table(out / "labels.myna", "", {"labels": labels, "split_train": tr,
                                                      "split_valid": va, "split_test": te})
    print(f"wrote {len(clips)} clips -> {out / 'manifest.txt'}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file with [section] headers")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")
    common.add_argument("--seed", type=int, help="overrides train.seed and probe.seed")
    common.add_argument("--out", required=True, help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="maskclr", description="Masked-token contrastive pre-training, probing and ablations.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("pretrain", cmd_pretrain, "contrastive pre-training"),
                            ("mae-pretrain", cmd_mae_pretrain, "masked auto-encoder baseline")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--manifest", required=True)
        s.add_argument("--steps", type=int)
        s.add_argument("--log", help="training log CSV (default: <out>.csv)")
        s.add_argument("--resume", help="continue from this checkpoint")
        s.set_defaults(func=fn)

    s = sub.add_parser("embed", parents=[common], help="export clip embeddings")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("probe", parents=[common], help="probe grid search on a feature file")
    s.add_argument("--features", required=True)
    s.add_argument("--labels", help="tensor table with labels/split_* (default: the feature file)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("sweep-mask", parents=[common], help="masking-ratio ablation")
    s.add_argument("--ratios", default="0.1,0.3,0.5,0.7,0.9")
    s.add_argument("--manifest", help="pre-training clips (default: synthetic sine corpus)")
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_sweep_mask)

    s = sub.add_parser("sweep-batch", parents=[common], help="batch-size ablation")
    s.add_argument("--sizes", default="8,16,32")
    s.add_argument("--manifest", help="pre-training clips (default: synthetic sine corpus)")
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_sweep_batch)

    s = sub.add_parser("mae-dump", parents=[common], help="PGM input/reconstruction/overlay images")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_mae_dump)

    s = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic WAV corpus")
    s.add_argument("--clips", type=int, default=8, help="clips (or clips per class with --task)")
    s.add_argument("--task", action="store_true", help="labelled 4-class frequency task")
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError, BatchSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except MaskCLRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
