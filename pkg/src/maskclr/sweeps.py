"""Short pre-train + fixed synthetic probe runs used by the ablation commands."""
import dataclasses
import statistics

import numpy as np

from maskclr import masking, probe, synthetic, trainer, vit

MASK_FIELDS = ("ratio", "loss", "probe_metric", "step_wall_ms", "flops_per_step")
BATCH_FIELDS = ("batch_size", "loss", "probe_metric", "step_wall_ms", "flops_per_step")

SWEEP_PROBE = probe.ProbeConfig(True, "linear", 64, 1e-3, 0.25, 0.0)


def split_indices(n, seed=0, fractions=(0.5, 0.25)):
    order = np.random.default_rng(seed).permutation(n)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return np.sort(order[:a]), np.sort(order[a:b]), np.sort(order[b:])


def frequency_probe_data(n_per_class=16, seed=1):
    clips, labels = synthetic.frequency_task(n_per_class=n_per_class, seed=seed)
    return clips, labels, split_indices(len(clips), seed)


def probe_accuracy(params, clips, labels, splits, configs=(SWEEP_PROBE,), seed=0, audio_cfg=None):
    """Test accuracy of the validation-selected probe on embeddings of the first patch config."""
    kw = {} if audio_cfg is None else {"audio_cfg": audio_cfg}
    feats = trainer.embed_many(clips, params, params.config.patch_cfgs[0], **kw)
    task = probe.Task("multiclass", feats, labels, *splits)
    return probe.run_grid(task, configs, seed=seed).test_metrics["accuracy"]


def flops_per_step(run_cfg):
    """Encoder forward FLOPs over every masked view processed in one step."""
    cfg = run_cfg.model_config()
    rows, cols = cfg.patch_cfgs[0].grid_shape(run_cfg.audio.n_mels, run_cfg.audio.frames)
    k = masking.kept_count(rows * cols, run_cfg.train.mask_ratio)
    return vit.flop_estimate(cfg, k) * 2 * run_cfg.train.batch_size * len(cfg.patch_cfgs)


def short_run(run_cfg, clips, probe_data, steps=None, tail=10):
    tr = trainer.Trainer(run_cfg, clips)
    losses = tr.train(steps)
    walls = [r["wall_ms"] for r in tr.history]
    acc = probe_accuracy(tr.params, *probe_data, seed=run_cfg.probe.seed, audio_cfg=run_cfg.audio)
    return {
        "loss": float(np.mean(losses[-tail:])) if losses else float("nan"),
        "probe_metric": acc,
        "step_wall_ms": statistics.median(walls) if walls else 0.0,
        "flops_per_step": flops_per_step(run_cfg),
    }


def mask_sweep(run_cfg, ratios, clips, probe_data, steps=None):
    rows = []
    for r in ratios:
        cfg = run_cfg.replace(train=dataclasses.replace(run_cfg.train, mask_ratio=float(r)))
        rows.append({"ratio": float(r), **short_run(cfg.validate(), clips, probe_data, steps)})
    return rows


def batch_sweep(run_cfg, sizes, clips, probe_data, steps=None):
    rows = []
    for b in sizes:
        cfg = run_cfg.replace(train=dataclasses.replace(run_cfg.train, batch_size=int(b)))
        rows.append({"batch_size": int(b), **short_run(cfg.validate(), clips, probe_data, steps)})
    return rows
