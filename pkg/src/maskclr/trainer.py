"""Contrastive (and MAE baseline) pre-training loop with checkpointing."""
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from maskclr import audio, autodiff as ad, masking, objectives, tensorio, vit
from maskclr.config import RunConfig
from maskclr.errors import BatchSizeError, ConfigError, DataError, FormatError, TooShortError
from maskclr.optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "loss", "lr", "tokens_kept", "wall_ms")


# ----------------------------------------------------------------- data

def load_corpus(paths, cfg=audio.DEFAULT_AUDIO):
    """Decode and resample every file; clips shorter than one segment are skipped."""
    clips = []
    for path in paths:
        clip = audio.load_clip(path, cfg)
        if len(clip.samples) < cfg.segment_samples:
            log.warning("skipping %s: %.2fs is shorter than %.1fs", path, clip.duration, cfg.segment_seconds)
            continue
        clips.append(clip)
    if not clips:
        raise DataError("no usable clips (empty manifest or every clip too short)")
    return clips


def sample_batch(n_clips, batch_size, rng):
    """Clip indices for one batch: without replacement when possible, else whole permutations."""
    if batch_size <= n_clips:
        return rng.choice(n_clips, size=batch_size, replace=False)
    reps = -(-batch_size // n_clips)
    return np.concatenate([rng.permutation(n_clips) for _ in range(reps)])[:batch_size]


def view_spectrograms(clips, rng, cfg=audio.DEFAULT_AUDIO):
    """Standardised log-mels for both segments of each clip: (2B, mels, frames), view 1 first."""
    first, second = [], []
    for clip in clips:
        s1, s2 = audio.select_segments(clip, rng, cfg)
        first.append(s1.samples)
        second.append(s2.samples)
    return audio.standardize_values(audio.log_mel(np.stack(first + second), cfg))


def masked_tokens(mels, patch, ratio, rng):
    """Patchify (N, H, W) grids and keep an independent uniform subset per row."""
    patches = masking.patchify_values(mels, patch)
    n, total = patches.shape[:2]
    rows, cols = patch.grid_shape(*mels.shape[-2:])
    kept = np.stack([masking.sample_indices(total, ratio, rng) for _ in range(n)])
    values = np.take_along_axis(patches, kept[..., None], axis=1)
    coords = np.stack(np.divmod(kept, cols), axis=-1)
    return values, coords, (rows, cols), kept, patches


def full_tokens(mels, patch):
    patches = masking.patchify_values(mels, patch)
    n, total = patches.shape[:2]
    rows, cols = patch.grid_shape(*mels.shape[-2:])
    coords = np.broadcast_to(np.stack(np.divmod(np.arange(total), cols), axis=-1), (n, total, 2))
    return patches, coords, (rows, cols)


# ----------------------------------------------------------------- steps

def branch_loss(mels, patch, params, cfg, rng):
    values, coords, grid, kept, _ = masked_tokens(mels, patch, cfg.mask_ratio, rng)
    n = mels.shape[0] // 2
    z = vit.project_and_normalize(vit.encode(vit.tokenize((values, coords, grid), patch, params), params), params)
    loss = objectives.info_nce(ad.gather_rows(z, np.arange(n)), ad.gather_rows(z, np.arange(n, 2 * n)),
                               cfg.objective)
    return loss, kept.size


def contrastive_loss(clips, params, cfg, rng, audio_cfg=audio.DEFAULT_AUDIO):
    """Forward pass of one pre-training step; returns ``(loss tensor, tokens fed to the encoder)``."""
    if len(clips) < 2:
        raise BatchSizeError(f"a contrastive batch needs at least 2 clips, got {len(clips)}")
    mels = view_spectrograms(clips, rng, audio_cfg)
    losses, tokens = [], 0
    for patch in params.config.patch_cfgs:
        loss, k = branch_loss(mels, patch, params, cfg, rng)
        losses.append(loss)
        tokens += k
    if len(losses) == 2:
        return objectives.hybrid_loss(*losses), tokens
    return losses[0], tokens


def pretrain_step(clips, params, cfg, rng, opt, audio_cfg=audio.DEFAULT_AUDIO):
    """Segments -> log-mel -> patches -> masks -> encoder/projector -> InfoNCE -> Adam."""
    params.zero_grad()
    loss, tokens = contrastive_loss(clips, params, cfg, rng, audio_cfg)
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} at step {opt.step + 1}")
    ad.backward(loss)
    adam_step(params, opt, cfg.lr, cfg.weight_decay)
    return value, tokens


def mae_loss_batch(clips, params, cfg, rng, audio_cfg=audio.DEFAULT_AUDIO):
    mels = view_spectrograms(clips, rng, audio_cfg)[:len(clips)]
    patch = params.config.patch_cfgs[0]
    values, coords, grid, kept, patches = masked_tokens(mels, patch, cfg.mask_ratio, rng)
    recon = vit.mae_forward((values, coords, grid), patches.shape[1], params, kept_indices=kept)
    return objectives.mae_loss(recon, patches, kept), kept.size


def mae_step(clips, params, cfg, rng, opt, audio_cfg=audio.DEFAULT_AUDIO):
    params.zero_grad()
    loss, tokens = mae_loss_batch(clips, params, cfg, rng, audio_cfg)
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} at step {opt.step + 1}")
    ad.backward(loss)
    adam_step(params, opt, cfg.lr, cfg.weight_decay)
    return value, tokens


# ----------------------------------------------------------------- embeddings

def embed_many(clips, params, patch, audio_cfg=audio.DEFAULT_AUDIO, chunk=64):
    """Encoder output averaged over consecutive 3 s windows, no masking, no projector."""
    n = audio_cfg.segment_samples
    windows, owner = [], []
    for i, clip in enumerate(clips):
        count = len(clip.samples) // n
        if count == 0:
            raise TooShortError(f"clip {clip.source_id!r} is shorter than {audio_cfg.segment_seconds}s")
        windows += [clip.samples[j * n:(j + 1) * n] for j in range(count)]
        owner += [i] * count
    owner = np.asarray(owner)
    feats = np.zeros((len(windows), params.config.dim), dtype=np.float64)
    for start in range(0, len(windows), chunk):
        mels = audio.standardize_values(audio.log_mel(np.stack(windows[start:start + chunk]), audio_cfg))
        values, coords, grid = full_tokens(mels, patch)
        h = vit.encode(vit.tokenize((values, coords, grid), patch, params), params)
        feats[start:start + len(mels)] = h.data
    out = np.zeros((len(clips), params.config.dim), dtype=np.float64)
    np.add.at(out, owner, feats)
    return (out / np.bincount(owner, minlength=len(clips))[:, None]).astype(np.float32)


def embed(clip, params, patch, audio_cfg=audio.DEFAULT_AUDIO):
    return embed_many([clip], params, patch, audio_cfg)[0]


def embed_views(clips, params, audio_cfg=audio.DEFAULT_AUDIO):
    """Per-representation features; hybrid models add the concatenation of both."""
    views = {p.name: embed_many(clips, params, p, audio_cfg) for p in params.config.patch_cfgs}
    if len(views) == 2:
        views["concat"] = np.concatenate([views["square"], views["vertical"]], axis=1)
    return views


# ----------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    run_config: RunConfig
    params: vit.ModelParams
    opt: AdamState
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    kind: str = "contrastive"


def _split_state(text):
    body, marker, state = text.partition("\n[state]\n")
    if not marker:
        raise FormatError("checkpoint config blob has no [state] section")
    info = {}
    for line in state.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            info[k.strip()] = v.strip()
    return body, info


def save_checkpoint(path, ckpt):
    text = ckpt.run_config.to_text() + "\n[state]\n"
    text += f"kind = {ckpt.kind}\nstep = {ckpt.step}\nrng = {json.dumps(ckpt.rng_state, sort_keys=True)}\n"
    table = {f"param/{n}": t.data for n, t in ckpt.params.items()}
    table.update(ckpt.opt.tensors())
    tensorio.save_table(path, text, table)


def load_checkpoint(path):
    text, table = tensorio.load_table(path)
    body, state = _split_state(text)
    run_cfg = RunConfig.from_text(body, source=f"{path} (embedded config)")
    kind = state.get("kind", "contrastive")
    step = int(state.get("step", 0))
    tensors = {k[len("param/"):]: v for k, v in table.items() if k.startswith("param/")}
    params = vit.ModelParams(run_cfg.model_config(), {n: ad.parameter(v, n) for n, v in tensors.items()})
    _check_params(params, kind)
    opt = AdamState.from_tensors(table, step)
    return Checkpoint(run_cfg, params, opt, step, json.loads(state.get("rng", "{}")), kind)


def _check_params(params, kind):
    ref = vit.init_params(params.config, np.random.default_rng(0), with_decoder=(kind == "mae"),
                          with_projector=(kind != "mae"))
    if set(ref.tensors) != set(params.tensors):
        missing = sorted(set(ref.tensors) - set(params.tensors))[:3]
        extra = sorted(set(params.tensors) - set(ref.tensors))[:3]
        raise ConfigError(f"checkpoint tensors do not match the model config (missing {missing}, extra {extra})")
    for name, t in ref.items():
        if params[name].shape != t.shape:
            raise ConfigError(f"{name}: checkpoint shape {params[name].shape} != model shape {t.shape}")


# ----------------------------------------------------------------- driver

class Trainer:
    """Owns params, optimiser state and the single random stream for a run."""

    def __init__(self, run_cfg, clips, kind="contrastive", checkpoint=None):
        self.cfg = run_cfg
        self.clips = clips
        self.kind = kind
        if checkpoint is not None:
            self.params = checkpoint.params
            self.opt = checkpoint.opt
            self.step_count = checkpoint.step
            self.rng = np.random.default_rng()
            self.rng.bit_generator.state = checkpoint.rng_state
        else:
            self.rng = np.random.default_rng(run_cfg.train.seed)
            self.params = vit.init_params(run_cfg.model_config(), self.rng, with_decoder=(kind == "mae"),
                                          with_projector=(kind != "mae"))
            self.opt = AdamState()
            self.step_count = 0
        self.history = []

    @classmethod
    def resume(cls, path, clips):
        ckpt = load_checkpoint(path)
        return cls(ckpt.run_config, clips, ckpt.kind, ckpt)

    def step(self):
        tc = self.cfg.train
        idx = sample_batch(len(self.clips), tc.batch_size, self.rng)
        batch = [self.clips[i] for i in idx]
        t0 = time.perf_counter()
        fn = mae_step if self.kind == "mae" else pretrain_step
        loss, tokens = fn(batch, self.params, tc, self.rng, self.opt, self.cfg.audio)
        self.step_count += 1
        row = {"step": self.step_count, "loss": loss, "lr": tc.lr, "tokens_kept": tokens,
               "wall_ms": (time.perf_counter() - t0) * 1e3}
        self.history.append(row)
        return loss

    def train(self, steps=None, log_path=None, checkpoint_path=None):
        steps = self.cfg.train.steps if steps is None else steps
        writer = None
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            new = not log_path.exists()
            fh = open(log_path, "a", newline="")
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            if new:
                writer.writeheader()
        try:
            for _ in range(steps):
                self.step()
                if writer is not None:
                    row = dict(self.history[-1])
                    row["loss"] = f"{row['loss']:.6f}"
                    row["wall_ms"] = f"{row['wall_ms']:.2f}"
                    writer.writerow(row)
                every = self.cfg.train.checkpoint_every
                if checkpoint_path and every and self.step_count % every == 0:
                    self.save(checkpoint_path)
        finally:
            if fh is not None:
                fh.close()
        return [r["loss"] for r in self.history]

    def checkpoint(self):
        return Checkpoint(self.cfg, self.params, self.opt, self.step_count,
                          self.rng.bit_generator.state, self.kind)

    def save(self, path):
        save_checkpoint(path, self.checkpoint())
