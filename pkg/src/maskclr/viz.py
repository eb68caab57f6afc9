"""Grayscale PGM dumps of MAE inputs, reconstructions and overlays."""
from pathlib import Path

import numpy as np

from maskclr import audio, masking, vit


def to_gray(values, lo=None, hi=None):
    """Min-max scale to 0..255 (``lo``/``hi`` default to the array's own range)."""
    v = np.asarray(values, dtype=np.float64)
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.round(np.clip((v - lo) / (hi - lo), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def mae_panels(clip, params, ratio, rng, audio_cfg=audio.DEFAULT_AUDIO):
    """First-window spectrogram, its reconstruction, the overlay and the kept-pixel mask."""
    patch = params.config.patch_cfgs[0]
    seg = clip.samples[:audio_cfg.segment_samples]
    spec = audio.standardize_values(audio.log_mel(seg, audio_cfg))
    grid = masking.patchify(spec, patch)
    tokens = masking.sample_mask(grid, ratio, rng)
    recon_patches = vit.mae_forward(tokens, grid.total, params).data
    recon = masking.unpatchify_values(recon_patches, patch, grid.rows, grid.cols)
    kept = np.zeros((grid.total, patch.patch_size), dtype=bool)
    kept[tokens.kept_indices] = True
    kept = masking.unpatchify_values(kept, patch, grid.rows, grid.cols)
    overlay = np.where(kept, spec, recon)
    return spec, recon, overlay, kept


def dump_mae(clips, params, ratio, rng, out_dir, audio_cfg=audio.DEFAULT_AUDIO):
    """Write ``<stem>_input.pgm``, ``_recon.pgm`` and ``_overlay.pgm`` per clip.

    The overlay reuses the input's intensity range so kept pixels are byte-identical
    to the input image; reconstructed pixels outside that range are clipped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, clip in enumerate(clips):
        spec, recon, overlay, _ = mae_panels(clip, params, ratio, rng, audio_cfg)
        stem = f"{i:04d}_{Path(clip.source_id).stem or 'clip'}"
        lo, hi = float(spec.min()), float(spec.max())
        for suffix, img in (("input", to_gray(spec)), ("recon", to_gray(recon)),
                            ("overlay", to_gray(overlay, lo, hi))):
            p = out_dir / f"{stem}_{suffix}.pgm"
            write_pgm(p, img)
            written.append(p)
    return written
