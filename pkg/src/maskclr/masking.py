"""Patch grids over spectrograms and uniform random token subsets."""
from dataclasses import dataclass

import numpy as np

from maskclr.errors import ParameterError, ShapeError


@dataclass(frozen=True)
class PatchConfig:
    name: str
    patch_h: int
    patch_w: int

    @property
    def patch_size(self):
        return self.patch_h * self.patch_w

    def grid_shape(self, n_mels=128, frames=96):
        if n_mels % self.patch_h or frames % self.patch_w:
            raise ShapeError(
                f"{n_mels}x{frames} spectrogram is not divisible into {self.patch_h}x{self.patch_w} patches")
        return n_mels // self.patch_h, frames // self.patch_w


SQUARE = PatchConfig("square", 16, 16)
VERTICAL = PatchConfig("vertical", 128, 2)
PATCH_CONFIGS = {SQUARE.name: SQUARE, VERTICAL.name: VERTICAL}


def patch_config(name):
    try:
        return PATCH_CONFIGS[name]
    except KeyError:
        raise ParameterError(f"unknown patch config {name!r}; expected one of {sorted(PATCH_CONFIGS)}") from None


@dataclass
class PatchGrid:
    patches: np.ndarray  # (T, patch_h*patch_w)
    rows: int
    cols: int

    @property
    def total(self):
        return self.rows * self.cols

    @property
    def coords(self):
        r, c = np.divmod(np.arange(self.total), self.cols)
        return np.stack([r, c], axis=1)


@dataclass
class TokenSet:
    kept_indices: np.ndarray
    values: np.ndarray
    coords: np.ndarray
    mask_ratio: float
    rows: int
    cols: int

    @property
    def total(self):
        return self.rows * self.cols


def patchify_values(values, cfg):
    """(..., H, W) grids to (..., T, patch_h*patch_w) in row-major patch order."""
    values = np.asarray(values)
    h, w = values.shape[-2:]
    rows, cols = cfg.grid_shape(h, w)
    lead = values.shape[:-2]
    x = values.reshape(*lead, rows, cfg.patch_h, cols, cfg.patch_w)
    x = np.moveaxis(x, -3, -2)  # (..., rows, cols, ph, pw)
    return np.ascontiguousarray(x.reshape(*lead, rows * cols, cfg.patch_size))


def unpatchify_values(patches, cfg, rows, cols):
    lead = patches.shape[:-2]
    x = patches.reshape(*lead, rows, cols, cfg.patch_h, cfg.patch_w)
    x = np.moveaxis(x, -2, -3)
    return np.ascontiguousarray(x.reshape(*lead, rows * cfg.patch_h, cols * cfg.patch_w))


def patchify(spec, cfg):
    values = getattr(spec, "values", spec)
    rows, cols = cfg.grid_shape(*values.shape)
    return PatchGrid(patchify_values(values, cfg), rows, cols)


def kept_count(total, ratio):
    """Tokens surviving masking: max(1, round-half-up((1 - ratio) * total))."""
    return max(1, int(np.floor((1.0 - ratio) * total + 0.5)))


def sample_indices(total, ratio, rng):
    if not 0.0 <= ratio < 1.0:
        raise ParameterError(f"mask ratio must lie in [0, 1), got {ratio}")
    k = kept_count(total, ratio)
    return np.sort(rng.choice(total, size=k, replace=False))


def sample_mask(grid, ratio, rng):
    idx = sample_indices(grid.total, ratio, rng)
    return TokenSet(idx, grid.patches[idx], grid.coords[idx], ratio, grid.rows, grid.cols)
