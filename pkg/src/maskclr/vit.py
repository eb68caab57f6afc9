"""SimpleViT-style encoder over patch tokens, projector head and MAE decoder.

Parameters live in a flat ``{name: Tensor}`` table so the checkpoint writer can
serialise them without knowing the model structure.
"""
import functools
import math
from dataclasses import dataclass

import numpy as np

from maskclr import autodiff as ad
from maskclr.errors import ConfigError
from maskclr.masking import patch_config


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    proj_dim: int = 128
    patches: tuple = ("square",)
    decoder_depth: int = 2
    decoder_dim: int = 0  # 0 means dim // 2

    def __post_init__(self):
        if isinstance(self.patches, str):
            object.__setattr__(self, "patches", tuple(p.strip() for p in self.patches.split(",") if p.strip()))
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4:
            raise ConfigError(f"dim {self.dim} must be divisible by 4 for 2-D positional encodings")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not 1 <= len(self.patches) <= 2 or len(set(self.patches)) != len(self.patches):
            raise ConfigError(f"patches must name one or two distinct configs, got {self.patches}")
        for name in self.patches:
            patch_config(name)
        if self.dec_dim % 4:
            raise ConfigError(f"decoder width {self.dec_dim} must be divisible by 4")

    @property
    def dec_dim(self):
        return self.decoder_dim or self.dim // 2

    @property
    def dec_heads(self):
        return self.heads if self.dec_dim % self.heads == 0 else 1

    @property
    def patch_cfgs(self):
        return tuple(patch_config(n) for n in self.patches)


DESK = ModelConfig()
VIT_S = ModelConfig(dim=384, depth=12, heads=6, patches=("square", "vertical"))


class ModelParams:
    """Ordered name -> Tensor table plus the config that shaped it."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def has_decoder(self):
        return "dec.head.w" in self.tensors

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def count(self, prefix=""):
        return sum(t.size for n, t in self.tensors.items() if n.startswith(prefix))

    def copy(self):
        return ModelParams(self.config, {n: ad.parameter(t.data.copy(), n) for n, t in self.tensors.items()})


# ----------------------------------------------------------------- initialisation

def _xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _linear(t, rng, prefix, fan_in, fan_out):
    t[f"{prefix}.w"] = _xavier(rng, fan_in, fan_out)
    t[f"{prefix}.b"] = np.zeros(fan_out)


def _block(t, rng, prefix, dim, mlp_ratio):
    t[f"{prefix}.ln1.g"] = np.ones(dim)
    t[f"{prefix}.ln1.b"] = np.zeros(dim)
    _linear(t, rng, f"{prefix}.qkv", dim, 3 * dim)
    _linear(t, rng, f"{prefix}.out", dim, dim)
    t[f"{prefix}.ln2.g"] = np.ones(dim)
    t[f"{prefix}.ln2.b"] = np.zeros(dim)
    _linear(t, rng, f"{prefix}.fc1", dim, dim * mlp_ratio)
    _linear(t, rng, f"{prefix}.fc2", dim * mlp_ratio, dim)


def init_params(cfg, rng, with_decoder=False, with_projector=True):
    t = {}
    for p in cfg.patch_cfgs:
        _linear(t, rng, f"tok.{p.name}", p.patch_size, cfg.dim)
    for i in range(cfg.depth):
        _block(t, rng, f"enc.{i}", cfg.dim, cfg.mlp_ratio)
    t["enc.ln.g"] = np.ones(cfg.dim)
    t["enc.ln.b"] = np.zeros(cfg.dim)
    if with_projector:
        _linear(t, rng, "proj.fc1", cfg.dim, cfg.dim)
        _linear(t, rng, "proj.fc2", cfg.dim, cfg.proj_dim)
    if with_decoder:
        dd = cfg.dec_dim
        patch = cfg.patch_cfgs[0].patch_size
        _linear(t, rng, "dec.embed", cfg.dim, dd)
        t["dec.mask_token"] = rng.normal(0.0, 0.02, size=dd)
        for i in range(cfg.decoder_depth):
            _block(t, rng, f"dec.{i}", dd, cfg.mlp_ratio)
        t["dec.ln.g"] = np.ones(dd)
        t["dec.ln.b"] = np.zeros(dd)
        _linear(t, rng, "dec.head", dd, patch)
    return ModelParams(cfg, {n: ad.parameter(v, n) for n, v in t.items()})


# ----------------------------------------------------------------- building blocks

@functools.lru_cache(maxsize=32)
def posenc_2d(rows, cols, dim, temperature=10000.0):
    """(rows*cols, dim) fixed encodings: [sin(y w), cos(y w), sin(x w), cos(x w)] blocks."""
    if dim % 4:
        raise ConfigError(f"positional encoding width {dim} must be divisible by 4")
    omega = 1.0 / temperature ** (4.0 * np.arange(dim // 4) / dim)
    y, x = np.divmod(np.arange(rows * cols), cols)
    ya = y[:, None] * omega[None, :]
    xa = x[:, None] * omega[None, :]
    pe = np.concatenate([np.sin(ya), np.cos(ya), np.sin(xa), np.cos(xa)], axis=1).astype(np.float32)
    pe.setflags(write=False)
    return pe


def linear(x, params, prefix):
    return ad.add(ad.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def attention(x, params, prefix, heads):
    b, k, d = x.shape
    dh = d // heads
    qkv = linear(x, params, f"{prefix}.qkv")
    qkv = ad.transpose(ad.reshape(qkv, (b, k, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, kk, v = (ad.reshape(ad.gather_rows(qkv, [i]), (b, heads, k, dh)) for i in range(3))
    scores = ad.scale(ad.matmul(q, ad.transpose(kk)), 1.0 / math.sqrt(dh))
    mixed = ad.matmul(ad.softmax(scores, axis=-1), v)
    mixed = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, k, d))
    return linear(mixed, params, f"{prefix}.out")


def block(x, params, prefix, heads, eps=1e-5):
    h = ad.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], eps)
    x = ad.add(x, attention(h, params, prefix, heads))
    h = ad.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], eps)
    h = linear(ad.gelu(linear(h, params, f"{prefix}.fc1")), params, f"{prefix}.fc2")
    return ad.add(x, h)


# ----------------------------------------------------------------- public ops

def _token_arrays(tokens):
    """Accept a TokenSet or ``(values, coords)`` arrays; return batched arrays."""
    if hasattr(tokens, "values") and hasattr(tokens, "coords"):
        return tokens.values[None], tokens.coords[None], (tokens.rows, tokens.cols), True
    values, coords, grid = tokens
    return values, coords, grid, False


def tokenize(tokens, patch, params):
    """Linear patch projection plus the encoding of each token's original grid cell.

    ``tokens`` is a :class:`~maskclr.masking.TokenSet` (returns K x dim) or a
    tuple ``(values (B,K,P), coords (B,K,2), (rows, cols))`` (returns B x K x dim).
    """
    prefix = f"tok.{patch.name}"
    if f"{prefix}.w" not in params:
        raise ConfigError(f"model has no tokenizer for patch config {patch.name!r}")
    values, coords, (rows, cols), single = _token_arrays(tokens)
    if values.shape[-1] != patch.patch_size:
        raise ConfigError(f"token width {values.shape[-1]} != {patch.name} patch size {patch.patch_size}")
    pe = posenc_2d(rows, cols, params.config.dim)
    pos = pe[coords[..., 0] * cols + coords[..., 1]]
    out = ad.add(linear(ad.Tensor(values), params, prefix), ad.Tensor(pos))
    return ad.reshape(out, out.shape[1:]) if single else out


def encode_sequence(x, params, prefix="enc", depth=None, heads=None):
    cfg = params.config
    depth = cfg.depth if depth is None else depth
    heads = cfg.heads if heads is None else heads
    for i in range(depth):
        x = block(x, params, f"{prefix}.{i}", heads)
    return ad.layer_norm(x, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])


def encode(tokens, params):
    """Transformer blocks, final layer norm and mean over tokens: (K,d)->(d) or (B,K,d)->(B,d)."""
    single = tokens.ndim == 2
    x = ad.reshape(tokens, (1,) + tokens.shape) if single else tokens
    pooled = ad.mean(encode_sequence(x, params), axis=1)
    return ad.reshape(pooled, pooled.shape[1:]) if single else pooled


def project_and_normalize(h, params):
    z = linear(ad.gelu(linear(h, params, "proj.fc1")), params, "proj.fc2")
    return ad.l2_normalize(z, axis=-1)


def mae_forward(tokens, grid_total, params, kept_indices=None):
    """Reconstruct every patch: (T, P) for a TokenSet, (B, T, P) for batched arrays.

    Batched input needs ``kept_indices`` of shape (B, K).
    """
    if not params.has_decoder:
        raise ConfigError("model parameters carry no MAE decoder")
    cfg = params.config
    patch = cfg.patch_cfgs[0]
    values, coords, grid, single = _token_arrays(tokens)
    kept = tokens.kept_indices[None] if single else np.asarray(kept_indices)
    b, k = kept.shape
    x = tokenize((values, coords, grid), patch, params)
    enc = linear(encode_sequence(x, params), params, "dec.embed")
    dd = cfg.dec_dim
    # row b*K+j of `pool` is kept token j of item b; the last row is the mask token
    pool = ad.concat([ad.reshape(enc, (b * k, dd)), ad.reshape(params["dec.mask_token"], (1, dd))], axis=0)
    src = np.full((b, grid_total), b * k, dtype=np.int64)
    src[np.arange(b)[:, None], kept] = np.arange(b * k).reshape(b, k)
    seq = ad.reshape(ad.gather_rows(pool, src.reshape(-1)), (b, grid_total, dd))
    rows, cols = grid
    seq = ad.add(seq, ad.Tensor(np.broadcast_to(posenc_2d(rows, cols, dd), (b, grid_total, dd))))
    seq = encode_sequence(seq, params, prefix="dec", depth=cfg.decoder_depth, heads=cfg.dec_heads)
    out = linear(seq, params, "dec.head")
    return ad.reshape(out, out.shape[1:]) if single else out


def flop_estimate(cfg, k):
    """Forward multiply-accumulate count of the encoder blocks for ``k`` tokens."""
    if k < 1:
        raise ValueError("token count must be >= 1")
    d = cfg.dim
    per_block = 4 * k * d * d + 2 * k * k * d + 2 * k * d * d * cfg.mlp_ratio
    return cfg.depth * per_block
