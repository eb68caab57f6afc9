"""Contrastive, hybrid and masked-reconstruction losses."""
from dataclasses import dataclass

import numpy as np

from maskclr import autodiff as ad
from maskclr.errors import BatchSizeError, ParameterError, ShapeError


@dataclass(frozen=True)
class ObjectiveConfig:
    tau: float = 0.1
    symmetrize: bool = True
    denominator_includes_positive: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")


def info_nce(z1, z2, cfg=ObjectiveConfig()):
    """InfoNCE over N positive pairs of unit-norm rows.

    For anchor ``z1[i]`` the numerator is ``exp(z1[i].z2[i] / tau)`` and the
    denominator sums ``exp(z1[i].z[j] / tau)`` over both views of every
    ``j != i`` (2N-2 terms). ``denominator_includes_positive`` adds the
    positive term back (NT-Xent). With ``symmetrize`` the view-2 anchors are
    scored too and the two directions averaged.
    """
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeError(f"views must be matching (N, D) matrices, got {z1.shape} and {z2.shape}")
    n = z1.shape[0]
    if n < 2:
        raise BatchSizeError(f"contrastive loss needs at least 2 pairs, got {n}")
    z = ad.concat([z1, z2], axis=0)
    sims = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / cfg.tau)

    item = np.arange(2 * n) % n
    partner = (np.arange(2 * n) + n) % (2 * n)
    same_item = item[:, None] == item[None, :]
    positive = np.zeros((2 * n, 2 * n), dtype=bool)
    positive[np.arange(2 * n), partner] = True
    denom = ~same_item | positive if cfg.denominator_includes_positive else ~same_item

    anchors = 2 * n if cfg.symmetrize else n
    if anchors < 2 * n:
        sims = ad.gather_rows(sims, np.arange(anchors))
        positive, denom = positive[:anchors], denom[:anchors]
    pos = ad.sum_all(ad.mul(sims, positive.astype(np.float32)))
    lse = ad.sum_all(ad.masked_logsumexp(sims, denom, axis=1))
    return ad.scale(ad.add(lse, ad.scale(pos, -1.0)), 1.0 / anchors)


def hybrid_loss(l_square, l_vertical):
    return ad.scale(ad.add(l_square, l_vertical), 0.5)


def mae_loss(reconstruction, target, kept_indices):
    """MSE over patches NOT in ``kept_indices``; zero when nothing was masked.

    Accepts single items ``(T, P)`` with ``kept_indices`` (K,) or batches
    ``(B, T, P)`` with (B, K).
    """
    target = np.asarray(target, dtype=np.float32)
    if reconstruction.shape != target.shape:
        raise ShapeError(f"reconstruction {reconstruction.shape} vs target {target.shape}")
    kept = np.asarray(kept_indices)
    masked = np.ones(target.shape[:-1], dtype=bool)
    if target.ndim == 2:
        masked[kept] = False
    else:
        masked[np.arange(target.shape[0])[:, None], kept] = False
    count = int(masked.sum()) * target.shape[-1]
    weight = np.broadcast_to(masked[..., None], target.shape).astype(np.float32)
    if count == 0:
        return ad.scale(ad.sum_all(ad.mul(reconstruction, weight)), 0.0)
    diff = ad.add(reconstruction, ad.Tensor(-target))
    sq = ad.mul(ad.mul(diff, diff), weight)
    return ad.scale(ad.sum_all(sq), 1.0 / count)
