import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskclr import autodiff as ad, objectives
from maskclr.errors import BatchSizeError, ParameterError, ShapeError
from maskclr.objectives import ObjectiveConfig

from gradcheck import check_op

Z1_3 = [(1.0, 0.0), (0.0, 1.0), (math.sqrt(0.5), math.sqrt(0.5))]
Z2_3 = [(1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]
# frozen outputs of scalar_info_nce below (tau=0.5): view-1 anchors only, then both directions
N3_VIEW1 = 0.6503713924900728
N3_SYMMETRIC = 0.6536326038417282


def scalar_info_nce(z1, z2, tau, symmetrize=True, with_positive=False):
    """Plain-Python evaluation, one anchor at a time."""
    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    def direction(a_view, b_view):
        n = len(a_view)
        total = 0.0
        for i in range(n):
            num = math.exp(dot(a_view[i], b_view[i]) / tau)
            den = sum(math.exp(dot(a_view[i], v[j]) / tau) for j in range(n) if j != i for v in (a_view, b_view))
            if with_positive:
                den += num
            total += -math.log(num / den)
        return total / n

    one = direction(z1, z2)
    return (one + direction(z2, z1)) / 2 if symmetrize else one


def loss(z1, z2, **kw):
    return objectives.info_nce(ad.Tensor(np.asarray(z1)), ad.Tensor(np.asarray(z2)), ObjectiveConfig(**kw)).item()


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)


def test_oracle_is_frozen():
    assert scalar_info_nce(Z1_3, Z2_3, 0.5, symmetrize=False) == pytest.approx(N3_VIEW1, abs=1e-12)
    assert scalar_info_nce(Z1_3, Z2_3, 0.5) == pytest.approx(N3_SYMMETRIC, abs=1e-12)


def test_n3_explicit_example():
    assert loss(Z1_3, Z2_3, tau=0.5, symmetrize=False) == pytest.approx(N3_VIEW1, abs=1e-6)
    assert loss(Z1_3, Z2_3, tau=0.5) == pytest.approx(N3_SYMMETRIC, abs=1e-6)


@pytest.mark.parametrize("n", [2, 4, 16])
@pytest.mark.parametrize("tau", [0.1, 1.0])
def test_identical_embeddings(n, tau):
    z = np.tile([0.6, 0.8], (n, 1))
    assert loss(z, z, tau=tau) == pytest.approx(math.log(2 * n - 2), abs=1e-5)


def test_aligned_orthogonal_closed_form():
    z = np.eye(2)
    assert loss(z, z, tau=0.1) == pytest.approx(-(10 - math.log(2)), abs=1e-4)


def test_with_positive_switch(rng):
    z1, z2 = unit_rows(rng, 5, 4), unit_rows(rng, 5, 4)
    expect = scalar_info_nce(z1.tolist(), z2.tolist(), 0.2, with_positive=True)
    assert loss(z1, z2, tau=0.2, denominator_includes_positive=True) == pytest.approx(expect, abs=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 5), st.floats(0.1, 2.0), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_matches_scalar_oracle(n, d, tau, sym, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = unit_rows(rng, n, d), unit_rows(rng, n, d)
    expect = scalar_info_nce(z1.astype(np.float64).tolist(), z2.astype(np.float64).tolist(), tau, sym)
    assert loss(z1, z2, tau=tau, symmetrize=sym) == pytest.approx(expect, rel=1e-5, abs=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
def test_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = unit_rows(rng, n, 6), unit_rows(rng, n, 6)
    p = rng.permutation(n)
    assert loss(z1[p], z2[p]) == pytest.approx(loss(z1, z2), abs=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2 ** 32 - 1))
def test_sanity_band(n, seed):
    rng = np.random.default_rng(seed)
    tau = 0.1
    assert loss(unit_rows(rng, n, 8), unit_rows(rng, n, 8), tau=tau) >= -1 / tau + math.log(2 * n - 2) - 20


def test_monotone_in_positive_similarity(rng):
    z1 = unit_rows(rng, 4, 3)
    z2 = unit_rows(rng, 4, 3)
    before = loss(z1, z2)
    moved = z2.copy()
    moved[0] = z2[0] + 0.3 * (z1[0] - z2[0])
    moved[0] /= np.linalg.norm(moved[0])
    # only the positive similarity of item 0 changed for view-1 anchor 0
    assert moved[0] @ z1[0] > z2[0] @ z1[0]
    assert loss(z1, moved, symmetrize=False) < loss(z1, z2, symmetrize=False)
    assert before == loss(z1, z2)


def test_embedding_gradient(rng):
    z1, z2 = unit_rows(rng, 4, 5), unit_rows(rng, 4, 5)
    cfg = ObjectiveConfig(tau=0.5)
    assert check_op(lambda a, b: objectives.info_nce(a, b, cfg), [z1, z2]) < 1e-3


def test_errors():
    with pytest.raises(BatchSizeError):
        loss(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ShapeError):
        loss(np.ones((3, 2)), np.ones((2, 2)))
    with pytest.raises(ParameterError):
        ObjectiveConfig(tau=0.0)


def test_hybrid_mean():
    assert objectives.hybrid_loss(ad.Tensor(0.4), ad.Tensor(0.6)).item() == pytest.approx(0.5, abs=1e-7)
    assert objectives.hybrid_loss(ad.Tensor(1.25), ad.Tensor(1.25)).item() == 1.25


def test_hybrid_gradient_is_mean_of_branches(rng):
    w = ad.parameter(rng.standard_normal(3))
    a = ad.sum_all(ad.mul(w, w))
    b = ad.sum_all(ad.scale(w, 3.0))
    ad.backward(objectives.hybrid_loss(a, b))
    np.testing.assert_allclose(w.grad, 0.5 * (2 * w.data + 3.0), rtol=1e-6)


# ----------------------------------------------------------------- MAE loss

def test_mae_perfect_reconstruction(rng):
    t = rng.standard_normal((48, 256)).astype(np.float32)
    assert objectives.mae_loss(ad.Tensor(t), t, np.arange(5)).item() == 0.0


def test_mae_all_kept(rng):
    t = rng.standard_normal((48, 256))
    assert objectives.mae_loss(ad.Tensor(t + 1), t, np.arange(48)).item() == 0.0


def test_mae_single_masked_patch():
    t = np.zeros((4, 3), np.float32)
    recon = t.copy()
    recon[2] = 0.5
    assert objectives.mae_loss(ad.Tensor(recon), t, np.array([0, 1, 3])).item() == pytest.approx(0.25)


def test_mae_ignores_kept_positions(rng):
    t = rng.standard_normal((2, 6, 4)).astype(np.float32)
    kept = np.array([[0, 1], [2, 5]])
    recon = t.copy()
    recon[0, 0] += 100
    recon[1, 5] -= 100
    assert objectives.mae_loss(ad.Tensor(recon), t, kept).item() == 0.0
