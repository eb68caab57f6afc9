"""Central finite-difference gradient checks for float32 graphs."""
import numpy as np

from maskclr import autodiff as ad


def numeric_grad(f, x, h=1e-3):
    """d f / d x by central differences; ``f`` maps an ndarray to a float."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Norm-wise relative error, robust to near-zero individual entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_op(build, inputs, seed=0, h=1e-3):
    """Max relative error over ``inputs`` for loss = sum(build(*tensors) * W), W random."""
    rng = np.random.default_rng(seed)
    tensors = [ad.parameter(x) for x in inputs]
    out = build(*tensors)
    weight = rng.standard_normal(out.shape).astype(np.float32)

    def scalar(*arrays):
        o = build(*[ad.Tensor(a) for a in arrays])
        return float(np.sum(o.data.astype(np.float64) * weight))

    loss = ad.sum_all(ad.mul(out, ad.Tensor(weight))) if out.ndim else out
    ad.backward(loss)
    worst = 0.0
    for i, t in enumerate(tensors):
        def f(x, i=i):
            arrays = [np.asarray(v.data) for v in tensors]
            arrays[i] = x.astype(np.float32)
            return scalar(*arrays)

        num = numeric_grad(f, t.data, h)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def _away_from_zero(x, margin=0.05):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def op_cases():
    """``(name, build, inputs)`` covering every differentiable op."""
    r = np.random.default_rng(7)
    n = lambda *s: r.standard_normal(s).astype(np.float32)  # noqa: E731
    mask = r.random((3, 5)) < 0.7
    mask[:, 0] = True
    targets = np.array([0, 2, 1, 3])
    bits = (r.random((4, 3)) < 0.5).astype(np.float32)
    index = np.array([2, 0, 2, 1])
    return [
        ("add", ad.add, [n(3, 4), n(3, 4)]),
        ("add_bias", ad.add, [n(2, 3, 4), n(4)]),
        ("mul", ad.mul, [n(3, 4), n(3, 4)]),
        ("mul_bias", ad.mul, [n(3, 4), n(4)]),
        ("scale", lambda a: ad.scale(a, -2.5), [n(3, 4)]),
        ("relu", ad.relu, [_away_from_zero(n(3, 4))]),
        ("gelu", ad.gelu, [n(3, 4)]),
        ("sigmoid", ad.sigmoid, [n(3, 4)]),
        ("dropout", lambda a: ad.dropout(a, 0.5, np.random.default_rng(3), True), [n(4, 5)]),
        ("matmul", ad.matmul, [n(3, 4), n(4, 2)]),
        ("matmul_batched", ad.matmul, [n(2, 3, 4), n(2, 4, 5)]),
        ("matmul_broadcast", ad.matmul, [n(2, 3, 4), n(4, 5)]),
        ("transpose", lambda a: ad.transpose(a, (2, 0, 1)), [n(2, 3, 4)]),
        ("reshape", lambda a: ad.reshape(a, (4, 3)), [n(2, 6)]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [n(2, 3), n(2, 2)]),
        ("gather_rows", lambda a: ad.gather_rows(a, index), [n(3, 4)]),
        ("sum_all", ad.sum_all, [n(3, 4)]),
        ("mean_all", ad.mean, [n(3, 4)]),
        ("mean_axis", lambda a: ad.mean(a, axis=1), [n(2, 3, 4)]),
        ("softmax", lambda a: ad.softmax(a, axis=-1), [n(3, 5)]),
        ("softmax_axis0", lambda a: ad.softmax(a, axis=0), [n(3, 5)]),
        ("layer_norm", ad.layer_norm, [n(3, 6), 1 + 0.1 * n(6), n(6)]),
        ("l2_normalize", lambda a: ad.l2_normalize(a, axis=-1), [n(3, 4)]),
        ("masked_logsumexp", lambda a: ad.masked_logsumexp(a, mask, axis=1), [n(3, 5)]),
        ("cross_entropy", lambda a: ad.cross_entropy_logits(a, targets), [n(4, 4)]),
        ("binary_cross_entropy", lambda a: ad.binary_cross_entropy_logits(a, bits), [n(4, 3)]),
        ("mse", lambda a: ad.mse(a, np.ones((3, 4), np.float32)), [n(3, 4)]),
    ]


def pipeline_case(seed=0, n=4, d_in=6, d=5, tau=0.1):
    """Tiny linear encoder -> l2 normalize -> InfoNCE, differentiated w.r.t. the weight."""
    from maskclr import objectives

    r = np.random.default_rng(seed)
    x1 = r.standard_normal((n, d_in)).astype(np.float32)
    x2 = (x1 + 0.3 * r.standard_normal((n, d_in))).astype(np.float32)
    w = (0.5 * r.standard_normal((d_in, d))).astype(np.float32)
    cfg = objectives.ObjectiveConfig(tau=tau)

    def build(wt):
        z1 = ad.l2_normalize(ad.matmul(ad.Tensor(x1), wt))
        z2 = ad.l2_normalize(ad.matmul(ad.Tensor(x2), wt))
        return objectives.info_nce(z1, z2, cfg)

    return build, [w]
