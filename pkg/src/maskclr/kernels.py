"""Hot inner loops with a numba path and a pure-numpy path.

Each dual-path function dispatches on :data:`maskclr._accel.USE_NUMBA` at call
time, so flipping the backend with :func:`maskclr._accel.set_backend` takes
effect immediately. Both paths agree to float32 round-off.
"""
import math

import numpy as np

from maskclr import _accel
from maskclr._accel import njit

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


# ---------------------------------------------------------------- resampling

@njit
def _resample_loop(x, ratio, cutoff, half_width, n_out):
    out = np.zeros(n_out, dtype=np.float64)
    n_in = x.shape[0]
    # sin(pi*cutoff*t) and cos(pi*t/half_width) advance by fixed angles as j steps,
    # so each tap uses an angle-addition update instead of two trig calls
    a_step = math.pi * cutoff
    w_step = math.pi / half_width
    ca, sa = math.cos(a_step), math.sin(a_step)
    cw, sw = math.cos(w_step), math.sin(w_step)
    for i in range(n_out):
        center = i / ratio
        lo = int(math.ceil(center - half_width))
        hi = int(math.floor(center + half_width))
        if lo < 0:
            lo = 0
        if hi > n_in - 1:
            hi = n_in - 1
        t = center - lo
        s_sin = math.sin(a_step * t)
        s_cos = math.cos(a_step * t)
        w_sin = math.sin(w_step * t)
        w_cos = math.cos(w_step * t)
        acc = 0.0
        for j in range(lo, hi + 1):
            arg = cutoff * t
            if abs(arg) < 1e-12:
                s = 1.0
            else:
                s = s_sin / (math.pi * arg)
            acc += x[j] * cutoff * s * 0.5 * (1.0 + w_cos)
            # t -> t - 1
            s_sin, s_cos = s_sin * ca - s_cos * sa, s_cos * ca + s_sin * sa
            w_sin, w_cos = w_sin * cw - w_cos * sw, w_cos * cw + w_sin * sw
            t -= 1.0
        out[i] = acc
    return out


def _resample_numpy(x, ratio, cutoff, half_width, n_out, chunk=4096):
    out = np.zeros(n_out, dtype=np.float64)
    n_in = x.shape[0]
    span = int(math.ceil(half_width))
    offsets = np.arange(2 * span + 2)
    for start in range(0, n_out, chunk):
        idx = np.arange(start, min(start + chunk, n_out))
        center = idx / ratio
        base = np.ceil(center - half_width).astype(np.int64)
        j = base[:, None] + offsets[None, :]
        t = center[:, None] - j
        valid = (j >= 0) & (j < n_in) & (np.abs(t) <= half_width)
        w = 0.5 * (1.0 + np.cos(np.pi * t / half_width))
        h = cutoff * np.sinc(cutoff * t) * w
        taps = np.where(valid, x[np.clip(j, 0, n_in - 1)], 0.0)
        out[idx] = np.sum(np.where(valid, h * taps, 0.0), axis=1)
    return out


def windowed_sinc_resample(x, src_rate, dst_rate, zero_crossings=32, rolloff=0.95):
    """Band-limited interpolation of ``x`` from ``src_rate`` to ``dst_rate``.

    The Hann-windowed sinc kernel has its cutoff at ``rolloff * min(1, dst/src)``
    of the input Nyquist, which doubles as the anti-alias filter when
    downsampling.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    ratio = dst_rate / src_rate
    n_out = int(round(x.shape[0] * ratio))
    cutoff = rolloff * min(1.0, ratio)
    half_width = zero_crossings / cutoff
    if _accel.USE_NUMBA:
        return _resample_loop(x, ratio, cutoff, half_width, n_out)
    return _resample_numpy(x, ratio, cutoff, half_width, n_out)


# ---------------------------------------------------------------- layer norm

@njit
def _layer_norm_fwd_loop(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=np.float32)
    for i in range(n):
        mu = 0.0
        for k in range(d):
            mu += x[i, k]
        mu /= d
        var = 0.0
        for k in range(d):
            diff = x[i, k] - mu
            var += diff * diff
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for k in range(d):
            xh = (x[i, k] - mu) * r
            xhat[i, k] = xh
            y[i, k] = xh * gamma[k] + beta[k]
    return y, xhat, rstd


@njit
def _layer_norm_bwd_loop(g, xhat, rstd, gamma):
    n, d = g.shape
    dx = np.empty_like(g)
    dgamma = np.zeros(d, dtype=np.float64)
    dbeta = np.zeros(d, dtype=np.float64)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for k in range(d):
            gy = g[i, k] * gamma[k]
            s1 += gy
            s2 += gy * xhat[i, k]
            dgamma[k] += g[i, k] * xhat[i, k]
            dbeta[k] += g[i, k]
        s1 /= d
        s2 /= d
        for k in range(d):
            gy = g[i, k] * gamma[k]
            dx[i, k] = rstd[i] * (gy - s1 - xhat[i, k] * s2)
    return dx, dgamma.astype(np.float32), dbeta.astype(np.float32)


def layer_norm_forward(x, gamma, beta, eps):
    """Row-wise layer norm of a 2-D float32 array; returns ``(y, xhat, rstd)``."""
    if _accel.USE_NUMBA:
        return _layer_norm_fwd_loop(x, gamma, beta, np.float32(eps))
    mu = x.mean(axis=1, keepdims=True, dtype=np.float64)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = ((x - mu) * rstd).astype(np.float32)
    y = (xhat * gamma + beta).astype(np.float32)
    return y, xhat, rstd[:, 0].astype(np.float32)


def layer_norm_backward(g, xhat, rstd, gamma):
    if _accel.USE_NUMBA:
        return _layer_norm_bwd_loop(g, xhat, rstd, gamma)
    gy = g * gamma
    s1 = gy.mean(axis=1, keepdims=True)
    s2 = (gy * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (gy - s1 - xhat * s2)
    dgamma = (g * xhat).sum(axis=0, dtype=np.float64)
    dbeta = g.sum(axis=0, dtype=np.float64)
    return dx.astype(np.float32), dgamma.astype(np.float32), dbeta.astype(np.float32)


# ---------------------------------------------------------------- softmax

@njit
def _softmax_fwd_loop(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for k in range(1, d):
            if x[i, k] > m:
                m = x[i, k]
        s = 0.0
        for k in range(d):
            e = math.exp(x[i, k] - m)
            y[i, k] = e
            s += e
        for k in range(d):
            y[i, k] = y[i, k] / s
    return y


@njit
def _softmax_bwd_loop(g, y):
    n, d = g.shape
    dx = np.empty_like(g)
    for i in range(n):
        dot = 0.0
        for k in range(d):
            dot += g[i, k] * y[i, k]
        for k in range(d):
            dx[i, k] = y[i, k] * (g[i, k] - dot)
    return dx


def softmax_forward(x):
    """Softmax over the last axis of a 2-D array."""
    if _accel.USE_NUMBA:
        return _softmax_fwd_loop(x)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).astype(x.dtype)


def softmax_backward(g, y):
    if _accel.USE_NUMBA:
        return _softmax_bwd_loop(g, y)
    return (y * (g - (g * y).sum(axis=1, keepdims=True))).astype(g.dtype)


# ---------------------------------------------------------------- gelu (tanh form)
# numpy only: its vectorised tanh outruns a scalar libm tanh inside an njit loop


def gelu_forward(x):
    x = np.asarray(x)
    return (0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * (x * x * x))))).astype(x.dtype)


def gelu_backward(g, x):
    x = np.asarray(x)
    x2 = x * x
    t = np.tanh(GELU_C * (x + GELU_A * x2 * x))
    d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x2)
    return (g * d).astype(x.dtype)
