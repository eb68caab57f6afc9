"""The numba loops and the numpy fallbacks must agree."""
import contextlib

import numpy as np
import pytest

from maskclr import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


@contextlib.contextmanager
def backend(use_numba):
    prev = _accel.USE_NUMBA
    _accel.set_backend(use_numba)
    try:
        yield
    finally:
        _accel.set_backend(prev)


def both(fn, *args):
    with backend(True):
        a = fn(*args)
    with backend(False):
        b = fn(*args)
    return a, b


def assert_same(a, b, tol):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            assert_same(x, y, tol)
        return
    assert a.shape == b.shape and a.dtype == b.dtype
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("src,dst", [(44100, 16000), (8000, 16000), (22050, 16000)])
def test_resample_parity(rng, src, dst):
    x = rng.standard_normal(3000)
    assert_same(*both(kernels.windowed_sinc_resample, x, src, dst), 1e-10)


def test_layer_norm_parity(rng):
    x = rng.standard_normal((17, 64)).astype(np.float32)
    gamma = rng.standard_normal(64).astype(np.float32)
    beta = rng.standard_normal(64).astype(np.float32)
    fwd = both(kernels.layer_norm_forward, x, gamma, beta, 1e-5)
    assert_same(*fwd, 1e-5)
    _, xhat, rstd = fwd[0]
    g = rng.standard_normal((17, 64)).astype(np.float32)
    assert_same(*both(kernels.layer_norm_backward, g, xhat, rstd, gamma), 1e-4)


def test_softmax_parity(rng):
    x = (10 * rng.standard_normal((9, 33))).astype(np.float32)
    y = both(kernels.softmax_forward, x)
    assert_same(*y, 1e-6)
    g = rng.standard_normal((9, 33)).astype(np.float32)
    assert_same(*both(kernels.softmax_backward, g, y[0]), 1e-6)


def test_gelu_known_values():
    x = np.array([0.0, 1.0, -1.0], dtype=np.float32)
    # tanh-form GELU evaluated in float64 by hand
    expect = [0.0, 0.8411919906, -0.1588080094]
    np.testing.assert_allclose(kernels.gelu_forward(x), expect, atol=1e-6)


def test_set_backend_reports():
    with backend(False):
        assert _accel.backend() == "numpy"
    with backend(True):
        assert _accel.backend() == "numba"


@pytest.mark.parametrize("value,expect", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(value, expect):
    import os
    import subprocess
    import sys

    env = dict(os.environ, MASKCLR_NUMBA=value)
    out = subprocess.run([sys.executable, "-c", "import maskclr; print(maskclr.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect
