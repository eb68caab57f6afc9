"""Time each kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeats 20]

Shapes match one desk-default training step (B=32, 5 kept tokens, dim 128)
plus a 10 s 44.1 kHz -> 16 kHz resample.
"""
import argparse
import statistics
import time

import numpy as np

from maskclr import _accel, kernels


def cases(rng):
    tokens = rng.standard_normal((64 * 5, 128)).astype(np.float32)
    gamma = np.ones(128, np.float32)
    beta = np.zeros(128, np.float32)
    _, xhat, rstd = kernels.layer_norm_forward(tokens, gamma, beta, 1e-5)
    scores = rng.standard_normal((64 * 4 * 5, 5)).astype(np.float32)
    wave = rng.standard_normal(441000)
    return [
        ("resample 44.1k->16k, 10 s", lambda: kernels.windowed_sinc_resample(wave, 44100, 16000)),
        ("layer_norm fwd (320x128)", lambda: kernels.layer_norm_forward(tokens, gamma, beta, 1e-5)),
        ("layer_norm bwd (320x128)", lambda: kernels.layer_norm_backward(tokens, xhat, rstd, gamma)),
        ("softmax fwd (1280x5)", lambda: kernels.softmax_forward(scores)),
        ("softmax bwd (1280x5)", lambda: kernels.softmax_backward(scores, scores)),
    ]


def median_ms(fn, repeats):
    fn()  # warm-up, includes JIT compilation on the numba path
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    prev = _accel.USE_NUMBA
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    try:
        for name, fn in cases(rng):
            _accel.set_backend(True)
            fast = median_ms(fn, args.repeats)
            _accel.set_backend(False)
            slow = median_ms(fn, args.repeats)
            print(f"{name:<28}{fast:>10.3f}{slow:>10.3f}{slow / fast:>8.1f}x")
    finally:
        _accel.set_backend(prev)


if __name__ == "__main__":
    main()
