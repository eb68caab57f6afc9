"""Synthetic sine-mixture corpora for smoke runs, sweeps and acceptance checks."""
import numpy as np

from maskclr.audio import AudioClip

SAMPLE_RATE = 16000


def _note(f0, seconds, rng, n_harmonics=4, vibrato=0.0, sr=SAMPLE_RATE):
    t = np.arange(int(round(seconds * sr))) / sr
    amps = rng.uniform(0.2, 1.0, size=n_harmonics) / np.arange(1, n_harmonics + 1)
    phases = rng.uniform(0, 2 * np.pi, size=n_harmonics)
    bend = vibrato * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t)
    x = sum(a * np.sin(2 * np.pi * f0 * (h + 1) * t * (1 + bend) + p)
            for h, (a, p) in enumerate(zip(amps, phases)))
    env = 0.75 + 0.25 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    return x * env


def sine_mixture(freqs, seconds, rng, noise=0.01, sr=SAMPLE_RATE):
    x = sum(_note(f, seconds, rng, vibrato=0.002, sr=sr) for f in freqs)
    x = x + noise * rng.standard_normal(x.shape)
    return 0.8 * x / np.max(np.abs(x))


def sine_corpus(n_clips=8, seconds=6.0, seed=0):
    """Clips built from distinct, widely spaced fundamentals (two partial sets per clip)."""
    rng = np.random.default_rng(seed)
    base = 110.0 * 2.0 ** (np.arange(n_clips * 2) * 5 / 12.0)
    base = base[rng.permutation(len(base))]
    clips = []
    for i in range(n_clips):
        freqs = base[2 * i:2 * i + 2]
        clips.append(AudioClip(sine_mixture(freqs, seconds, rng), SAMPLE_RATE, f"sine{i:02d}"))
    return clips


def frequency_task(n_per_class=24, fundamentals=(130.81, 196.0, 293.66, 440.0), seconds=3.0, seed=1):
    """Clips labelled by fundamental; harmonic weights, phases and noise vary per clip.

    Returns ``(clips, labels)`` with labels in ``range(len(fundamentals))``, ordered
    class-interleaved so any contiguous split stays balanced.
    """
    rng = np.random.default_rng(seed)
    clips, labels = [], []
    for i in range(n_per_class):
        for c, f0 in enumerate(fundamentals):
            detune = f0 * 2.0 ** (rng.uniform(-0.3, 0.3) / 12.0)
            x = sine_mixture([detune], seconds, rng, noise=rng.uniform(0.005, 0.05))
            clips.append(AudioClip(x, SAMPLE_RATE, f"freq{c}_{i:03d}"))
            labels.append(c)
    return clips, np.asarray(labels)
