"""WAV decoding, resampling, segment selection and log-mel features."""
import functools
import hashlib
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from maskclr import kernels
from maskclr.errors import FormatError, TooShortError, UnsupportedFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    segment_seconds: float = 3.0
    n_fft: int = 1024
    hop: int = 500
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    frames: int = 96

    @property
    def segment_samples(self):
        return int(round(self.segment_seconds * self.sample_rate))

    def digest(self):
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha1(text.encode()).hexdigest()[:12]


DEFAULT_AUDIO = AudioConfig()


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"clip {self.source_id!r} has non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class Segment:
    samples: np.ndarray
    sample_rate: int = 16000
    start: int = 0


@dataclass
class MelSpectrogram:
    values: np.ndarray
    config_hash: str = field(default_factory=DEFAULT_AUDIO.digest)

    @property
    def mel_bins(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]


# ----------------------------------------------------------------- WAV I/O

def decode_wav(path):
    """Read a PCM16 or float32 RIFF/WAVE file as a mono clip in [-1, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise FormatError(f"{path}: truncated extensible fmt chunk")
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels")
    if rate <= 0:
        raise FormatError(f"{path}: sample rate {rate}")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        pcm = np.frombuffer(data[:len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        pcm = np.frombuffer(data[:len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag:#x} with {bits} bits")
    frames = len(pcm) // channels
    pcm = pcm[:frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioClip(np.clip(pcm, -1.0, 1.0), rate, source_id=str(path))


def encode_wav(path, samples, sample_rate, encoding="pcm16"):
    """Write mono or (n, 2) stereo samples; ``encoding`` is ``pcm16`` or ``float32``."""
    x = np.asarray(samples, dtype=np.float64)
    channels = 1 if x.ndim == 1 else x.shape[1]
    if encoding == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * align, align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def read_manifest(path):
    """Paths listed one per line; relative entries resolve against the manifest's folder."""
    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else path.parent / p)
    return out


# ----------------------------------------------------------------- DSP

def resample(clip, target_rate):
    if clip.sample_rate == target_rate:
        return AudioClip(clip.samples.copy(), target_rate, clip.source_id)
    y = kernels.windowed_sinc_resample(clip.samples, clip.sample_rate, target_rate)
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate, clip.source_id)


def load_clip(path, cfg=DEFAULT_AUDIO):
    return resample(decode_wav(path), cfg.sample_rate)


def select_segments(clip, rng, cfg=DEFAULT_AUDIO):
    """Two independently placed fixed-length windows from one clip (overlap allowed)."""
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip must be at {cfg.sample_rate} Hz, got {clip.sample_rate}")
    n = cfg.segment_samples
    slack = len(clip.samples) - n
    if slack < 0:
        raise TooShortError(f"clip {clip.source_id!r} is {clip.duration:.2f}s, need {cfg.segment_seconds}s")
    starts = rng.integers(0, slack + 1, size=2)
    return tuple(Segment(clip.samples[s:s + n], cfg.sample_rate, int(s)) for s in starts)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(cfg=DEFAULT_AUDIO):
    """(n_mels, n_fft//2 + 1) triangular HTK filters with unit peak."""
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None, :] - lo) / (mid - lo)
    fall = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rise, fall))
    fb.setflags(write=False)
    return fb


@functools.lru_cache(maxsize=8)
def _filterbank_t32(cfg):
    return np.ascontiguousarray(mel_filterbank(cfg).T, dtype=np.float32)


@functools.lru_cache(maxsize=8)
def _hann(n):
    w = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(np.float32)
    w.setflags(write=False)
    return w


def power_spectrogram(x, cfg=DEFAULT_AUDIO):
    """|STFT|^2 of the last axis: (..., frames, n_fft//2+1), reflect-padded, centred frames."""
    x = np.asarray(x, dtype=np.float32)
    pad = cfg.n_fft // 2
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    padded = np.pad(x, widths, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft, axis=-1)[..., ::cfg.hop, :]
    spec = np.fft.rfft(frames * _hann(cfg.n_fft), axis=-1)
    return (spec.real ** 2 + spec.imag ** 2).astype(np.float32)


def log_mel(x, cfg=DEFAULT_AUDIO):
    """Log-mel grid(s) shaped (..., n_mels, frames) for segment sample array(s) ``x``."""
    power = power_spectrogram(x, cfg)
    mel = power @ _filterbank_t32(cfg)
    out = np.log(mel + np.float32(cfg.log_floor))
    out = np.swapaxes(out, -1, -2)[..., :cfg.frames]
    return out.astype(np.float32)


def mel_spectrogram(segment, cfg=DEFAULT_AUDIO):
    return MelSpectrogram(log_mel(segment.samples, cfg), cfg.digest())


def standardize_values(v, floor=1e-6):
    """Zero-mean, unit population-std over the last two axes."""
    v = np.asarray(v, dtype=np.float64)
    mu = v.mean(axis=(-2, -1), keepdims=True)
    sd = np.maximum(v.std(axis=(-2, -1), keepdims=True), floor)
    return ((v - mu) / sd).astype(np.float32)


def standardize(spec, floor=1e-6):
    return MelSpectrogram(standardize_values(spec.values, floor), spec.config_hash)
