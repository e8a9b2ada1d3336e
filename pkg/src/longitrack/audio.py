"""Waveform I/O, preprocessing and log-mel features.

All dB values are relative to full scale (a sample magnitude of 1.0).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import (
    DegenerateSignal,
    EmptyAfterTrim,
    MalformedWav,
    TooShort,
    UnsupportedEncoding,
)

TARGET_RATE = 16000
PATCH_FRAMES = 96
SILENCE_DB = -40.0
SILENCE_FRAME_MS = 10.0


@dataclass(frozen=True)
class AudioClip:
    """Waveform with its sample rate.

    ``samples`` is 1-D for mono or ``(n, channels)`` for multi-channel audio.
    """

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim not in (1, 2):
            raise ValueError("samples must be 1-D or (n, channels)")
        object.__setattr__(self, "samples", samples)

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.rate

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class MelParams:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 64
    fmin: float = 125.0
    fmax: float = 7500.0
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.window_ms < self.hop_ms:
            raise ValueError("window_ms must be >= hop_ms")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError("need 0 <= fmin < fmax")

    def window_samples(self, rate: int) -> int:
        return int(round(rate * self.window_ms / 1000.0))

    def hop_samples(self, rate: int) -> int:
        return int(round(rate * self.hop_ms / 1000.0))


@dataclass(frozen=True)
class LogMelFrames:
    values: np.ndarray  # (n_frames, n_mels)
    frame_hop_s: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MelPatch:
    values: np.ndarray  # (PATCH_FRAMES, n_mels)
    padded: bool = False


class QualityVerdict(str, Enum):
    OK = "ok"
    TOO_SHORT = "too_short"
    TOO_QUIET = "too_quiet"
    CLIPPED = "clipped"


# -- I/O ---------------------------------------------------------------------

_INT_SCALE = {np.dtype(np.int16): 2.0**15, np.dtype(np.int32): 2.0**31}


def load_wav(path) -> AudioClip:
    """Read a PCM (8/16/24/32-bit) or float32 WAV file into [-1, 1] floats.

    24-bit files arrive from scipy left-justified in int32, so the 2**31
    scale covers both 24- and 32-bit data.
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except wavfile.WavFileWarning as exc:
        raise MalformedWav(f"{path}: {exc}") from exc
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedEncoding(f"{path}: {msg}") from exc
        raise MalformedWav(f"{path}: {msg}") from exc
    except (EOFError, OSError) as exc:
        raise MalformedWav(f"{path}: {exc}") from exc
    if data.shape[0] == 0:
        raise MalformedWav(f"{path}: empty data chunk")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"{path}: sample type {data.dtype}")
    if not np.all(np.isfinite(samples)):
        raise MalformedWav(f"{path}: non-finite samples")
    return AudioClip(np.clip(samples, -1.0, 1.0), int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write ``clip`` as 16-bit PCM (default) or 32-bit float."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if encoding == "pcm16":
        # same 2**15 scale as load_wav; +1.0 saturates at the top code
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif encoding == "float32":
        data = x.astype("<f4")
    else:
        raise UnsupportedEncoding(f"cannot write encoding {encoding!r}")
    wavfile.write(Path(path), clip.rate, data)


# -- preprocessing -----------------------------------------------------------

def to_mono(clip: AudioClip) -> AudioClip:
    if clip.samples.ndim == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=1), clip.rate)


def resample(clip: AudioClip, target_rate: int = TARGET_RATE) -> AudioClip:
    """Polyphase windowed-sinc resampling (Kaiser window, beta 8)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if clip.rate == target_rate:
        return clip
    g = math.gcd(clip.rate, target_rate)
    up, down = target_rate // g, clip.rate // g
    y = signal.resample_poly(clip.samples, up, down, axis=0, window=("kaiser", 8.0))
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate)


def frame_rms_db(x: np.ndarray, frame: int) -> np.ndarray:
    """RMS level in dBFS of consecutive non-overlapping frames (last may be partial)."""
    n = len(x)
    n_frames = -(-n // frame)
    padded = np.zeros(n_frames * frame)
    padded[:n] = x
    power = (padded.reshape(n_frames, frame) ** 2).sum(axis=1)
    counts = np.full(n_frames, frame, dtype=float)
    counts[-1] = n - (n_frames - 1) * frame
    rms = np.sqrt(power / counts)
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(rms)


def trim_silence(clip: AudioClip, threshold_db: float = SILENCE_DB,
                 frame_ms: float = SILENCE_FRAME_MS) -> AudioClip:
    """Drop leading and trailing frames quieter than ``threshold_db``."""
    x = to_mono(clip).samples
    frame = max(1, int(round(clip.rate * frame_ms / 1000.0)))
    loud = np.flatnonzero(frame_rms_db(x, frame) >= threshold_db)
    if loud.size == 0:
        raise EmptyAfterTrim(f"no frame above {threshold_db} dBFS")
    start = loud[0] * frame
    stop = min(len(x), (loud[-1] + 1) * frame)
    if start == 0 and stop == len(x):
        return clip
    return AudioClip(x[start:stop], clip.rate)


def normalize_peak(clip: AudioClip) -> AudioClip:
    peak = np.max(np.abs(clip.samples))
    if peak == 0.0:
        raise DegenerateSignal("cannot peak-normalize an all-zero clip")
    if peak == 1.0:
        return clip
    return AudioClip(clip.samples / peak, clip.rate)


def preprocess(clip: AudioClip, rate: int = TARGET_RATE) -> AudioClip:
    """Mono, resample, trim, then peak-normalize.

    Trimming runs before normalization so the peak reflects voiced content.
    """
    return normalize_peak(trim_silence(resample(to_mono(clip), rate)))


def quality_check(clip: AudioClip) -> QualityVerdict:
    """Heuristic screen on a preprocessed clip: length, level, clipping."""
    x = to_mono(clip).samples
    if clip.duration < 0.5:
        return QualityVerdict.TOO_SHORT
    rms = math.sqrt(float(np.mean(x**2)))
    if rms == 0.0 or 20.0 * math.log10(rms) < -45.0:
        return QualityVerdict.TOO_QUIET
    if np.count_nonzero(np.abs(x) >= 1.0 - 1e-9) >= 0.01 * len(x):
        return QualityVerdict.CLIPPED
    return QualityVerdict.OK


# -- features ----------------------------------------------------------------

def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=float) / 1127.0)


@lru_cache(maxsize=16)
def mel_filterbank(rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``(n_fft // 2 + 1, n_mels)``."""
    if fmax > rate / 2:
        raise ValueError(f"fmax {fmax} above Nyquist {rate / 2}")
    bin_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * rate / n_fft)
    edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    rising = (bin_mel[:, None] - lower) / (center - lower)
    falling = (upper - bin_mel[:, None]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.sum(axis=0) <= 0):
        raise ValueError("mel band with no FFT bins; lower n_mels or raise n_fft")
    fb.setflags(write=False)
    return fb


def n_frames_for(n_samples: int, window: int, hop: int) -> int:
    return (n_samples - window) // hop + 1 if n_samples >= window else 0


def log_mel(clip: AudioClip, params: MelParams = MelParams()) -> LogMelFrames:
    """Natural-log mel power spectrogram over Hann-windowed frames (no centering)."""
    x = to_mono(clip).samples
    window = params.window_samples(clip.rate)
    hop = params.hop_samples(clip.rate)
    n_frames = n_frames_for(len(x), window, hop)
    if n_frames < 1:
        raise TooShort(f"{len(x)} samples is shorter than one {window}-sample frame")
    n_fft = 1 << (window - 1).bit_length()
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]
    spec = np.fft.rfft(frames * signal.get_window("hann", window), n=n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    fb = mel_filterbank(clip.rate, n_fft, params.n_mels, params.fmin, params.fmax)
    values = np.log(power @ fb + params.log_floor)
    return LogMelFrames(values, hop / clip.rate)


def frame_patches(frames: LogMelFrames, patch_frames: int = PATCH_FRAMES) -> list[MelPatch]:
    """Cut non-overlapping fixed-length patches; short inputs are edge-padded."""
    v = frames.values
    if v.shape[0] < patch_frames:
        padded = np.pad(v, ((0, patch_frames - v.shape[0]), (0, 0)), mode="edge")
        return [MelPatch(padded, padded=True)]
    return [MelPatch(v[i * patch_frames:(i + 1) * patch_frames])
            for i in range(v.shape[0] // patch_frames)]


def clip_patches(clip: AudioClip, params: MelParams = MelParams()) -> np.ndarray:
    """Preprocessed clip to a stacked ``(n_patches, 96, n_mels)`` array."""
    return np.stack([p.values for p in frame_patches(log_mel(clip, params))])
