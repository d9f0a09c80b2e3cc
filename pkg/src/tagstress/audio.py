"""Audio ingestion, framing, windowing, and short-time spectra.

All experiment code works at a canonical 22050 Hz; clips arriving at other
rates are resampled with a windowed-sinc polyphase resampler.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly
from scipy.signal.windows import hann

CANONICAL_RATE = 22050


class AudioFormatError(ValueError):
    """Malformed or truncated WAV container."""


class UnsupportedAudioError(ValueError):
    """Well-formed WAV, but codec or layout outside the supported subset."""


class TooShortError(ValueError):
    """Signal shorter than one analysis frame."""


class SpectrumSizeError(ValueError):
    """Frame length is not a power of two."""


@dataclass(frozen=True)
class AudioClip:
    """A mono sample sequence with its sample rate.

    Samples are float64 in [-1, 1] (enforced at load time, not here, so that
    filtered signals with sub-LSB overshoot remain representable).
    """

    id: str
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("clip %r: samples must be a nonempty 1-D sequence" % self.id)
        if not np.all(np.isfinite(samples)):
            raise ValueError("clip %r: non-finite samples" % self.id)
        if int(self.sample_rate) <= 0:
            raise ValueError("clip %r: sample rate must be positive" % self.id)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    """Analysis framing: frame length and hop in samples, window name."""

    frame_len: int
    hop: int
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len):
            raise ValueError("need 0 < hop <= frame_len")
        if self.window not in ("rectangular", "hann"):
            raise ValueError("unknown window %r" % self.window)


# 23.2 ms and 93 ms at 22050 Hz, rounded to the nearest power of two.
SHORT_FRAME = FrameSpec(frame_len=512, hop=256)
LONG_FRAME = FrameSpec(frame_len=2048, hop=1024)


def _read_chunks(data: bytes):
    """Yield (chunk id, payload) pairs of a RIFF body."""
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        payload = data[pos + 8:pos + 8 + size]
        if len(payload) < size:
            raise AudioFormatError("truncated %r chunk" % cid.decode("latin1"))
        yield cid, payload
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def _decode_pcm(raw: bytes, bits: int, fmt: int) -> np.ndarray:
    if fmt == 3:  # IEEE float
        if bits != 32:
            raise UnsupportedAudioError("only 32-bit float WAV is supported")
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return np.clip(x, -1.0, 1.0)
    if fmt != 1:
        raise UnsupportedAudioError("unsupported WAV codec (format tag %d)" % fmt)
    if bits == 8:
        x = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
        return (x - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        x = (b[:, 0].astype(np.int32)
             | (b[:, 1].astype(np.int32) << 8)
             | (b[:, 2].astype(np.int32) << 16))
        x = np.where(x >= 1 << 23, x - (1 << 24), x)
        return x.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise UnsupportedAudioError("unsupported PCM width: %d bits" % bits)


def load_wav(path, clip_id: str | None = None) -> AudioClip:
    """Read a PCM WAV file (8/16/24-bit int, 32-bit int or float, 1-2 channels).

    Stereo is downmixed by channel mean; integer PCM is scaled to [-1, 1].
    Identical bytes always decode to identical samples.
    """
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError("%s: not a RIFF/WAVE file" % path)
    fmt_chunk = None
    data_chunk = None
    for cid, payload in _read_chunks(data):
        if cid == b"fmt " and fmt_chunk is None:
            fmt_chunk = payload
        elif cid == b"data" and data_chunk is None:
            data_chunk = payload
    if fmt_chunk is None or len(fmt_chunk) < 16:
        raise AudioFormatError("%s: missing or short fmt chunk" % path)
    if data_chunk is None:
        raise AudioFormatError("%s: missing data chunk" % path)
    fmt, n_channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt_chunk, 0)
    if fmt == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: sub-format GUID starts with the tag
        if len(fmt_chunk) >= 26 + 16:
            (fmt,) = struct.unpack_from("<H", fmt_chunk, 24)
        else:
            raise AudioFormatError("%s: malformed extensible fmt chunk" % path)
    if n_channels not in (1, 2):
        raise UnsupportedAudioError("%s: %d channels (only mono/stereo)" % (path, n_channels))
    if rate <= 0:
        raise AudioFormatError("%s: invalid sample rate %d" % (path, rate))
    usable = len(data_chunk) - (len(data_chunk) % max(block_align, 1))
    x = _decode_pcm(data_chunk[:usable], bits, fmt)
    if n_channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    if x.size == 0:
        raise AudioFormatError("%s: empty data chunk" % path)
    if clip_id is None:
        clip_id = path
    return AudioClip(id=clip_id, samples=x, sample_rate=int(rate))


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM WAV. Deterministic for identical input."""
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


def resample(clip: AudioClip, target_rate: int = CANONICAL_RATE) -> AudioClip:
    """Windowed-sinc polyphase resampling to the target rate."""
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(clip.sample_rate, target_rate)
    y = resample_poly(clip.samples, target_rate // g, clip.sample_rate // g)
    y = np.clip(y, -1.0, 1.0)
    return AudioClip(id=clip.id, samples=y, sample_rate=target_rate)


def window_values(name: str, length: int) -> np.ndarray:
    """Window samples by name. The hann window is periodic, so an all-ones
    frame windows to a sum of exactly length/2."""
    if name == "rectangular":
        return np.ones(length)
    return hann(length, sym=False)


def frame_signal(clip: AudioClip, spec: FrameSpec) -> np.ndarray:
    """Slice a clip into windowed frames, shape (n_frames, frame_len).

    Frame k starts at k*hop; the trailing partial frame is discarded.
    """
    x = clip.samples
    if len(x) < spec.frame_len:
        raise TooShortError(
            "clip %r: %d samples < frame length %d" % (clip.id, len(x), spec.frame_len))
    n_frames = (len(x) - spec.frame_len) // spec.hop + 1
    idx = np.arange(spec.frame_len)[None, :] + spec.hop * np.arange(n_frames)[:, None]
    frames = x[idx]
    if spec.window != "rectangular":
        frames = frames * window_values(spec.window, spec.frame_len)[None, :]
    return frames


def power_spectrum(frame: np.ndarray) -> np.ndarray:
    """Magnitude-squared one-sided spectrum (N/2+1 bins) of a frame.

    Parseval holds in the convention sum(frame**2) ==
    (S[0] + 2*sum(S[1:-1]) + S[-1]) / N.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if n < 2 or (n & (n - 1)) != 0:
        raise SpectrumSizeError("frame length %d is not a power of two" % n)
    spec = np.fft.rfft(frame, axis=-1)
    return (spec.real ** 2 + spec.imag ** 2)


def rfft_frequencies(n_fft: int, sample_rate: int) -> np.ndarray:
    return np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
