"""Irrelevant-transformation engine: a 96-channel near-perfect-reconstruction
modulated filterbank plus a sampler of bounded random per-channel attenuations.

The bank is undecimated and cosine-modulated: channel b is the windowed-sinc
prototype shifted to center (b + 1/2) * (fs/2) / channels. The modulated
kernels sum exactly to a unit impulse, so analysis followed by unity-gain
synthesis reconstructs the input to float rounding (around -300 dB). Applying
a gain vector is the LTI filter sum_b g_b * h_b, realized as one zero-phase
FFT convolution with the composite kernel.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.signal.windows import kaiser

from .audio import AudioClip

DEFAULT_CHANNELS = 96
DEFAULT_TAPS = 64
MAX_ATTENUATION_DB = 20.0

# Reported floor for a bit-exact round trip; real errors this small are
# indistinguishable from zero for every consumer of the value.
PERFECT_DB = -300.0


class FilterbankDesignError(ValueError):
    """Infeasible filterbank design parameters."""


class FilterShapeError(ValueError):
    """Gain vector does not match the filterbank channel count."""


class SilentClipError(ValueError):
    """Reconstruction error is undefined for an all-zero clip."""


@dataclass(frozen=True)
class FilterbankDesign:
    """Uniform cosine-modulated bank: prototype lowpass plus channel count."""

    channels: int
    taps_per_channel: int
    prototype: np.ndarray
    kaiser_beta: float = 10.0

    @property
    def kernel_half(self) -> int:
        return (len(self.prototype) - 1) // 2

    def channel_kernels(self) -> np.ndarray:
        """All channel impulse responses, shape (channels, kernel_len)."""
        half = self.kernel_half
        n = np.arange(-half, half + 1)
        b = np.arange(self.channels)[:, None]
        mod = np.cos(np.pi * (2 * b + 1) * n[None, :] / (2 * self.channels))
        return 2.0 * self.prototype[None, :] * mod

    def composite_kernel(self, gains: np.ndarray) -> np.ndarray:
        """Impulse response of the bank with per-channel gains applied."""
        gains = np.asarray(gains, dtype=np.float64)
        if gains.shape != (self.channels,):
            raise FilterShapeError(
                "gain vector has %r entries, design has %d channels"
                % (gains.shape, self.channels))
        return gains @ self.channel_kernels()

    def channel_edges_hz(self, sample_rate: int) -> np.ndarray:
        """Channel band edges in Hz (channels + 1 values from 0 to Nyquist)."""
        return np.arange(self.channels + 1) * (sample_rate / 2.0) / self.channels

    def channel_of_frequency(self, freq_hz: float, sample_rate: int) -> int:
        width = (sample_rate / 2.0) / self.channels
        return min(int(freq_hz / width), self.channels - 1)


@dataclass(frozen=True)
class FilterSpec:
    """One irrelevant transformation: 96 linear gains in [0.1, 1] plus the
    RNG seed that produced it."""

    gains: np.ndarray
    seed: int

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=np.float64)
        object.__setattr__(self, "gains", gains)
        if gains.ndim != 1:
            raise ValueError("gains must be a vector")
        lo = 10.0 ** (-MAX_ATTENUATION_DB / 20.0)
        if gains.min() < lo - 1e-12 or gains.max() > 1.0 + 1e-12:
            raise ValueError("gains outside [%g, 1]" % lo)

    @property
    def is_uniform_degenerate(self) -> bool:
        """True when every channel is attenuated (no gain equals 1)."""
        return bool(np.all(self.gains < 1.0))

    def spec_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.seed).tobytes())
        h.update(self.gains.tobytes())
        return h.hexdigest()[:16]

    def serialize(self) -> str:
        """Seed plus 96 gains at 6 significant digits, one line."""
        return "%d\t%s" % (self.seed, " ".join("%.6g" % g for g in self.gains))


IDENTITY_HASH = "identity"


def transform_hash(spec: FilterSpec | None) -> str:
    return IDENTITY_HASH if spec is None else spec.spec_hash()


class TransformSet:
    """Map instance id -> FilterSpec or identity (None).

    Assignment replaces; filters are never composed. Every registered
    instance has exactly one entry.
    """

    def __init__(self, instance_ids):
        self._map: dict[str, FilterSpec | None] = {i: None for i in instance_ids}

    def __len__(self) -> int:
        return len(self._map)

    def ids(self):
        return self._map.keys()

    def get(self, instance_id: str) -> FilterSpec | None:
        return self._map[instance_id]

    def assign(self, instance_id: str, spec: FilterSpec | None) -> None:
        if instance_id not in self._map:
            raise KeyError("unknown instance %r" % instance_id)
        self._map[instance_id] = spec

    def non_identity_ids(self):
        return [i for i, s in self._map.items() if s is not None]

    def serialize_lines(self):
        for i, s in self._map.items():
            if s is None:
                yield "%s\tidentity" % i
            else:
                yield "%s\t%s" % (i, s.serialize())


def design_filterbank(channels: int = DEFAULT_CHANNELS,
                      taps_per_channel: int = DEFAULT_TAPS,
                      kaiser_beta: float = 10.0) -> FilterbankDesign:
    """Design the modulated bank. The prototype is a Kaiser-windowed sinc
    with -6 dB points at the channel edges; its zero crossings land on
    multiples of 2*channels, which is what makes the unity-gain composite
    kernel an exact unit impulse."""
    if channels < 2:
        raise FilterbankDesignError("need at least 2 channels, got %d" % channels)
    if taps_per_channel < 8:
        raise FilterbankDesignError(
            "need at least 8 taps per channel, got %d" % taps_per_channel)
    period = 2 * channels
    half = (taps_per_channel * channels) // 2
    n = np.arange(-half, half + 1)
    proto = np.sinc(n / period) / period
    proto = proto * kaiser(2 * half + 1, kaiser_beta)
    return FilterbankDesign(channels=channels, taps_per_channel=taps_per_channel,
                            prototype=proto, kaiser_beta=kaiser_beta)


def sample_irrelevant_filter(seed: int, channels: int = DEFAULT_CHANNELS) -> FilterSpec:
    """Draw one random equalization: a uniformly random nonempty channel
    subset (each channel kept with probability 1/2, resampled if empty),
    each selected channel attenuated independently and uniformly in
    (0, 20] dB. Unselected channels keep gain 1."""
    rng = np.random.default_rng(seed)
    while True:
        selected = rng.random(channels) < 0.5
        if selected.any():
            break
    atten_db = 20.0 - rng.uniform(0.0, 20.0, size=channels)  # (0, 20]
    gains = np.ones(channels)
    gains[selected] = 10.0 ** (-atten_db[selected] / 20.0)
    return FilterSpec(gains=gains, seed=int(seed))


def analyze(clip: AudioClip, design: FilterbankDesign) -> np.ndarray:
    """Split a clip into per-channel band signals, shape (channels, n).

    Group delay is compensated by center trimming, so channel signals are
    time-aligned with the input and sum back to it with unity gains.
    """
    kernels = design.channel_kernels()
    return np.stack([fftconvolve(clip.samples, k, mode="same") for k in kernels])


def synthesize(bands: np.ndarray, gains: np.ndarray | None = None) -> np.ndarray:
    """Sum band signals, optionally weighted by per-channel gains."""
    bands = np.asarray(bands)
    if gains is None:
        return bands.sum(axis=0)
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (bands.shape[0],):
        raise FilterShapeError("gains/bands channel mismatch")
    return gains @ bands


def apply_filter(clip: AudioClip, spec: FilterSpec,
                 design: FilterbankDesign) -> AudioClip:
    """Filter a clip with the per-channel gains of one FilterSpec.

    Equivalent to synthesize(gains * analyze(clip)) by linearity, but runs
    as a single convolution with the composite kernel. Output length equals
    input length; the filter is linear and time-invariant.
    """
    kernel = design.composite_kernel(spec.gains)
    y = fftconvolve(clip.samples, kernel, mode="same")
    return AudioClip(id=clip.id, samples=y, sample_rate=clip.sample_rate)


def error_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """10*log10(mean((x - xhat)^2) / mean(x^2)), floored at the -300 dB
    sentinel for exact matches."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    denom = float(np.mean(reference ** 2))
    if denom == 0.0:
        raise SilentClipError("reference signal is silent")
    num = float(np.mean((reference - estimate) ** 2))
    if num == 0.0:
        return PERFECT_DB
    return max(10.0 * np.log10(num / denom), PERFECT_DB)


def reconstruction_error_db(clip: AudioClip, design: FilterbankDesign) -> float:
    """Round-trip error of analyze -> unity-gain synthesize, in dB."""
    if not np.any(clip.samples):
        raise SilentClipError("clip %r is silent" % clip.id)
    unity = FilterSpec(gains=np.ones(design.channels), seed=0)
    rebuilt = apply_filter(clip, unity, design)
    return error_db(clip.samples, rebuilt.samples)
