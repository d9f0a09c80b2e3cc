"""Feature front-ends: 68-dim bag-of-frames statistics, 13-dim MFCC
sequences, and auditory temporal-modulation vectors, plus the on-disk
feature cache keyed by (instance id, transform hash).
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio import (CANONICAL_RATE, LONG_FRAME, SHORT_FRAME, AudioClip,
                    FrameSpec, TooShortError, frame_signal, power_spectrum,
                    rfft_frequencies, window_values)

N_FRAME_FEATURES = 17
BFF_DIM = 68
N_MFCC = 13
MFCC_MEL_BANDS = 40
AM_MEL_BANDS = 32
AM_MOD_BINS = 24
AM_DIM = AM_MEL_BANDS * AM_MOD_BINS  # 768
AM_MOD_LO_HZ = 0.25
AM_MOD_HI_HZ = 16.0
TEXTURE_WINDOW_S = 30.0
AM_SEGMENT_S = 27.7
ROLLOFF_FRACTION = 0.85
_LOG_FLOOR = 1e-20


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """HTK-style triangular mel filters (peak 1), shape (n_filters, n_fft//2+1),
    spanning 0 Hz to Nyquist."""
    freqs = rfft_frequencies(n_fft, sample_rate)
    pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0),
                                n_filters + 2))
    weights = np.zeros((n_filters, len(freqs)))
    for m in range(n_filters):
        lo, mid, hi = pts[m], pts[m + 1], pts[m + 2]
        rise = (freqs - lo) / max(mid - lo, 1e-12)
        fall = (hi - freqs) / max(hi - mid, 1e-12)
        weights[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return weights


def _mel_band_edges_hz(n_filters: int, sample_rate: int) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0),
                                 n_filters + 2))


def mel_band_of_frequency(freq_hz: float, n_filters: int, sample_rate: int) -> int:
    """Index of the filter whose peak region covers freq_hz."""
    pts = _mel_band_edges_hz(n_filters, sample_rate)
    centers = pts[1:-1]
    return int(np.argmin(np.abs(centers - freq_hz)))


def _mfcc_from_mel_power(mel_power: np.ndarray) -> np.ndarray:
    """log mel power -> DCT-II -> coefficients 1..13 (zeroth excluded, so a
    global gain change cancels)."""
    logmel = np.log(mel_power + _LOG_FLOOR)
    coeffs = dct(logmel, type=2, norm="ortho", axis=-1)
    return coeffs[..., 1:N_MFCC + 1]


def low_level_frame_features(frame: np.ndarray,
                             prev_power: np.ndarray | None,
                             sample_rate: int = CANONICAL_RATE,
                             mel_weights: np.ndarray | None = None):
    """17 features of one rectangular frame: [zcr, centroid, rolloff(0.85),
    flux, mfcc1..mfcc13]. Returns (features, power_spectrum) so the caller
    can thread the spectrum into the next frame's flux.

    Zero crossing rate uses the raw frame; the spectral features use a
    hann-windowed copy. Silent frames define centroid and rolloff as 0;
    flux is computed on raw (unnormalized) power spectra and is 0 for the
    first frame.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = len(frame)
    signs = np.where(frame >= 0.0, 1.0, -1.0)
    zcr = float(np.count_nonzero(np.diff(signs))) / (n - 1)

    power = power_spectrum(frame * window_values("hann", n))
    total = float(power.sum())
    freqs = rfft_frequencies(n, sample_rate)
    if total > 0.0:
        centroid = float((freqs * power).sum() / total)
        cum = np.cumsum(power)
        rolloff = float(freqs[np.searchsorted(cum, ROLLOFF_FRACTION * total)])
    else:
        centroid = 0.0
        rolloff = 0.0
    if prev_power is None:
        flux = 0.0
    else:
        flux = float(np.sqrt(np.sum((power - prev_power) ** 2)))

    if mel_weights is None:
        mel_weights = mel_filterbank(MFCC_MEL_BANDS, n, sample_rate)
    mfcc = _mfcc_from_mel_power(mel_weights @ power)
    feats = np.empty(N_FRAME_FEATURES)
    feats[0] = zcr
    feats[1] = centroid
    feats[2] = rolloff
    feats[3] = flux
    feats[4:] = mfcc
    return feats, power


def frame_feature_matrix(clip: AudioClip, spec: FrameSpec = SHORT_FRAME) -> np.ndarray:
    """Per-frame 17-dim features for a whole clip, shape (n_frames, 17)."""
    if clip.sample_rate != CANONICAL_RATE:
        raise ValueError("clip %r: expected %d Hz (resample first)"
                         % (clip.id, CANONICAL_RATE))
    raw = frame_signal(clip, FrameSpec(spec.frame_len, spec.hop, "rectangular"))
    windowed = raw * window_values("hann", spec.frame_len)[None, :]
    power = power_spectrum(windowed)
    n_frames = raw.shape[0]
    freqs = rfft_frequencies(spec.frame_len, clip.sample_rate)

    signs = np.where(raw >= 0.0, 1.0, -1.0)
    zcr = np.count_nonzero(np.diff(signs, axis=1), axis=1) / (spec.frame_len - 1)

    total = power.sum(axis=1)
    nonsilent = total > 0.0
    centroid = np.zeros(n_frames)
    rolloff = np.zeros(n_frames)
    if nonsilent.any():
        centroid[nonsilent] = (power[nonsilent] @ freqs) / total[nonsilent]
        cum = np.cumsum(power[nonsilent], axis=1)
        targets = ROLLOFF_FRACTION * total[nonsilent]
        idx = np.array([np.searchsorted(c, t) for c, t in zip(cum, targets)])
        rolloff[nonsilent] = freqs[idx]

    flux = np.zeros(n_frames)
    if n_frames > 1:
        flux[1:] = np.sqrt(np.sum(np.diff(power, axis=0) ** 2, axis=1))

    mel_weights = mel_filterbank(MFCC_MEL_BANDS, spec.frame_len, clip.sample_rate)
    mfcc = _mfcc_from_mel_power(power @ mel_weights.T)

    feats = np.column_stack([zcr, centroid, rolloff, flux, mfcc])
    return feats


def bff(clip: AudioClip) -> np.ndarray:
    """68-dim bag-of-frames vector.

    Per texture window (30 s of 23.2 ms half-overlapped frames): mean and
    std of the 17 frame features (34 values). Clip level: mean and std of
    the window vectors, concatenated [win-means(34), win-stds(34)] ->
    [clip-means(34), clip-stds(34)].

    Clips shorter than one texture window use a single whole-clip window
    (clip-level stds are then exactly 0); a trailing partial window is
    discarded when at least one full window exists.
    """
    feats = frame_feature_matrix(clip, SHORT_FRAME)
    if feats.shape[0] < 2:
        raise TooShortError("clip %r: need at least 2 frames" % clip.id)
    per_window = int(round(TEXTURE_WINDOW_S * CANONICAL_RATE / SHORT_FRAME.hop))
    n_frames = feats.shape[0]
    if n_frames < per_window:
        windows = [feats]
    else:
        windows = [feats[k * per_window:(k + 1) * per_window]
                   for k in range(n_frames // per_window)]
    stats = np.stack([np.concatenate([w.mean(axis=0), w.std(axis=0)])
                      for w in windows])
    return np.concatenate([stats.mean(axis=0), stats.std(axis=0)])


def mfcc_sequence(clip: AudioClip) -> np.ndarray:
    """13 MFCCs (after the zeroth) per 93 ms half-overlapped frame,
    shape (n_frames, 13)."""
    if clip.sample_rate != CANONICAL_RATE:
        raise ValueError("clip %r: expected %d Hz (resample first)"
                         % (clip.id, CANONICAL_RATE))
    frames = frame_signal(clip, LONG_FRAME)
    power = power_spectrum(frames)
    mel_weights = mel_filterbank(MFCC_MEL_BANDS, LONG_FRAME.frame_len, clip.sample_rate)
    return _mfcc_from_mel_power(power @ mel_weights.T)


def am_modulation_bins() -> tuple[np.ndarray, np.ndarray]:
    """24 log-spaced modulation-bin centers over 0.25-16 Hz and their edges
    (geometric midpoints, extended by half a step at both ends)."""
    centers = np.geomspace(AM_MOD_LO_HZ, AM_MOD_HI_HZ, AM_MOD_BINS)
    ratio = centers[1] / centers[0]
    edges = np.empty(AM_MOD_BINS + 1)
    edges[1:-1] = np.sqrt(centers[:-1] * centers[1:])
    edges[0] = centers[0] / np.sqrt(ratio)
    edges[-1] = centers[-1] * np.sqrt(ratio)
    return centers, edges


def am_features(clip: AudioClip) -> np.ndarray:
    """Auditory temporal-modulation vector, 32 mel bands x 24 modulation
    bins = 768 nonnegative values.

    Per segment of about 27.7 s: 32-band mel power spectrogram (23.2 ms
    frames, 50% overlap); per band, the envelope is mean-subtracted and its
    magnitude spectrum pooled (mean) into the log-spaced modulation bins.
    Segments are averaged; short clips are zero-padded to one segment.
    """
    if clip.sample_rate != CANONICAL_RATE:
        raise ValueError("clip %r: expected %d Hz (resample first)"
                         % (clip.id, CANONICAL_RATE))
    if clip.duration_seconds < 2.0:
        raise TooShortError("clip %r: need at least 2 s for modulation features"
                            % clip.id)
    frames = frame_signal(clip, SHORT_FRAME)
    power = power_spectrum(frames)
    mel_weights = mel_filterbank(AM_MEL_BANDS, SHORT_FRAME.frame_len, clip.sample_rate)
    envelopes = power @ mel_weights.T  # (n_frames, 32)

    env_rate = CANONICAL_RATE / SHORT_FRAME.hop
    seg_frames = int(round(AM_SEGMENT_S * env_rate))
    n_frames = envelopes.shape[0]
    if n_frames < seg_frames:
        segments = [envelopes]
    else:
        segments = [envelopes[k * seg_frames:(k + 1) * seg_frames]
                    for k in range(n_frames // seg_frames)]

    _, edges = am_modulation_bins()
    mod_freqs = np.arange(seg_frames // 2 + 1) * (env_rate / seg_frames)
    bin_of = np.digitize(mod_freqs, edges) - 1  # -1 = below lowest edge
    out = np.zeros((AM_MEL_BANDS, AM_MOD_BINS))
    for seg in segments:
        centered = seg - seg.mean(axis=0, keepdims=True)
        mag = np.abs(np.fft.rfft(centered, n=seg_frames, axis=0))  # (bins, 32)
        for b in range(AM_MOD_BINS):
            sel = bin_of == b
            if sel.any():
                out[:, b] += mag[sel].mean(axis=0)
    out /= len(segments)
    return out.reshape(-1)


FEATURE_KINDS = {
    "bff": bff,
    "mfcc": mfcc_sequence,
    "am": am_features,
}

CACHE_VERSION = 1


class CacheFormatError(ValueError):
    """Cache record with an unknown version header."""


class FeatureCache:
    """Disk cache of feature arrays keyed by (kind, instance id, transform
    hash). Records are .npz files with a version field and a payload hash;
    writes go through a temp file + atomic replace, so concurrent readers
    never observe partial records."""

    def __init__(self, root):
        self.root = Path(root)

    def _path(self, kind: str, instance_id: str, spec_hash: str) -> Path:
        safe = instance_id.replace(os.sep, "_")
        return self.root / kind / ("%s__%s.npz" % (safe, spec_hash))

    @staticmethod
    def _digest(array: np.ndarray) -> str:
        return hashlib.sha256(array.tobytes()).hexdigest()

    def get(self, kind: str, instance_id: str, spec_hash: str):
        path = self._path(kind, instance_id, spec_hash)
        if not path.exists():
            return None
        try:
            with np.load(path) as rec:
                if int(rec["version"]) != CACHE_VERSION:
                    raise CacheFormatError(
                        "cache record %s has version %d" % (path, int(rec["version"])))
                payload = rec["payload"]
                if str(rec["digest"]) != self._digest(payload):
                    return None  # corrupt record: treat as a miss
                return payload
        except CacheFormatError:
            raise
        except (OSError, KeyError, ValueError, EOFError, zipfile.BadZipFile):
            return None

    def put(self, kind: str, instance_id: str, spec_hash: str,
            payload: np.ndarray) -> None:
        path = self._path(kind, instance_id, spec_hash)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, version=CACHE_VERSION, payload=payload,
                         digest=self._digest(payload))
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get_or_compute(self, kind: str, instance_id: str, spec_hash: str,
                       compute):
        hit = self.get(kind, instance_id, spec_hash)
        if hit is not None:
            return hit
        value = np.asarray(compute())
        self.put(kind, instance_id, spec_hash, value)
        return value
