"""Covariate-shift certification: estimate the train/test feature-space
divergence with an ensemble of averaged perceptrons on the domain-labeling
task, plus the finite-sample upper bound on the population divergence.

The empirical divergence follows the proxy-A-distance convention
d = 2 * (1 - 2 * min_h error(h)), clamped to [0, 2]: indistinguishable
samples give errors near 1/2 and a divergence near 0."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ENSEMBLE = 10
DEFAULT_EPOCHS = 20
DEFAULT_DELTA = 0.05
# Linear perceptron with bias over 13-dim MFCC frames.
DEFAULT_VC_DIM = 14


class ArityError(ValueError):
    """Sample sizes violate the half/half protocol."""


class FrameDataError(ValueError):
    """Not enough frames available to sample."""


@dataclass(frozen=True)
class FrameSample:
    """m feature frames drawn from one side (train-side 0, test-side 1)."""

    frames: np.ndarray
    side: int

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValueError("frames must be (n, d)")
        if self.side not in (0, 1):
            raise ValueError("side must be 0 or 1")

    @property
    def m(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class DivergenceReport:
    per_classifier_errors: tuple
    best_error: float
    d_hat: float
    m: int
    vc_dim: int
    delta: float
    additive_term: float
    bound: float

    def as_items(self):
        for j, err in enumerate(self.per_classifier_errors):
            yield ("error_%02d" % j, err)
        yield ("best_error", self.best_error)
        yield ("d_hat", self.d_hat)
        yield ("m", self.m)
        yield ("vc_dim", self.vc_dim)
        yield ("delta", self.delta)
        yield ("additive_term", self.additive_term)
        yield ("bound", self.bound)


def sample_frames(frames_by_clip, n: int, rng, side: int = 0) -> FrameSample:
    """Uniform without-replacement draw of n frames pooled over all clips."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    blocks = [np.asarray(b, dtype=np.float64) for b in frames_by_clip if len(b)]
    if not blocks:
        raise FrameDataError("no frames available")
    pooled = np.vstack(blocks)
    if len(pooled) < n:
        raise FrameDataError("requested %d frames, only %d available"
                             % (n, len(pooled)))
    idx = rng.choice(len(pooled), size=n, replace=False)
    return FrameSample(frames=pooled[idx], side=side)


def _averaged_perceptron(train_x, train_y, test_x, test_y, seed: int,
                         epochs: int = DEFAULT_EPOCHS) -> float:
    """Held-out error of one averaged perceptron on the domain task."""
    rng = np.random.default_rng(seed)
    n, d = train_x.shape
    aug = np.column_stack([train_x, np.ones(n)])
    signs = np.where(train_y > 0, 1.0, -1.0)
    w = np.zeros(d + 1)
    acc = np.zeros(d + 1)
    steps = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            if signs[i] * float(w @ aug[i]) <= 0.0:
                w = w + signs[i] * aug[i]
            acc += w
            steps += 1
    avg = acc / steps
    scores = test_x @ avg[:-1] + avg[-1]
    preds = scores > 0.0
    return float(np.mean(preds != (test_y > 0)))


def empirical_divergence(u: FrameSample, u_prime: FrameSample,
                         ensemble: int = DEFAULT_ENSEMBLE, rng=None,
                         epochs: int = DEFAULT_EPOCHS):
    """Train/test halves of each side feed an ensemble of perceptrons that
    try to tell the sides apart; the best held-out error gives
    d_hat = max(0, 2*(1 - 2*min error)). Returns (d_hat, per-classifier
    errors)."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if u.m != u_prime.m:
        raise ArityError("sides must have equal counts, got %d and %d"
                         % (u.m, u_prime.m))
    if u.m % 2 != 0:
        raise ArityError("m must be even for the half/half split")
    half = u.m // 2
    train_x = np.vstack([u.frames[:half], u_prime.frames[:half]])
    train_y = np.concatenate([np.zeros(half), np.ones(half)])
    test_x = np.vstack([u.frames[half:], u_prime.frames[half:]])
    test_y = np.concatenate([np.zeros(u.m - half), np.ones(u_prime.m - half)])

    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    train_z = (train_x - mean) / std
    test_z = (test_x - mean) / std

    seeds = [int(rng.integers(0, 2 ** 62)) for _ in range(ensemble)]
    errors = tuple(_averaged_perceptron(train_z, train_y, test_z, test_y,
                                        seed, epochs) for seed in seeds)
    best = min(errors)
    d_hat = max(0.0, 2.0 * (1.0 - 2.0 * best))
    return d_hat, errors


def divergence_bound(d_hat: float, m: int, vc_dim: int = DEFAULT_VC_DIM,
                     delta: float = DEFAULT_DELTA) -> tuple[float, float]:
    """Finite-sample upper bound: d_hat plus
    4*sqrt((vc_dim*ln(2m) + ln(2/delta)) / m). Natural logs. Returns
    (bound, additive_term)."""
    if m < 1 or vc_dim < 1:
        raise ValueError("m and vc_dim must be positive")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    additive = 4.0 * math.sqrt((vc_dim * math.log(2 * m) + math.log(2.0 / delta)) / m)
    return d_hat + additive, additive


def divergence_report(u: FrameSample, u_prime: FrameSample,
                      ensemble: int = DEFAULT_ENSEMBLE, rng=None,
                      vc_dim: int = DEFAULT_VC_DIM,
                      delta: float = DEFAULT_DELTA,
                      epochs: int = DEFAULT_EPOCHS) -> DivergenceReport:
    d_hat, errors = empirical_divergence(u, u_prime, ensemble, rng, epochs)
    bound, additive = divergence_bound(d_hat, u.m, vc_dim, delta)
    return DivergenceReport(per_classifier_errors=errors,
                            best_error=min(errors), d_hat=d_hat, m=u.m,
                            vc_dim=vc_dim, delta=delta,
                            additive_term=additive, bound=bound)
