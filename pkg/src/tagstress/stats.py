"""Exact hypothesis tests: the random-consistency test (maximized joint
binomial tail) and the paired contradiction test (exact sign test).

Binomial tails are evaluated through log-gamma sums so fold sizes in the
thousands cannot overflow or underflow to meaningless zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_ALPHA = 0.01

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class OutcomePair:
    """Correct-count statistics: x of n_t tagged-t instances correct,
    y of n_tbar tagged-not-t instances correct."""

    x: int
    y: int
    n_t: int
    n_tbar: int

    def __post_init__(self):
        if not (0 <= self.x <= self.n_t):
            raise ValueError("need 0 <= x <= n_t")
        if not (0 <= self.y <= self.n_tbar):
            raise ValueError("need 0 <= y <= n_tbar")


@dataclass(frozen=True)
class PairedOutcome:
    """Contradiction counts between two systems: a12 instances where only
    system 1 is correct, a21 where only system 2 is."""

    a12: int
    a21: int

    def __post_init__(self):
        if self.a12 < 0 or self.a21 < 0:
            raise ValueError("contradiction counts must be nonnegative")

    @property
    def b(self) -> int:
        return self.a12 + self.a21


def log_binom_tail(k: int, n: int, p: float) -> float:
    """log P[X >= k] for X ~ Bin(n, p), via log-gamma + logsumexp."""
    if k <= 0:
        return 0.0
    if k > n:
        return -np.inf
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return 0.0
    i = np.arange(k, n + 1)
    log_terms = (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
                 + i * math.log(p) + (n - i) * math.log1p(-p))
    return float(logsumexp(log_terms))


def _log_joint_tail(pair: OutcomePair, p_t: float) -> float:
    """log of P[X >= x; Bin(n_t, p_t)] * P[Y >= y; Bin(n_tbar, 1 - p_t)]."""
    return (log_binom_tail(pair.x, pair.n_t, p_t)
            + log_binom_tail(pair.y, pair.n_tbar, 1.0 - p_t))


def random_consistency_pvalue(pair: OutcomePair,
                              grid_points: int = 1001) -> tuple[float, float]:
    """Maximize the joint tail probability over the random-system parameter.

    Returns (p_value, argmax p_t): the largest, over p_t in [0, 1], of
    P[X >= x] * P[Y >= y] with X ~ Bin(n_t, p_t) and Y ~ Bin(n_tbar, 1-p_t).
    A coarse grid locates the maximum; golden-section search refines the
    bracketing interval (the grid max guards against multimodality).
    """
    grid = np.linspace(0.0, 1.0, grid_points)
    values = np.array([_log_joint_tail(pair, p) for p in grid])
    k = int(np.argmax(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid_points - 1)]

    # Golden-section maximization of the log objective on [lo, hi].
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _log_joint_tail(pair, c)
    fd = _log_joint_tail(pair, d)
    for _ in range(200):
        if b - a < 1e-12:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _log_joint_tail(pair, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _log_joint_tail(pair, d)
    candidates = [(values[k], grid[k]), (fc, c), (fd, d)]
    best_log, best_p = max(candidates, key=lambda t: t[0])
    return float(np.exp(best_log)), float(best_p)


def paired_contradiction_pvalue(pair: PairedOutcome,
                                direction: str = "12") -> float:
    """Exact one-sided sign test on the contradiction counts.

    P[A >= a] for A ~ Bin(b, 1/2), where a is a12 or a21 as selected by
    direction. b = 0 gives p = 1.
    """
    if direction == "12":
        a = pair.a12
    elif direction == "21":
        a = pair.a21
    else:
        raise ValueError("direction must be '12' or '21'")
    b = pair.b
    if b == 0 or a <= 0:
        return 1.0
    return float(np.exp(log_binom_tail(a, b, 0.5)))


def random_consistency_region(n_t: int, n_tbar: int,
                              alpha: float = DEFAULT_ALPHA,
                              p_t_values=None):
    """Boundary of the fail-to-reject region for a grid of illustrative
    random systems, for plotting: per p_t, for each x, the largest y whose
    joint tail stays >= alpha. Yields (p_t, x/n_t, y/n_tbar) triples.

    The test itself maximizes over continuous p_t; this grid exists only to
    draw the region the way the trajectory plots do.
    """
    if p_t_values is None:
        p_t_values = [round(0.1 * k, 1) for k in range(1, 10)]
    for p_t in p_t_values:
        for x in range(n_t + 1):
            log_x = log_binom_tail(x, n_t, p_t)
            best_y = None
            for y in range(n_tbar, -1, -1):
                if log_x + log_binom_tail(y, n_tbar, 1.0 - p_t) >= math.log(alpha):
                    best_y = y
                    break
            if best_y is not None:
                yield (p_t, x / n_t, best_y / n_tbar)
