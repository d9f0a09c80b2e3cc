"""Stress-tests the validity of audio autotagging evaluation.

Trains three classifier families on a two-tag task, then drives any of
their figures of merit to random-consistent or near-perfect with
perceptually irrelevant filterbank equalizations, certifying each run with
exact hypothesis tests and a covariate-shift divergence check.
"""

__version__ = "0.1.0"

from .labels import LABELS, NONVOCALS, VOCALS, Label

__all__ = ["LABELS", "NONVOCALS", "VOCALS", "Label", "__version__"]
