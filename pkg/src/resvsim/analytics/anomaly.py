"""Demand spike detection via rolling median and MAD.

Robust-statistics replacement for classifier-based anomaly detection:
transparent, needs no labeled training data, and testable by hand.
"""

from __future__ import annotations

from statistics import median
from typing import Sequence

from ..engine import ConfigError


def detect_spike(series: Sequence[float], window: int = 6, threshold: float = 5.0) -> list[bool]:
    """Flag intervals that deviate from their trailing context.

    Interval i is flagged iff |x_i - median(trailing window)| exceeds
    threshold * max(MAD, 1); the window is the `window` values before i,
    so the first `window` intervals (and any series shorter than the
    window) are never flagged.
    """
    if window < 3:
        raise ConfigError("spike detection window must be >= 3")
    if threshold <= 0:
        raise ConfigError("spike threshold must be positive")
    flags = [False] * len(series)
    for i in range(window, len(series)):
        ctx = series[i - window:i]
        med = median(ctx)
        mad = median(abs(v - med) for v in ctx)
        if abs(series[i] - med) > threshold * max(mad, 1.0):
            flags[i] = True
    return flags
