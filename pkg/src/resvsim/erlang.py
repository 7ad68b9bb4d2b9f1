"""Closed-form M/M/c results used to validate the simulator.

Pure arithmetic, no dependency on the event kernel, so simulation and
formula stay independent routes to the same quantities.
"""

from __future__ import annotations

import math


def mm1_mean_time_in_system(lam: float, mu: float) -> float:
    """W = 1 / (mu - lambda) for a stable M/M/1 queue."""
    if lam >= mu:
        raise ValueError(f"unstable M/M/1: lambda={lam} >= mu={mu}")
    return 1.0 / (mu - lam)


def erlang_c(c: int, offered_load: float) -> float:
    """Probability an arrival waits in an M/M/c queue (offered load a = lambda/mu)."""
    if c < 1:
        raise ValueError("c must be >= 1")
    rho = offered_load / c
    if rho >= 1.0:
        return 1.0
    summation = sum(offered_load ** k / math.factorial(k) for k in range(c))
    tail = offered_load ** c / math.factorial(c) / (1.0 - rho)
    return tail / (summation + tail)


def mmc_mean_wait(lam: float, mu: float, c: int) -> float:
    """Mean queueing delay Wq for a stable M/M/c queue."""
    a = lam / mu
    if a >= c:
        raise ValueError(f"unstable M/M/c: offered load {a} >= c={c}")
    return erlang_c(c, a) / (c * mu - lam)


def mmc_mean_time_in_system(lam: float, mu: float, c: int) -> float:
    return mmc_mean_wait(lam, mu, c) + 1.0 / mu


def mmc_mean_number_in_system(lam: float, mu: float, c: int) -> float:
    """L = lambda * W (Little's law applied to the closed form)."""
    return lam * mmc_mean_time_in_system(lam, mu, c)
