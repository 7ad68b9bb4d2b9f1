"""Analytic validation suite: the simulator against closed-form oracles.

Validation is separate from calibration: these checks prove the queueing
core and the analytics primitives correct against independent mathematics,
not that a scenario matches any particular operating point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import erlang
from .analytics import kmeans_fit
from .analytics.forecast import ARLeastSquares
from .engine import (
    Engine,
    EventKind,
    Exponential,
    Job,
    StationConfig,
)
from .workload import ArrivalProfile, generate_arrivals


@dataclass
class CheckResult:
    name: str
    measured: float
    target: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: measured={self.measured:.6g} "
                f"target={self.target:.6g} tol={self.tolerance:.3g} {self.detail}")


# ---------------------------------------------------------------------------
# engine-level M/M/c harness

@dataclass
class QueueStats:
    mean_time_in_system: float
    mean_wait: float
    littles_l: float
    littles_lambda: float
    littles_w: float
    count: int


def simulate_mmc(lam: float, mu: float, c: int, horizon_s: float, seed: int,
                 warmup_frac: float = 0.1) -> QueueStats:
    """Drive a single c-server exponential station with Poisson arrivals on
    the real kernel and collect post-warmup sojourn statistics."""
    eng = Engine(seed)
    station = eng.add_station(StationConfig("svc", servers=c, service=Exponential(mu)))
    rng = eng.rng("arrivals")
    warmup = horizon_s * warmup_frac
    done: list[tuple[float, float, float]] = []   # (enqueue, start, done)
    snapshot: dict = {}

    def on_outcome(job: Job):
        def cb(outcome: str, now: float) -> None:
            if outcome == "success" and job.enqueue_s >= warmup:
                done.append((job.enqueue_s, job.start_s, job.done_s))
        return cb

    def arrive(now: float) -> None:
        nxt = now + rng.exponential(1.0 / lam)
        if nxt < horizon_s:
            eng.at(nxt, EventKind.ARRIVAL, arrive)
        job = Job("job", lambda o, t: None)
        job.on_outcome = on_outcome(job)
        station.offer(job, now)

    def snap(now: float) -> None:
        station._advance(now)
        snapshot.update(station.snapshot())

    eng.at(warmup, EventKind.METRIC_TICK, snap)
    first = rng.exponential(1.0 / lam)
    if first < horizon_s:
        eng.at(first, EventKind.ARRIVAL, arrive)
    eng.run_until(horizon_s)

    if not done:
        raise RuntimeError("no completions; horizon too short")
    times = [(d - e) for e, s, d in done]
    waits = [(s - e) for e, s, d in done]
    window = horizon_s - warmup
    n_area = station.n_area - snapshot.get("n_area", 0.0)
    arrivals = station.arrivals - snapshot.get("arrivals", 0)
    departures = station.departures - snapshot.get("departures", 0)
    time_in = station.time_in_station - snapshot.get("time_in_station", 0.0)
    return QueueStats(
        mean_time_in_system=sum(times) / len(times),
        mean_wait=sum(waits) / len(waits),
        littles_l=n_area / window,
        littles_lambda=arrivals / window,
        littles_w=time_in / max(1, departures),
        count=len(done),
    )


def check_mm1(lam: float = 0.8, mu: float = 1.0, horizon_s: float = 200_000.0,
              seed: int = 7, tolerance: float = 0.05,
              simulated_mu: Optional[float] = None) -> CheckResult:
    """Mean time in system vs 1/(mu - lambda). `simulated_mu` exists so a
    test can inject a wrong constant and watch the check fail."""
    sim_mu = mu if simulated_mu is None else simulated_mu
    stats = simulate_mmc(lam, sim_mu, 1, horizon_s, seed)
    target = erlang.mm1_mean_time_in_system(lam, mu)
    err = abs(stats.mean_time_in_system - target) / target
    return CheckResult("M/M/1 mean time in system", stats.mean_time_in_system,
                       target, tolerance, err <= tolerance,
                       detail=f"rel_err={err:.4f} n={stats.count}")


def check_mmc(lam: float = 1.5, mu: float = 1.0, c: int = 2,
              horizon_s: float = 200_000.0, seed: int = 11,
              tolerance: float = 0.05) -> CheckResult:
    stats = simulate_mmc(lam, mu, c, horizon_s, seed)
    target = erlang.mmc_mean_wait(lam, mu, c)
    err = abs(stats.mean_wait - target) / target
    return CheckResult(f"M/M/{c} mean wait (Erlang-C)", stats.mean_wait,
                       target, tolerance, err <= tolerance,
                       detail=f"rel_err={err:.4f} n={stats.count}")


def check_littles_law(lam: float = 0.8, mu: float = 1.0, c: int = 1,
                      horizon_s: float = 200_000.0, seed: int = 13,
                      tolerance: float = 0.05) -> CheckResult:
    stats = simulate_mmc(lam, mu, c, horizon_s, seed)
    lhs = stats.littles_l
    rhs = stats.littles_lambda * stats.littles_w
    err = abs(lhs - rhs) / lhs
    return CheckResult("Little's law L = lambda*W", lhs, rhs, tolerance,
                       err <= tolerance, detail=f"rel_err={err:.4f}")


# ---------------------------------------------------------------------------
# thinning goodness of fit

def chi2_critical(df: int, p: float = 0.99) -> float:
    """Wilson-Hilferty approximation of the chi-square quantile."""
    z = {0.99: 2.3263, 0.95: 1.6449}[p]
    return df * (1.0 - 2.0 / (9.0 * df) + z * math.sqrt(2.0 / (9.0 * df))) ** 3


def check_thinning(base_rate: float = 12.0, amplitude: float = 0.8,
                   period_s: float = 600.0, horizon_s: float = 12_000.0,
                   seed: int = 17, n_bins: int = 60,
                   significance: float = 0.99) -> CheckResult:
    """Chi-square fit of binned thinned arrivals against the integrated
    intensity of a diurnal profile, at the 1% level."""
    profile = ArrivalProfile(kind="diurnal", base_rate=base_rate,
                             amplitude=amplitude, period_s=period_s)
    times = generate_arrivals(profile, horizon_s, Engine(seed).rng("arrivals"))
    width = horizon_s / n_bins
    observed = [0] * n_bins
    for t in times:
        observed[min(n_bins - 1, int(t / width))] += 1

    def integral(a: float, b: float) -> float:
        # integral of base*(1 + A*sin(2*pi*t/P)) on [a, b]
        w = 2.0 * math.pi / period_s
        return base_rate * ((b - a) + amplitude / w * (math.cos(w * a) - math.cos(w * b)))

    expected = [integral(i * width, (i + 1) * width) for i in range(n_bins)]
    stat = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    crit = chi2_critical(n_bins - 1, significance)
    return CheckResult("NHPP thinning chi-square GOF", stat, crit, 0.0,
                       stat <= crit, detail=f"n={len(times)} bins={n_bins}")


# ---------------------------------------------------------------------------
# analytics oracles

KMEANS_FIXTURE = [(0.0, 0.0), (0.0, 1.0), (10.0, 10.0), (10.0, 11.0)]


def brute_force_kmeans_inertia(points, k: int = 2) -> float:
    """Exhaustive minimum inertia over all k-partitions (tiny fixtures only)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    best = math.inf
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) != k:
            continue
        inertia = 0.0
        arr = np.asarray(labels)
        for c in range(k):
            members = pts[arr == c]
            centroid = members.mean(axis=0)
            inertia += float(((members - centroid) ** 2).sum())
        best = min(best, inertia)
    return best


def check_kmeans(seed: int = 3) -> CheckResult:
    model = kmeans_fit(KMEANS_FIXTURE, 2, Engine(seed).rng("kmeans"))
    target = brute_force_kmeans_inertia(KMEANS_FIXTURE, 2)
    err = abs(model.inertia - target)
    return CheckResult("k-means vs brute-force partition", model.inertia,
                       target, 1e-9, err <= 1e-9)


def check_ls_orthogonality(seed: int = 5, n: int = 200, lags: int = 3,
                           tolerance: float = 1e-6) -> CheckResult:
    rng = Engine(seed).rng("ls")
    y = [10.0 + 0.5 * i + 3.0 * math.sin(i / 5.0) + rng.standard_normal()
         for i in range(n)]
    model = ARLeastSquares(lags=lags).fit(y)
    worst = max(model.residual_feature_products(y))
    return CheckResult("least-squares residual orthogonality", worst, 0.0,
                       tolerance, worst <= tolerance)


# ---------------------------------------------------------------------------
# suite

def run_validation(quick: bool = False) -> list[CheckResult]:
    horizon = 20_000.0 if quick else 200_000.0
    tol = 0.10 if quick else 0.05
    checks = [
        check_mm1(horizon_s=horizon, tolerance=tol),
        check_mmc(horizon_s=horizon, tolerance=tol),
        check_littles_law(horizon_s=horizon, tolerance=tol),
        check_thinning(horizon_s=3_000.0 if quick else 12_000.0),
        check_kmeans(),
        check_ls_orthogonality(),
    ]
    return checks
