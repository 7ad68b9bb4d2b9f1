"""Demand forecasting over per-interval arrival counts.

Three forecasters: a seasonal-naive baseline (repeat the value one period
back), an autoregressive least-squares model on lag features with a ridge
fallback for singular systems, and a bagged ensemble of depth-limited
regression trees on lag plus seasonal-index features. Multi-step forecasts
are iterated, feeding predictions back as lags, and clamped at zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..engine import ConfigError, RngStream


@dataclass
class DemandSeries:
    interval_s: float
    counts: list[int]
    start_s: float = 0.0

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ConfigError("demand series interval must be positive")
        if len(self.counts) < 1:
            raise ConfigError("demand series needs at least one interval")
        if any(c < 0 for c in self.counts):
            raise ConfigError("demand counts must be non-negative")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["interval_start_s", "count"])
            for i, c in enumerate(self.counts):
                writer.writerow([self.start_s + i * self.interval_s, c])

    @classmethod
    def from_csv(cls, path, interval_s: Optional[float] = None) -> "DemandSeries":
        starts, counts = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                starts.append(float(row["interval_start_s"]))
                counts.append(int(float(row["count"])))
        if not counts:
            raise ConfigError(f"no demand rows in {path}")
        if interval_s is None:
            interval_s = starts[1] - starts[0] if len(starts) > 1 else 1.0
        return cls(interval_s=interval_s, counts=counts, start_s=starts[0])


@dataclass
class Forecast:
    horizon: int
    predicted: list[float]
    model_id: str

    def __post_init__(self):
        if len(self.predicted) != self.horizon:
            raise ConfigError("forecast length must equal its horizon")
        self.predicted = [max(0.0, float(p)) for p in self.predicted]


# ---------------------------------------------------------------------------
# models

class SeasonalNaive:
    """Predict the value observed one period earlier."""

    model_id = "seasonal-naive"

    def __init__(self, period: int):
        if period < 1:
            raise ConfigError("seasonal period must be >= 1")
        self.period = period

    @property
    def min_history(self) -> int:
        return self.period

    @property
    def required_history(self) -> int:
        return self.period

    def fit(self, counts: Sequence[float]) -> "SeasonalNaive":
        if len(counts) < self.period:
            raise ConfigError(f"seasonal-naive needs at least one period ({self.period}) of data")
        return self

    def predict_next(self, history: Sequence[float]) -> float:
        return float(history[-self.period])

    def to_json(self) -> dict:
        return {"model": self.model_id, "period": self.period}


class ARLeastSquares:
    """y_t = a + sum_j b_j * y_(t-j), fit by least squares on lag features."""

    model_id = "ar-ls"

    def __init__(self, lags: int = 4):
        if lags < 1:
            raise ConfigError("ar-ls needs at least one lag")
        self.lags = lags
        self.intercept_ = 0.0
        self.coef_ = np.zeros(lags)
        self.used_ridge = False

    @property
    def min_history(self) -> int:
        return self.lags + 2

    @property
    def required_history(self) -> int:
        return self.lags

    def fit(self, counts: Sequence[float]) -> "ARLeastSquares":
        y = np.asarray(counts, dtype=float)
        if len(y) < self.min_history:
            raise ConfigError(f"ar-ls with {self.lags} lags needs >= {self.min_history} points")
        p = self.lags
        rows = len(y) - p
        X = np.ones((rows, p + 1))
        for j in range(1, p + 1):
            X[:, j] = y[p - j:len(y) - j]
        target = y[p:]
        gram = X.T @ X
        rhs = X.T @ target
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            lam = 1e-6 * np.trace(gram) / gram.shape[0]
            gram = gram + lam * np.eye(gram.shape[0])
            self.used_ridge = True
        beta = np.linalg.solve(gram, rhs)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        return self

    def predict_next(self, history: Sequence[float]) -> float:
        h = history
        val = self.intercept_
        for j in range(1, self.lags + 1):
            val += float(self.coef_[j - 1]) * float(h[-j])
        return val

    def residual_feature_products(self, counts: Sequence[float]) -> list[float]:
        """Dot products of the fit residual with each feature column,
        normalized; near zero for an exact least-squares solution."""
        y = np.asarray(counts, dtype=float)
        p = self.lags
        rows = len(y) - p
        X = np.ones((rows, p + 1))
        for j in range(1, p + 1):
            X[:, j] = y[p - j:len(y) - j]
        resid = y[p:] - X @ np.concatenate([[self.intercept_], self.coef_])
        scale = max(1e-12, float(np.linalg.norm(resid)) * float(np.linalg.norm(X)))
        return [float(abs(X[:, j] @ resid)) / scale for j in range(p + 1)]

    def to_json(self) -> dict:
        return {"model": self.model_id, "lags": self.lags,
                "intercept": self.intercept_, "coef": [float(c) for c in self.coef_]}


def _tree_fit(X: np.ndarray, y: np.ndarray, depth: int, max_depth: int) -> dict:
    n = len(y)
    mean = float(y.mean())
    if depth >= max_depth or n < 2 or float(y.min()) == float(y.max()):
        return {"value": mean}
    best = None  # (sse, feature, threshold)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total_sum, total_sq = csum[-1], csq[-1]
        for k in range(1, n):
            if xs[k] == xs[k - 1]:
                continue
            left_sse = csq[k - 1] - csum[k - 1] ** 2 / k
            right_n = n - k
            right_sum = total_sum - csum[k - 1]
            right_sse = (total_sq - csq[k - 1]) - right_sum ** 2 / right_n
            sse = left_sse + right_sse
            if best is None or sse < best[0] - 1e-12:
                best = (sse, f, float((xs[k] + xs[k - 1]) / 2.0))
    if best is None:
        return {"value": mean}
    _, f, thr = best
    mask = X[:, f] <= thr
    return {
        "feature": int(f),
        "threshold": thr,
        "left": _tree_fit(X[mask], y[mask], depth + 1, max_depth),
        "right": _tree_fit(X[~mask], y[~mask], depth + 1, max_depth),
    }


def _tree_predict(node: dict, x: np.ndarray) -> float:
    while "value" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


class TreeEnsemble:
    """Bagged depth-limited regression trees (variance-reduction splits) on
    lag features plus a seasonal-index feature when a period is given."""

    model_id = "tree-ensemble"

    def __init__(self, lags: int = 4, n_trees: int = 50, max_depth: int = 4,
                 period: Optional[int] = None, rng: Optional[RngStream] = None):
        if lags < 1:
            raise ConfigError("tree ensemble needs at least one lag")
        if n_trees < 1:
            raise ConfigError("tree ensemble needs at least one tree")
        if max_depth < 0:
            raise ConfigError("max depth must be >= 0")
        self.lags = lags
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.period = period
        self.rng = rng or RngStream(0, "tree-ensemble")
        self.trees: list[dict] = []
        self._train_origin = 0

    @property
    def min_history(self) -> int:
        return 4 * self.lags

    @property
    def required_history(self) -> int:
        return self.lags

    def _features(self, history: Sequence[float], t: int) -> list[float]:
        row = [float(history[t - j]) for j in range(1, self.lags + 1)]
        if self.period:
            row.append(float(t % self.period))
        return row

    def fit(self, counts: Sequence[float]) -> "TreeEnsemble":
        y = np.asarray(counts, dtype=float)
        if len(y) < self.min_history:
            raise ConfigError(f"tree ensemble with {self.lags} lags needs >= {self.min_history} points")
        p = self.lags
        X = np.array([self._features(y, t) for t in range(p, len(y))])
        target = y[p:]
        n = len(target)
        self.trees = []
        for _ in range(self.n_trees):
            idx = self.rng.gen.integers(0, n, size=n)
            self.trees.append(_tree_fit(X[idx], target[idx], 0, self.max_depth))
        self._train_origin = len(y)
        return self

    def predict_next(self, history: Sequence[float]) -> float:
        x = np.asarray(self._features(history, len(history)), dtype=float)
        return float(sum(_tree_predict(t, x) for t in self.trees) / len(self.trees))

    def predict_training(self, counts: Sequence[float]) -> list[float]:
        y = np.asarray(counts, dtype=float)
        return [float(sum(_tree_predict(t, np.asarray(self._features(y, i), dtype=float))
                          for t in self.trees) / len(self.trees))
                for i in range(self.lags, len(y))]

    def to_json(self) -> dict:
        return {"model": self.model_id, "lags": self.lags, "n_trees": self.n_trees,
                "max_depth": self.max_depth, "period": self.period, "trees": self.trees}


class OracleForecaster:
    """Returns the true future counts; the history must be a prefix of them."""

    model_id = "oracle"

    def __init__(self, true_counts: Sequence[float]):
        self.true_counts = [float(c) for c in true_counts]
        self.min_history = 0

    def fit(self, counts: Sequence[float]) -> "OracleForecaster":
        return self

    def predict_from(self, position: int, horizon: int) -> list[float]:
        out = []
        for h in range(horizon):
            idx = position + h
            out.append(self.true_counts[idx] if idx < len(self.true_counts) else
                       (self.true_counts[-1] if self.true_counts else 0.0))
        return out


FORECASTER_NAMES = ("seasonal-naive", "ar-ls", "tree-ensemble")


def fit_forecaster(series: DemandSeries, model: str, params: Optional[dict] = None):
    """Build and fit a forecaster on a demand series."""
    params = params or {}
    if model == "seasonal-naive":
        m = SeasonalNaive(period=int(params.get("period", 1)))
    elif model == "ar-ls":
        m = ARLeastSquares(lags=int(params.get("lags", 4)))
    elif model == "tree-ensemble":
        m = TreeEnsemble(lags=int(params.get("lags", 4)),
                         n_trees=int(params.get("n_trees", 50)),
                         max_depth=int(params.get("max_depth", 4)),
                         period=params.get("period"),
                         rng=params.get("rng"))
    else:
        raise ConfigError(f"unknown forecaster {model!r}")
    return m.fit(series.counts)


def predict(model, history: Sequence[float], horizon: int) -> Forecast:
    """Iterated multi-step forecast: each prediction is appended to the lag
    window for the next step; negatives clamp to zero."""
    if horizon < 1:
        raise ConfigError("forecast horizon must be >= 1")
    if isinstance(model, OracleForecaster):
        return Forecast(horizon, model.predict_from(len(history), horizon), model.model_id)
    if len(history) < model.required_history:
        raise ConfigError(f"history shorter than the model's lag window ({model.required_history})")
    ext = [float(v) for v in history]
    preds = []
    for _ in range(horizon):
        nxt = max(0.0, float(model.predict_next(ext)))
        preds.append(nxt)
        ext.append(nxt)
    return Forecast(horizon, preds, model.model_id)


def accuracy(predicted: Sequence[float], actual: Sequence[float], band: float = 0.2) -> float:
    """Percent of predictions within a relative band of the actual value.

    A prediction is correct iff |pred - actual| <= band * max(actual, 1);
    the one-count floor keeps near-zero intervals from being unwinnable.
    """
    if band <= 0:
        raise ConfigError("accuracy band must be positive")
    if len(predicted) != len(actual):
        raise ConfigError("prediction and actual lengths differ")
    if len(predicted) == 0:
        raise ConfigError("cannot score an empty forecast")
    correct = sum(1 for p, a in zip(predicted, actual)
                  if abs(p - a) <= band * max(a, 1.0))
    return 100.0 * correct / len(predicted)


def walk_forward_accuracy(series: DemandSeries, model: str, params: Optional[dict] = None,
                          band: float = 0.2, holdout_frac: float = 0.5,
                          refit_every: int = 12) -> tuple[float, list[float], list[float]]:
    """One-step-ahead evaluation over the series tail.

    The model is refit every `refit_every` steps on all data before the
    prediction point; returns (accuracy_pct, predictions, actuals).
    """
    counts = series.counts
    split = max(1, int(len(counts) * (1.0 - holdout_frac)))
    if model == "oracle":
        fitted = OracleForecaster(counts)
    else:
        fitted = fit_forecaster(DemandSeries(series.interval_s, counts[:split], series.start_s),
                                model, params)
    preds, actuals = [], []
    steps_since_fit = 0
    for t in range(split, len(counts)):
        if steps_since_fit >= refit_every and model != "oracle":
            fitted = fit_forecaster(DemandSeries(series.interval_s, counts[:t], series.start_s),
                                    model, params)
            steps_since_fit = 0
        if model == "oracle":
            preds.append(fitted.predict_from(t, 1)[0])
        else:
            preds.append(predict(fitted, counts[:t], 1).predicted[0])
        actuals.append(float(counts[t]))
        steps_since_fit += 1
    return accuracy(preds, actuals, band), preds, actuals


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    name = obj["model"]
    if name == "seasonal-naive":
        return SeasonalNaive(period=obj["period"])
    if name == "ar-ls":
        m = ARLeastSquares(lags=obj["lags"])
        m.intercept_ = float(obj["intercept"])
        m.coef_ = np.asarray(obj["coef"], dtype=float)
        return m
    if name == "tree-ensemble":
        m = TreeEnsemble(lags=obj["lags"], n_trees=obj["n_trees"],
                         max_depth=obj["max_depth"], period=obj["period"])
        m.trees = obj["trees"]
        return m
    raise ConfigError(f"unknown persisted model {name!r}")
