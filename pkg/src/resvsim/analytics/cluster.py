"""Customer segmentation by k-means (k-means++ seeding, Lloyd iterations)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..engine import ConfigError, RngStream


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray        # (k, d)
    inertia: float
    inertia_history: list[float]

    def to_json(self) -> dict:
        return {"k": self.k, "inertia": self.inertia,
                "centroids": [[float(v) for v in c] for c in self.centroids]}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "ClusterModel":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        centroids = np.asarray(obj["centroids"], dtype=float)
        return cls(k=obj["k"], centroids=centroids, inertia=float(obj["inertia"]),
                   inertia_history=[])


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_fit(points, k: int, rng: RngStream, max_iter: int = 100) -> ClusterModel:
    """Fit k-means with k-means++ seeding.

    Iterates Lloyd updates to an assignment fixpoint or max_iter; an empty
    cluster is reseeded to the point farthest from its assigned centroid.
    Inertia is non-increasing across iterations.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of points ({n})")
    if not np.all(np.isfinite(pts)):
        raise ConfigError("points must be finite")

    # k-means++ seeding
    first = int(rng.gen.integers(0, n))
    centroids = [pts[first]]
    for _ in range(1, k):
        d2 = np.min(_sq_dists(pts, np.asarray(centroids)), axis=1)
        total = float(d2.sum())
        if total <= 0:
            # all remaining mass at existing centroids; pick any unused point
            idx = int(rng.gen.integers(0, n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            idx = min(idx, n - 1)
        centroids.append(pts[idx])
    centroids = np.asarray(centroids, dtype=float)

    assign = np.full(n, -1)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _sq_dists(pts, centroids)
        new_assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_assign].sum())
        history.append(inertia)
        for c in range(k):
            members = pts[new_assign == c]
            if len(members) == 0:
                # reseed an empty cluster to the globally farthest point
                far = int(np.argmax(d2[np.arange(n), new_assign]))
                centroids[c] = pts[far]
                new_assign[far] = c
            else:
                centroids[c] = members.mean(axis=0)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    d2 = _sq_dists(pts, centroids)
    final_assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), final_assign].sum())
    history.append(inertia)
    return ClusterModel(k=k, centroids=centroids, inertia=inertia, inertia_history=history)


def segment_assign(model: ClusterModel, point) -> int:
    """Nearest centroid by Euclidean distance; lowest index wins ties."""
    p = np.asarray(point, dtype=float)
    if p.ndim == 0:
        p = p[None]
    d2 = np.sum((model.centroids - p[None, :]) ** 2, axis=1)
    return int(np.argmin(d2))


def assign_all(model: ClusterModel, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return np.argmin(_sq_dists(pts, model.centroids), axis=1)
