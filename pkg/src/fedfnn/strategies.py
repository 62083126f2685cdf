"""Subordinate user-embedding updates: FedAvg broadcast, WCU no-op, FedFast cluster deltas.

Every function returns ``{subordinate_id: new_row}`` and never touches delegate
rows; the engine commits those itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLIENT_STRATEGIES = ("fedavg", "wcu", "fedfast", "fedfnn")


def fedavg_subordinates(delegate_rows: dict, subordinates) -> dict:
    if not delegate_rows:
        return {}
    ids = sorted(delegate_rows)
    mean = np.mean([delegate_rows[k] for k in ids], axis=0)
    return {int(j): mean.copy() for j in subordinates}


def wcu_subordinates(*_args, **_kwargs) -> dict:
    return {}


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia_history: list[float]

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # remaining points coincide with chosen centers
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def kmeans_fit(embeddings, k: int, max_iters: int = 50, seed=0) -> ClusterModel:
    """Lloyd iterations from a k-means++ start until assignments stop changing."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(x, k, rng)
    d = _sq_dists(x, centroids)
    assign = d.argmin(1)
    history = [float(d[np.arange(n), assign].sum())]
    for _ in range(max_iters):
        centroids = np.array([x[assign == c].mean(0) if np.any(assign == c) else centroids[c] for c in range(k)])
        for c in np.setdiff1d(np.arange(k), assign):
            # empty cluster: re-seed at the point farthest from its centroid
            own = _sq_dists(x, centroids)[np.arange(n), assign]
            far = int(own.argmax())
            centroids[c] = x[far]
            assign[far] = c
        d = _sq_dists(x, centroids)
        new_assign = d.argmin(1)
        history.append(float(d[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return ClusterModel(centroids, assign, history)


def cluster_deltas(cluster: ClusterModel, new_rows: dict, old_rows: dict) -> dict:
    """Mean delegate delta per cluster, only for clusters holding a delegate."""
    sums, counts = {}, {}
    for k in sorted(new_rows):
        c = int(cluster.assignment[k])
        delta = new_rows[k] - old_rows[k]
        sums[c] = sums[c] + delta if c in sums else delta.copy()
        counts[c] = counts.get(c, 0) + 1
    return {c: sums[c] / counts[c] for c in sums}


def fedfast_subordinates(cluster: ClusterModel, new_rows: dict, old_rows: dict, subordinates, user_emb: np.ndarray) -> dict:
    """Shift each subordinate by its cluster's mean delegate delta."""
    deltas = cluster_deltas(cluster, new_rows, old_rows)
    out = {}
    for j in subordinates:
        c = int(cluster.assignment[j])
        if c in deltas:
            out[int(j)] = user_emb[j] + deltas[c]
    return out
