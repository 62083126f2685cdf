"""Server-side item-embedding aggregation under the W0 / W1 / W2 weightings."""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

SCHEMES = ("w0", "w1", "w2")


def update_magnitudes(prev_items: np.ndarray, updates) -> np.ndarray:
    """L1 distance each delegate moved the item rows it touched (Z_k)."""
    return np.array([np.abs(u.item_rows - prev_items[u.item_ids]).sum() for u in updates])


def compute_alphas(scheme: str, updates, prev_items: np.ndarray | None = None) -> np.ndarray:
    """Per-delegate weights, aligned with ``updates``, summing to one."""
    scheme = scheme.lower()
    m = len(updates)
    if m == 0:
        raise ValueError("at least one delegate is required")
    if scheme == "w0":
        return np.full(m, 1.0 / m)
    if scheme == "w1":
        if prev_items is None:
            raise ValueError("w1 needs the pre-round item table")
        z = update_magnitudes(prev_items, updates)
        if z.sum() <= 0.0:
            log.warning("w1: every delegate reported zero item movement, using uniform weights")
            return np.full(m, 1.0 / m)
        return z / z.sum()
    if scheme == "w2":
        n = np.array([u.n_k for u in updates], dtype=np.float64)
        return n / n.sum()
    raise ValueError(f"unknown item strategy {scheme!r}; expected one of {SCHEMES}")


def aggregate_items(prev_items: np.ndarray, updates, alphas) -> np.ndarray:
    """Add to each touched item the alpha-weighted mean of delegate deltas.

    Weights are renormalised per item over the delegates that touched it, so an
    item touched by one delegate takes that delegate's row exactly. Rows nobody
    touched are copied unchanged.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    num, dim = prev_items.shape
    weighted = np.zeros((num, dim))
    weight_sum = np.zeros(num)
    contributors = np.zeros(num, dtype=np.int64)
    for a, u in zip(alphas, updates):
        weighted[u.item_ids] += a * (u.item_rows - prev_items[u.item_ids])
        weight_sum[u.item_ids] += a
        contributors[u.item_ids] += 1
    out = prev_items.copy()
    touched = weight_sum > 0.0
    out[touched] += weighted[touched] / weight_sum[touched, None]
    # single contributor: copy the row itself rather than v + (row - v)
    for u in updates:
        sole = contributors[u.item_ids] == 1
        out[u.item_ids[sole]] = u.item_rows[sole]
    return out
