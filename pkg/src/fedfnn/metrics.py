"""Leave-one-out ranking metrics: HR@K and nDCG@K over sampled candidate lists."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def rank_of_target(scores: dict, target) -> int:
    """1-based rank of ``target``; candidates tied with it are counted above it."""
    if target not in scores:
        raise ValueError(f"target {target!r} is not among the candidates")
    t = scores[target]
    return 1 + sum(1 for c, s in scores.items() if c != target and s >= t)


def hr_at_k(rank: int, k: int) -> int:
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def ranks_from_logits(target_scores: np.ndarray, negative_scores: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Vectorised pessimistic ranks. ``negative_scores`` is (users, n_neg)."""
    beats = negative_scores >= target_scores[:, None]
    if valid is not None:
        beats &= valid
    return 1 + beats.sum(axis=1)


def evaluate(model, split, k: int = 10, users=None) -> tuple[float, float]:
    """Mean HR@k and nDCG@k over the users in ``split`` (optionally a subset).

    Candidates are ranked by logits; every metric here is invariant to the
    sigmoid, and logits do not saturate into spurious ties.
    """
    idx = np.arange(len(split.users)) if users is None else np.flatnonzero(np.isin(split.users, users))
    if idx.size == 0:
        raise ValueError("evaluation split is empty")
    u = split.users[idx]
    target = model.logits(u, split.targets[idx])
    neg_items = split.negative_matrix[idx]
    valid = split.negative_mask[idx]
    neg = model.logits(np.repeat(u[:, None], neg_items.shape[1], axis=1), np.where(valid, neg_items, 0))
    ranks = ranks_from_logits(target, neg, valid)
    hits = ranks <= k
    gains = np.where(hits, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(hits.mean()), float(gains.mean())


@dataclass
class MetricsLog:
    """Per-evaluation-round records plus run-level metadata."""

    strategy: str
    item_strategy: str
    seed: int
    rows: list[dict] = field(default_factory=list)
    group_names: tuple[str, ...] = ()
    skipped_rounds: list[int] = field(default_factory=list)
    wall_clock: float = 0.0
    final_model: object = field(default=None, repr=False, compare=False)

    def add(self, round_: int, hr: float, ndcg: float, loss: float, groups: dict | None = None) -> None:
        if self.rows and round_ <= self.rows[-1]["round"]:
            raise ValueError(f"round {round_} is not after {self.rows[-1]['round']}")
        row = {"round": round_, "hr": hr, "ndcg": ndcg, "loss": loss}
        for name in self.group_names:
            g_hr, g_ndcg = (groups or {}).get(name, (math.nan, math.nan))
            row[f"hr_{name}"] = g_hr
            row[f"ndcg_{name}"] = g_ndcg
        self.rows.append(row)

    @property
    def columns(self) -> list[str]:
        cols = ["round", "hr", "ndcg", "loss"]
        for name in self.group_names:
            cols += [f"hr_{name}", f"ndcg_{name}"]
        return cols

    def at(self, round_: int) -> dict:
        for row in self.rows:
            if row["round"] == round_:
                return row
        raise KeyError(f"round {round_} was not evaluated")

    @property
    def final(self) -> dict:
        return self.rows[-1]
