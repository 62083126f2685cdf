"""Synthetic implicit-feedback data with G disjoint user/item preference groups.

Per-user sparsity and per-item popularity are Beta(1, 3) draws; a user picks
items from its own group with weight eta and from the rest with 1 - eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, from_lists


@dataclass(frozen=True)
class GenParams:
    num_users: int
    num_items: int
    num_groups: int
    sparsity: float = 0.063
    beta_a: float = 1.0
    beta_b: float = 3.0
    eta: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.num_items < 1:
            raise ValueError("num_users and num_items must be positive")
        if not 1 <= self.num_groups <= min(self.num_users, self.num_items):
            raise ValueError(f"num_groups must be in [1, min(N, M)], got {self.num_groups}")
        if not 0.0 < self.sparsity < 1.0:
            raise ValueError(f"sparsity must be in (0, 1), got {self.sparsity}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")


@dataclass
class GroupMap:
    user_group: np.ndarray
    item_group: np.ndarray


def split_groups(n: int, g: int) -> np.ndarray:
    """Contiguous group labels of equal size; the last ``n % g`` groups get one extra."""
    base, extra = divmod(n, g)
    sizes = np.full(g, base)
    if extra:
        sizes[g - extra :] += 1
    return np.repeat(np.arange(g), sizes)


def make_groups(params: GenParams) -> GroupMap:
    return GroupMap(split_groups(params.num_users, params.num_groups), split_groups(params.num_items, params.num_groups))


def sparsity_from_draws(raw: np.ndarray, s: float, num_items: int) -> np.ndarray:
    """Shift the raw draws around ``s`` by their median: s_u = s + s (r_u - median(r))."""
    s_u = s + s * (raw - np.median(raw))
    return np.clip(s_u, 1.0 / num_items, 1.0)


def gen_sparsity(params: GenParams, rng=None) -> np.ndarray:
    rng = np.random.default_rng(params.seed) if rng is None else rng
    raw = rng.beta(params.beta_a, params.beta_b, size=params.num_users)
    return sparsity_from_draws(raw, params.sparsity, params.num_items)


def gen_popularity(params: GenParams, groups: GroupMap, rng=None) -> list[np.ndarray]:
    """Unnormalised Beta popularity for the items of each group, in item-id order."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    pop = rng.beta(params.beta_a, params.beta_b, size=params.num_items)
    return [pop[groups.item_group == j] for j in range(params.num_groups)]


def flat_popularity(popularity: list[np.ndarray], groups: GroupMap) -> np.ndarray:
    flat = np.empty(groups.item_group.size)
    for j, p in enumerate(popularity):
        flat[groups.item_group == j] = p
    return flat


def interaction_weights(user_group: int, groups: GroupMap, pop: np.ndarray, eta: float) -> np.ndarray:
    """Selection distribution p(u, .) over all items for a user in ``user_group``."""
    h = np.where(groups.item_group == user_group, eta, 1.0 - eta)
    w = h * pop
    return w / w.sum()


def interaction_prob(u: int, i: int, groups: GroupMap, pop: np.ndarray, eta: float) -> float:
    return float(interaction_weights(groups.user_group[u], groups, pop, eta)[i])


def expected_in_group_fraction(groups: GroupMap, pop: np.ndarray, eta: float, counts: np.ndarray) -> float:
    """Interaction-weighted probability that a single draw lands in the user's own group."""
    total = pop.sum()
    mass = np.bincount(groups.item_group, weights=pop)
    own = mass[groups.user_group]
    q = eta * own / (eta * own + (1.0 - eta) * (total - own))
    return float(np.sum(counts * q) / np.sum(counts))


def generate(params: GenParams) -> tuple[Dataset, GroupMap, np.ndarray]:
    """Return (dataset, group map, flat popularity).

    Each user draws ``ceil(M * s_u)`` distinct items by successive renormalised
    sampling from p(u, .).
    """
    rng = np.random.default_rng(params.seed)
    groups = make_groups(params)
    s_u = gen_sparsity(params, rng)
    pop = flat_popularity(gen_popularity(params, groups, rng), groups)
    dist = [interaction_weights(j, groups, pop, params.eta) for j in range(params.num_groups)]
    lists = []
    for u in range(params.num_users):
        n_u = min(params.num_items, math.ceil(params.num_items * s_u[u] - 1e-9))
        p = dist[groups.user_group[u]]
        support = np.count_nonzero(p)
        if n_u > support:
            # eta = 1 leaves out-of-group items with zero weight
            n_u = support
        lists.append(rng.choice(params.num_items, size=n_u, replace=False, p=p))
    return from_lists(lists, params.num_items), groups, pop


def generate_dataset(params: GenParams) -> Dataset:
    return generate(params)[0]
