"""Interaction logs: loading, implicit binarisation, leave-one-out split, client shards."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NUM_EVAL_NEGATIVES = 99

FORMATS = {"tsv_uirt": ("\t", 4), "csv_uir": (",", 3)}


class DataError(ValueError):
    """Raised for unreadable, empty or malformed interaction files."""


@dataclass
class Dataset:
    """Implicit-feedback interactions with dense, contiguous ids.

    ``items[u]`` and ``timestamps[u]`` are parallel arrays holding user ``u``'s
    distinct items (sorted by item id) and the latest time each was seen.
    """

    num_users: int
    num_items: int
    items: list[np.ndarray]
    timestamps: list[np.ndarray]
    user_ids: np.ndarray  # raw id of each dense user
    item_ids: np.ndarray  # raw id of each dense item

    def __post_init__(self):
        if self.num_users * self.num_items <= 0:
            raise DataError("dataset has no users or no items")
        if len(self.items) != self.num_users:
            raise DataError("one interaction list per user is required")

    @property
    def num_interactions(self) -> int:
        return int(sum(len(x) for x in self.items))

    @property
    def sparsity(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    def summary(self) -> dict:
        return {
            "interactions": self.num_interactions,
            "users": self.num_users,
            "items": self.num_items,
            "sparsity": round(self.sparsity, 4),
        }

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        users = np.repeat(np.arange(self.num_users), [len(x) for x in self.items])
        items = np.concatenate(self.items) if self.items else np.empty(0, dtype=np.int64)
        times = np.concatenate(self.timestamps) if self.timestamps else np.empty(0, dtype=np.int64)
        return users, items, times


@dataclass
class EvalSplit:
    """Held-out item and sampled negatives for every evaluable user."""

    users: np.ndarray
    targets: np.ndarray
    negatives: list[np.ndarray]
    short_users: list[int] = field(default_factory=list)  # got fewer than 99 negatives
    excluded_users: list[int] = field(default_factory=list)  # single interaction, train only

    def __post_init__(self):
        width = max((len(n) for n in self.negatives), default=0)
        self.negative_matrix = np.zeros((len(self.negatives), width), dtype=np.int64)
        self.negative_mask = np.zeros((len(self.negatives), width), dtype=bool)
        for row, neg in enumerate(self.negatives):
            self.negative_matrix[row, : len(neg)] = neg
            self.negative_mask[row, : len(neg)] = True

    def __len__(self):
        return len(self.users)


def _build(users_raw, items_raw, times) -> Dataset:
    user_ids, u = np.unique(users_raw, return_inverse=True)
    item_ids, i = np.unique(items_raw, return_inverse=True)
    # latest timestamp wins for duplicate (user, item) pairs
    order = np.lexsort((times, i, u))
    u, i, times = u[order], i[order], times[order]
    last = np.ones(u.size, dtype=bool)
    last[:-1] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    u, i, times = u[last], i[last], times[last]
    bounds = np.searchsorted(u, np.arange(user_ids.size + 1))
    items = [i[bounds[k] : bounds[k + 1]].astype(np.int64) for k in range(user_ids.size)]
    stamps = [times[bounds[k] : bounds[k + 1]].astype(np.int64) for k in range(user_ids.size)]
    return Dataset(user_ids.size, item_ids.size, items, stamps, user_ids, item_ids)


def load_dataset(path, fmt: str = "tsv_uirt") -> Dataset:
    """Read ``user item rating [timestamp]`` rows; every row is a positive.

    ``csv_uir`` rows carry no timestamp, so file order stands in for time.
    """
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}; expected one of {sorted(FORMATS)}")
    sep, ncols = FORMATS[fmt]
    users, items, times = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(sep) if sep != "\t" else line.split()
            if len(parts) != ncols:
                raise DataError(f"{path}:{lineno}: expected {ncols} fields, got {len(parts)}")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                float(parts[2])
                times.append(int(parts[3]) if ncols == 4 else lineno)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not users:
        raise DataError(f"{path}: no interactions")
    return _build(np.array(users), np.array(items), np.array(times, dtype=np.int64))


def from_lists(item_lists, num_items: int) -> Dataset:
    """Build a Dataset whose dense ids are the given ids; list position is the timestamp."""
    items, stamps = [], []
    for lst in item_lists:
        arr = np.asarray(lst, dtype=np.int64)
        order = np.argsort(arr, kind="stable")
        if arr.size and (arr.min() < 0 or arr.max() >= num_items):
            raise DataError(f"item id outside [0, {num_items})")
        if np.unique(arr).size != arr.size:
            raise DataError("interaction lists must not repeat items")
        items.append(arr[order])
        stamps.append(order.astype(np.int64))
    return Dataset(len(items), num_items, items, stamps, np.arange(len(items)), np.arange(num_items))


def write_interactions(dataset: Dataset, path) -> None:
    """Write raw-id ``user<TAB>item<TAB>1<TAB>timestamp`` rows."""
    users, items, times = dataset.triples()
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, t in zip(dataset.user_ids[users], dataset.item_ids[items], times):
            fh.write(f"{u}\t{i}\t1\t{t}\n")


def save_cache(dataset: Dataset, path) -> None:
    users, items, times = dataset.triples()
    np.savez_compressed(
        path,
        users=users,
        items=items,
        times=times,
        user_ids=dataset.user_ids,
        item_ids=dataset.item_ids,
        shape=np.array([dataset.num_users, dataset.num_items]),
    )
    Path(str(path) + ".json").write_text(json.dumps(dataset.summary(), indent=2))


def load_cache(path) -> Dataset:
    with np.load(path) as z:
        n, m = (int(x) for x in z["shape"])
        users, items, times = z["users"], z["items"], z["times"]
        bounds = np.searchsorted(users, np.arange(n + 1))
        return Dataset(
            n,
            m,
            [items[bounds[k] : bounds[k + 1]] for k in range(n)],
            [times[bounds[k] : bounds[k + 1]] for k in range(n)],
            z["user_ids"],
            z["item_ids"],
        )


def leave_one_out(dataset: Dataset, seed, num_negatives: int = NUM_EVAL_NEGATIVES) -> tuple[Dataset, EvalSplit]:
    """Hold out each user's latest interaction and draw ranking negatives.

    Ties on the latest timestamp go to the larger item id. Users with a single
    interaction stay in training and are left out of evaluation.
    """
    rng = np.random.default_rng(seed)
    train_items, train_times = [], []
    users, targets, negatives, short, excluded = [], [], [], [], []
    for u in range(dataset.num_users):
        items, times = dataset.items[u], dataset.timestamps[u]
        if items.size < 2:
            train_items.append(items.copy())
            train_times.append(times.copy())
            excluded.append(u)
            continue
        pick = np.lexsort((items, times))[-1]
        keep = np.arange(items.size) != pick
        train_items.append(items[keep])
        train_times.append(times[keep])
        mask = np.ones(dataset.num_items, dtype=bool)
        mask[items] = False
        pool = np.flatnonzero(mask)
        if pool.size <= num_negatives:
            neg = pool
            short.append(u)
        else:
            neg = np.sort(rng.choice(pool, size=num_negatives, replace=False))
        users.append(u)
        targets.append(items[pick])
        negatives.append(neg)
    train = Dataset(dataset.num_users, dataset.num_items, train_items, train_times, dataset.user_ids, dataset.item_ids)
    split = EvalSplit(np.array(users, dtype=np.int64), np.array(targets, dtype=np.int64), negatives, short, excluded)
    return train, split


def client_shard(train: Dataset, client_id: int) -> np.ndarray:
    if not 0 <= client_id < train.num_users:
        raise ValueError(f"unknown client {client_id}")
    return train.items[client_id]
