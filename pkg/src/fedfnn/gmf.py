"""Generalized matrix factorisation: sigmoid(phi . (w_u * v_i) + b).

Gradients are written out by hand for this one architecture; ``optim.adam_step``
does the parameter updates. ``local_train`` is what a delegate client runs on
its own history each round.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import AdamState, adam_step

PROB_CLAMP = 1e-7


@dataclass
class GmfModel:
    user_emb: np.ndarray  # (N, d)
    item_emb: np.ndarray  # (M, d)
    score_w: np.ndarray  # (d,)
    score_b: float

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> "GmfModel":
        return GmfModel(self.user_emb.copy(), self.item_emb.copy(), self.score_w.copy(), float(self.score_b))

    def logits(self, users, items) -> np.ndarray:
        """Pre-sigmoid scores for paired (or broadcastable) user/item id arrays."""
        users = np.asarray(users)
        items = np.asarray(items)
        return (self.user_emb[users] * self.item_emb[items]) @ self.score_w + self.score_b

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.user_emb).all()
            and np.isfinite(self.item_emb).all()
            and np.isfinite(self.score_w).all()
            and np.isfinite(self.score_b)
        )


@dataclass
class LocalUpdate:
    """What a delegate reports after local training."""

    client_id: int
    new_user_row: np.ndarray
    item_ids: np.ndarray  # sorted ids of every item row touched locally
    item_rows: np.ndarray  # (len(item_ids), d), new values
    n_k: int
    final_loss: float
    initial_loss: float
    score_w: np.ndarray
    score_b: float

    @property
    def touched_item_rows(self) -> dict[int, np.ndarray]:
        return {int(i): row for i, row in zip(self.item_ids, self.item_rows)}


@dataclass(frozen=True)
class LocalHyper:
    epochs: int = 2
    negatives: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 0  # 0 = full batch


def init_model(num_users: int, num_items: int, dim: int, seed, emb_std: float = 0.01, layer_std: float = 0.1) -> GmfModel:
    if num_users < 1 or num_items < 1 or dim < 1:
        raise ValueError(f"model sizes must be positive, got users={num_users} items={num_items} dim={dim}")
    rng = np.random.default_rng(seed)
    user_emb = rng.normal(0.0, emb_std, size=(num_users, dim))
    item_emb = rng.normal(0.0, emb_std, size=(num_items, dim))
    score_w = rng.normal(0.0, layer_std, size=dim)
    return GmfModel(user_emb, item_emb, score_w, 0.0)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def predict_score(model: GmfModel, user: int, item: int) -> float:
    if not 0 <= user < model.num_users:
        raise ValueError(f"user id {user} out of range [0, {model.num_users})")
    if not 0 <= item < model.num_items:
        raise ValueError(f"item id {item} out of range [0, {model.num_items})")
    return float(sigmoid(model.logits(user, item)))


def bce_loss(pred, label):
    """Elementwise binary cross-entropy with the prediction clamped away from 0 and 1."""
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    out = -(label * np.log(p) + (1.0 - label) * np.log1p(-p))
    return float(out) if np.ndim(out) == 0 else out


def loss_and_grads(user_emb, item_emb, score_w, score_b, users, items, labels):
    """Mean BCE over (users[j], items[j], labels[j]) and dense gradients.

    Returns ``(loss, (g_user, g_item, g_w, g_b))`` with gradients shaped like
    the inputs; ``g_b`` is a length-1 array.
    """
    wu = user_emb[users]
    vi = item_emb[items]
    z = (wu * vi) @ score_w + score_b
    p = sigmoid(z)
    loss = float(np.mean(bce_loss(p, labels)))

    gz = (p - labels) / len(labels)
    g_w = gz @ (wu * vi)
    g_b = np.array([gz.sum()])
    g_user = np.zeros_like(user_emb)
    g_item = np.zeros_like(item_emb)
    np.add.at(g_user, users, gz[:, None] * vi * score_w)
    np.add.at(g_item, items, gz[:, None] * wu * score_w)
    return loss, (g_user, g_item, g_w, g_b)


def sample_negatives(positives: np.ndarray, num_items: int, count: int, rng) -> np.ndarray:
    """Uniform draws (with replacement) from items not in ``positives``."""
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    mask = np.ones(num_items, dtype=bool)
    mask[positives] = False
    pool = np.flatnonzero(mask)
    if pool.size == 0:
        return np.empty(0, dtype=np.int64)
    return pool[rng.integers(0, pool.size, size=count)]


class _LocalParams:
    """The client's private parameters as views into one flat buffer."""

    def __init__(self, user_row, item_rows, score_w, score_b):
        k, d = item_rows.shape
        self.flat = np.empty(d + k * d + d + 1)
        self.grad = np.zeros_like(self.flat)
        self.u, self.v, self.w, self.b = self._views(self.flat, k, d)
        self.gu, self.gv, self.gw, self.gb = self._views(self.grad, k, d)
        self.u[:] = user_row
        self.v[:] = item_rows
        self.w[:] = score_w
        self.b[0] = score_b

    @staticmethod
    def _views(buf, k, d):
        return buf[:d], buf[d : d + k * d].reshape(k, d), buf[d + k * d : d + k * d + d], buf[-1:]

    def logits(self, items):
        return self.v[items] @ (self.u * self.w) + self.b[0]

    def loss(self, items, labels) -> float:
        return float(np.mean(bce_loss(sigmoid(self.logits(items)), labels)))

    def fill_grad(self, items, labels) -> None:
        """Gradient of the mean BCE over the batch, written into ``self.grad``."""
        vi = self.v[items]
        gz = (sigmoid(vi @ (self.u * self.w) + self.b[0]) - labels) / labels.size
        gv_sum = gz @ vi
        self.gu[:] = gv_sum * self.w
        self.gw[:] = gv_sum * self.u
        self.gb[0] = gz.sum()
        # one user per client: every item row gets (sum of its gz) * (u * w)
        self.gv[:] = np.bincount(items, weights=gz, minlength=self.v.shape[0])[:, None] * (self.u * self.w)


def local_train(model: GmfModel, client_id: int, positives, hyper: LocalHyper, seed) -> LocalUpdate:
    """Train a private copy of the client's parameters on its own history.

    Only the client's user row, the item rows it touches (positives plus the
    negatives drawn this call) and the scoring layer are copied; ``model`` is
    never mutated.
    """
    positives = np.unique(np.asarray(positives, dtype=np.int64))
    if positives.size == 0:
        raise ValueError(f"client {client_id} has no training interactions")
    rng = np.random.default_rng(seed)
    negatives = sample_negatives(positives, model.num_items, hyper.negatives * positives.size, rng)

    all_items = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(positives.size), np.zeros(negatives.size)])
    item_ids, local_items = np.unique(all_items, return_inverse=True)

    lp = _LocalParams(model.user_emb[client_id], model.item_emb[item_ids], model.score_w, model.score_b)
    state = AdamState.for_params([lp.flat], lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps)

    initial_loss = lp.loss(local_items, labels)
    n = all_items.size
    batch = n if hyper.batch_size <= 0 else min(hyper.batch_size, n)
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            sel = order[start : start + batch]
            lp.fill_grad(local_items[sel], labels[sel])
            adam_step(state, [lp.flat], [lp.grad])
    final_loss = lp.loss(local_items, labels)

    return LocalUpdate(
        client_id=client_id,
        new_user_row=lp.u.copy(),
        item_ids=item_ids,
        item_rows=lp.v.copy(),
        n_k=int(positives.size),
        final_loss=final_loss,
        initial_loss=initial_loss,
        score_w=lp.w.copy(),
        score_b=float(lp.b[0]),
    )


def train_centralized_epoch(model: GmfModel, train_lists, hyper: LocalHyper, state: AdamState | None, seed) -> tuple[float, AdamState]:
    """One epoch of ordinary (non-federated) GMF training over every user, in place."""
    rng = np.random.default_rng(seed)
    users, items, labels = [], [], []
    for uid, pos in enumerate(train_lists):
        pos = np.asarray(pos, dtype=np.int64)
        if pos.size == 0:
            continue
        neg = sample_negatives(pos, model.num_items, hyper.negatives * pos.size, rng)
        users.append(np.full(pos.size + neg.size, uid))
        items.append(np.concatenate([pos, neg]))
        labels.append(np.concatenate([np.ones(pos.size), np.zeros(neg.size)]))
    users = np.concatenate(users)
    items = np.concatenate(items)
    labels = np.concatenate(labels)

    b = np.array([model.score_b])
    params = [model.user_emb, model.item_emb, model.score_w, b]
    if state is None:
        state = AdamState.for_params(params, lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps)
    n = labels.size
    batch = n if hyper.batch_size <= 0 else min(hyper.batch_size, n)
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch):
        sel = order[start : start + batch]
        loss, grads = loss_and_grads(model.user_emb, model.item_emb, model.score_w, b[0], users[sel], items[sel], labels[sel])
        adam_step(state, params, list(grads))
        total += loss * sel.size
    model.score_b = float(b[0])
    return total / n, state
