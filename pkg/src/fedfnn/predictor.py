"""FedFNN: regress delegate embedding deltas on their previous embeddings, then
apply the fitted map to the subordinates with an exponentially decaying weight.

The regressor is a small ReLU MLP trained with Adam on squared error. Each round
a fresh one is picked by k-fold cross-validated grid search over hidden shapes,
learning rates and dropout ratios, and refit on every delegate pair.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class NotEnoughPairs(ValueError):
    """Fewer than two delegate pairs; the round falls back to WCU."""


@dataclass(frozen=True)
class PredictorHyper:
    hidden: tuple[int, ...] = (32,)
    lr: float = 1e-2
    dropout: float = 0.0
    epochs: int = 50
    batch_size: int = 0  # 0 = full batch
    standardize: bool = True


@dataclass(frozen=True)
class HyperGrid:
    hidden: tuple[tuple[int, ...], ...] = ((32,), (64,), (64, 32))
    lr: tuple[float, ...] = (1e-2, 1e-3)
    dropout: tuple[float, ...] = (0.0, 0.2)

    def points(self, epochs: int = 50, batch_size: int = 0, standardize: bool = True) -> list[PredictorHyper]:
        pts = [
            PredictorHyper(tuple(h), float(lr), float(dp), epochs, batch_size, standardize)
            for h, lr, dp in itertools.product(self.hidden, self.lr, self.dropout)
        ]
        if not pts:
            raise ValueError("hyperparameter grid is empty")
        return pts


@dataclass
class Mlp:
    """ReLU hidden layers, identity output. ``weights[i]`` is (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng) -> "Mlp":
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, x, dropout: float = 0.0, rng=None):
        """Return output and the cache needed by ``backward``."""
        acts, masks = [x], []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i == last:
                h = z
                break
            h = np.maximum(z, 0.0)
            if dropout > 0.0 and rng is not None:
                keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * keep
            else:
                keep = None
            masks.append(keep)
            acts.append(h)
        return h, (acts, masks)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out) -> list[np.ndarray]:
        acts, masks = cache
        grads = []
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            a = acts[i]
            grads.append(g.sum(0))  # bias
            grads.append(a.T @ g)  # weight
            if i == 0:
                break
            g = g @ self.weights[i].T
            g = g * (a > 0.0)
            if masks[i - 1] is not None:
                g = g * masks[i - 1]
        grads.reverse()
        return grads


def mse_and_grads(net: Mlp, x, y, dropout=0.0, rng=None):
    out, cache = net.forward(x, dropout, rng)
    resid = out - y
    loss = float(np.mean(resid * resid))
    return loss, net.backward(cache, 2.0 * resid / resid.size)


def rmse(pred, target) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(target)) ** 2)))


@dataclass
class PredictorModel:
    """Fitted delta regressor, including the input/target scaling it was trained with."""

    net: Mlp
    hyper: PredictorHyper
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    def predict(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        return self.net((w - self.x_mean) / self.x_scale) * self.y_scale + self.y_mean


def _scaling(a: np.ndarray, enabled: bool):
    if not enabled:
        return np.zeros(a.shape[1]), np.ones(a.shape[1])
    mean = a.mean(0)
    scale = a.std(0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def fit_predictor(x, y, hyper: PredictorHyper, seed) -> tuple[PredictorModel, float]:
    """Train on (old embedding -> delta) pairs; returns the model and its training RMSE."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2:
        raise NotEnoughPairs(f"need at least 2 delegate pairs, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    x_mean, x_scale = _scaling(x, hyper.standardize)
    y_mean, y_scale = _scaling(y, hyper.standardize)
    xs = (x - x_mean) / x_scale
    ys = (y - y_mean) / y_scale

    net = Mlp.init([x.shape[1], *hyper.hidden, y.shape[1]], rng)
    params = net.params
    state = AdamState.for_params(params, lr=hyper.lr)
    model = PredictorModel(net, hyper, x_mean, x_scale, y_mean, y_scale)
    n = xs.shape[0]
    batch = n if hyper.batch_size <= 0 else min(hyper.batch_size, n)
    recent: list[float] = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            sel = order[start : start + batch]
            loss, grads = mse_and_grads(net, xs[sel], ys[sel], hyper.dropout, rng)
            adam_step(state, params, grads)
            epoch_loss += loss * sel.size
        train = math.sqrt(epoch_loss / n)
        if not np.isfinite(train):
            break
        recent.append(train)
        # plateau: under 1e-4 relative change in training RMSE (scaled space) across 5 epochs
        if len(recent) > 5 and abs(recent[-6] - train) <= 1e-4 * max(recent[-6], 1e-12):
            break
    return model, rmse(model.predict(x), y)


@dataclass
class FitReport:
    hyper: PredictorHyper
    fold_rmse: list[float]
    grid_rmse: list[float] = field(default_factory=list)

    @property
    def rmse(self) -> float:
        return float(np.mean(self.fold_rmse))

    @property
    def folds(self) -> int:
        return len(self.fold_rmse)


def kfold_indices(n: int, folds: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i::folds] for i in range(folds)]


def cross_validated_fit(x, y, grid: HyperGrid | list[PredictorHyper], seed, folds: int = 5, epochs: int = 50, batch_size: int = 0):
    """Pick the grid point with the lowest mean validation RMSE, then refit on everything.

    With fewer pairs than ``folds`` this degrades to leave-one-out. Ties go to
    the earlier grid point.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    points = grid.points(epochs, batch_size) if isinstance(grid, HyperGrid) else list(grid)
    if not points:
        raise ValueError("hyperparameter grid is empty")
    n = x.shape[0]
    if n < 2:
        raise NotEnoughPairs(f"need at least 2 delegate pairs, got {n}")
    if n < folds:
        log.info("only %d delegate pairs; using leave-one-out instead of %d folds", n, folds)
        folds = n
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    split_seed, *point_seeds = ss.spawn(len(points) + 1)
    parts = kfold_indices(n, folds, np.random.default_rng(split_seed))

    best, best_score, best_folds, scores = None, math.inf, [], []
    for hyper, pseed in zip(points, point_seeds):
        fold_seeds = pseed.spawn(folds)
        fold_scores = []
        for f, val in enumerate(parts):
            train = np.setdiff1d(np.arange(n), val)
            if train.size < 2:
                # leave-one-out with 2 pairs: train on the single remaining pair
                model = _constant_model(x[train], y[train], hyper)
            else:
                model, _ = fit_predictor(x[train], y[train], hyper, fold_seeds[f])
            fold_scores.append(rmse(model.predict(x[val]), y[val]))
        score = float(np.mean(fold_scores)) if all(np.isfinite(fold_scores)) else math.inf
        scores.append(score)
        if score < best_score:
            best, best_score, best_folds = hyper, score, fold_scores
    if best is None:
        best, best_folds = points[0], fold_scores
    model, _ = fit_predictor(x, y, best, point_seeds[points.index(best)].spawn(folds + 1)[-1])
    return model, FitReport(best, best_folds, scores)


def _constant_model(x, y, hyper: PredictorHyper) -> PredictorModel:
    """Predicts the mean training delta everywhere."""
    net = Mlp.init([x.shape[1], *hyper.hidden, y.shape[1]], np.random.default_rng(0))
    for w in net.weights:
        w[:] = 0.0
    for b in net.biases:
        b[:] = 0.0
    d = x.shape[1]
    return PredictorModel(net, hyper, np.zeros(d), np.ones(d), y.mean(0), np.ones(y.shape[1]))


def decay_weight(gamma: float, t: int) -> float:
    return math.exp(-gamma * t)


def predict_subordinate(w, g_state, gamma: float, t: int) -> np.ndarray:
    """e^{-gamma t} * g_state + (1 - e^{-gamma t}) * w."""
    a = decay_weight(gamma, t)
    return a * np.asarray(g_state) + (1.0 - a) * np.asarray(w)


def predicted_state(model: PredictorModel, w, output: str = "state") -> np.ndarray:
    """Map the regressor's output to the quantity blended with ``w``.

    ``state`` treats the fitted delta as a step from ``w``; ``delta`` feeds the
    raw prediction in directly.
    """
    pred = model.predict(w)
    if output == "state":
        return np.atleast_2d(w) + pred
    if output == "delta":
        return pred
    raise ValueError(f"unknown predictor output mode {output!r}")


def patience_ok(loss_history, p: int, eps: float = 0.01) -> bool:
    """True while predictions should continue. ``loss_history[t-1]`` is L(t)."""
    if p < 1:
        raise ValueError("patience must be >= 1")
    t = len(loss_history)
    if t <= p:
        return True
    prev, cur = loss_history[t - 1 - p], loss_history[t - 1]
    if prev == 0 or not np.isfinite(prev):
        log.warning("L(t-p) is %s; treating the loss as settled", prev)
        return False
    return abs(1.0 - cur / prev) >= eps


@dataclass
class PatienceMonitor:
    p: int = 10
    eps: float = 0.01
    active: bool = True
    stopped_at: int | None = None

    def check(self, loss_history) -> bool:
        if self.active and not patience_ok(loss_history, self.p, self.eps):
            self.active = False
            self.stopped_at = len(loss_history)
        return self.active
