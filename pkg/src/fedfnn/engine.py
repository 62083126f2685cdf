"""Round loop: sample delegates, train locally, commit delegate rows, update
subordinates with the configured client strategy, aggregate items, evaluate.

All randomness comes from ``SeedSequence([seed, stream, ...])`` so runs are
reproducible bit for bit and delegate sampling is shared across strategies
that use the same seed.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import datagen
from .config import ExperimentConfig
from .data import Dataset, EvalSplit, leave_one_out, load_dataset
from .gmf import GmfModel, LocalHyper, init_model, local_train, train_centralized_epoch
from .items import aggregate_items, compute_alphas
from .metrics import MetricsLog, evaluate
from .predictor import (
    HyperGrid,
    NotEnoughPairs,
    PatienceMonitor,
    PredictorHyper,
    cross_validated_fit,
    fit_predictor,
    predict_subordinate,
    predicted_state,
)
from .strategies import fedavg_subordinates, fedfast_subordinates, kmeans_fit

log = logging.getLogger(__name__)

# SeedSequence stream ids
_SAMPLING, _LOCAL, _KMEANS, _PREDICTOR, _INIT, _SPLIT, _GROUPS, _CENTRAL = range(8)


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *(int(p) for p in path)])


@dataclass
class FedData:
    train: Dataset
    split: EvalSplit
    groups: dict[str, np.ndarray] = field(default_factory=dict)  # availability group -> user ids
    availability: np.ndarray | None = None  # per-user probability

    @property
    def num_users(self) -> int:
        return self.train.num_users


@dataclass
class FederationState:
    model: GmfModel
    t: int = 0
    loss_history: list[float] = field(default_factory=list)
    sampling_rng: np.random.Generator | None = None
    monitor: PatienceMonitor = field(default_factory=PatienceMonitor)
    skipped: list[int] = field(default_factory=list)
    central_adam: object = None


@dataclass
class RoundInfo:
    t: int
    delegates: np.ndarray
    loss: float
    alphas: np.ndarray | None = None
    update_l1: np.ndarray | None = None
    predictor_rmse: float | None = None
    predicted: bool = False
    skipped: bool = False


def num_delegates(sample_rate: float, num_users: int) -> int:
    return max(1, math.floor(sample_rate * num_users + 1e-9))


def sample_clients(num_users: int, m: int, availability, rng) -> np.ndarray:
    """Bernoulli availability per client, then a uniform subset of size min(m, available)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    probs = np.ones(num_users) if availability is None else np.asarray(availability)
    available = np.flatnonzero(rng.random(num_users) < probs)
    if available.size == 0:
        return available
    return np.sort(rng.choice(available, size=min(m, available.size), replace=False))


def load_source(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.path is not None:
        return load_dataset(cfg.dataset.path, cfg.dataset.format)
    return datagen.generate_dataset(datagen.GenParams(**cfg.dataset.synthetic))


def prepare_data(cfg: ExperimentConfig, seed: int, dataset: Dataset | None = None) -> FedData:
    dataset = load_source(cfg) if dataset is None else dataset
    train, split = leave_one_out(dataset, derive_seed(seed, _SPLIT))
    data = FedData(train, split)
    if cfg.availability:
        rng = np.random.default_rng(derive_seed(seed, _GROUPS))
        perm = rng.permutation(train.num_users)
        probs = np.ones(train.num_users)
        start = 0
        for i, g in enumerate(cfg.availability):
            end = train.num_users if i == len(cfg.availability) - 1 else start + round(g.fraction * train.num_users)
            members = np.sort(perm[start:end])
            data.groups[g.name] = members
            probs[members] = g.prob
            start = end
        data.availability = probs
    return data


def local_hyper(cfg: ExperimentConfig) -> LocalHyper:
    g = cfg.gmf
    return LocalHyper(g.epochs, g.negatives, g.lr, g.beta1, g.beta2, g.eps, g.batch_size)


def init_state(cfg: ExperimentConfig, data: FedData, seed: int) -> FederationState:
    model = init_model(data.train.num_users, data.train.num_items, cfg.gmf.dim, derive_seed(seed, _INIT), cfg.gmf.emb_std, cfg.gmf.layer_std)
    return FederationState(
        model=model,
        sampling_rng=np.random.default_rng(derive_seed(seed, _SAMPLING)),
        monitor=PatienceMonitor(cfg.fnn.patience, cfg.fnn.epsilon),
    )


def _fnn_subordinates(cfg, state, seed, old_user, delegates, new_rows, subordinates):
    """Returns (subordinate rows, predictor rmse) or None when FedFNN sits this round out."""
    if not state.monitor.check(state.loss_history):
        return None
    x = old_user[delegates]
    y = np.array([new_rows[k] for k in delegates]) - x
    pseed = derive_seed(seed, _PREDICTOR, state.t)
    f = cfg.fnn
    try:
        if f.cross_validate:
            grid = HyperGrid(tuple(tuple(h) for h in f.grid.hidden), tuple(f.grid.lr), tuple(f.grid.dropout))
            points = grid.points(f.predictor_epochs, f.batch_size, f.standardize)
            model, report = cross_validated_fit(x, y, points, pseed, folds=f.cv_folds)
            err = report.rmse
        else:
            hyper = PredictorHyper(tuple(f.grid.hidden[0]), f.grid.lr[0], f.grid.dropout[0], f.predictor_epochs, f.batch_size, f.standardize)
            model, err = fit_predictor(x, y, hyper, pseed)
    except NotEnoughPairs as exc:
        log.info("round %d: %s; no subordinate update", state.t, exc)
        return None
    if subordinates.size == 0:
        return {}, err
    w = old_user[subordinates]
    rows = predict_subordinate(w, predicted_state(model, w, f.output), f.gamma, state.t)
    return {int(j): rows[i] for i, j in enumerate(subordinates)}, err


def run_round(state: FederationState, cfg: ExperimentConfig, data: FedData, seed: int) -> RoundInfo:
    """Advance ``state`` by one federated round (in place) and describe what happened."""
    state.t += 1
    t = state.t
    model = state.model
    n_users = data.num_users
    m = num_delegates(cfg.sample_rate, n_users)
    sampled = sample_clients(n_users, m, data.availability, state.sampling_rng)

    hyper = local_hyper(cfg)
    updates = []
    for k in sampled:
        shard = data.train.items[k]
        if shard.size == 0:
            log.warning("round %d: client %d has no training data, skipped", t, k)
            continue
        updates.append(local_train(model, int(k), shard, hyper, derive_seed(seed, _LOCAL, t, k)))

    if not updates:
        log.warning("round %d: no client available, round skipped", t)
        state.skipped.append(t)
        state.loss_history.append(state.loss_history[-1] if state.loss_history else math.nan)
        return RoundInfo(t, sampled, state.loss_history[-1], skipped=True)

    n_k = np.array([u.n_k for u in updates], dtype=np.float64)
    loss = float(np.dot(n_k, [u.final_loss for u in updates]) / n_k.sum())
    state.loss_history.append(loss)

    delegates = np.array([u.client_id for u in updates])
    old_user = model.user_emb
    new_rows = {u.client_id: u.new_user_row for u in updates}
    new_user = old_user.copy()
    new_user[delegates] = np.array([u.new_user_row for u in updates])

    is_delegate = np.zeros(n_users, dtype=bool)
    is_delegate[delegates] = True
    subordinates = np.flatnonzero(~is_delegate)
    info = RoundInfo(t, delegates, loss)

    strategy = cfg.client_strategy
    sub_rows: dict = {}
    if strategy == "fedavg":
        sub_rows = fedavg_subordinates(new_rows, subordinates)
    elif strategy == "fedfast":
        k = min(cfg.fedfast.k, n_users)
        cluster = kmeans_fit(old_user, k, cfg.fedfast.max_iters, derive_seed(seed, _KMEANS, t))
        old_rows = {kk: old_user[kk] for kk in new_rows}
        sub_rows = fedfast_subordinates(cluster, new_rows, old_rows, subordinates, old_user)
    elif strategy == "fedfnn":
        out = _fnn_subordinates(cfg, state, seed, old_user, delegates, new_rows, subordinates)
        if out is not None:
            sub_rows, info.predictor_rmse = out
            info.predicted = True
    if sub_rows:
        ids = np.fromiter(sub_rows.keys(), dtype=np.int64, count=len(sub_rows))
        new_user[ids] = np.array([sub_rows[j] for j in ids])

    alphas = compute_alphas(cfg.item_strategy, updates, model.item_emb)
    new_items = aggregate_items(model.item_emb, updates, alphas)
    info.alphas = alphas

    # scoring layer: interaction-weighted mean of the delegates' copies, in
    # delta form so that unchanged copies reproduce the old layer exactly
    wts = n_k / n_k.sum()
    score_w = model.score_w + np.sum([a * (u.score_w - model.score_w) for a, u in zip(wts, updates)], axis=0)
    score_b = model.score_b + float(np.dot(wts, [u.score_b - model.score_b for u in updates]))

    state.model = GmfModel(new_user, new_items, score_w, score_b)
    return info


def run_central_round(state: FederationState, cfg: ExperimentConfig, data: FedData, seed: int) -> RoundInfo:
    """One epoch of ordinary GMF over all users; the centralised upper bound."""
    state.t += 1
    loss, state.central_adam = train_centralized_epoch(state.model, data.train.items, local_hyper(cfg), state.central_adam, derive_seed(seed, _CENTRAL, state.t))
    state.loss_history.append(loss)
    return RoundInfo(state.t, np.arange(data.num_users), loss)


def eval_rounds(cfg: ExperimentConfig) -> set[int]:
    rounds = {0, cfg.rounds}
    rounds.update(range(cfg.eval_interval, cfg.rounds + 1, cfg.eval_interval))
    rounds.update(c for c in cfg.checkpoints if 0 <= c <= cfg.rounds)
    return rounds


def _log_eval(log_: MetricsLog, state: FederationState, cfg: ExperimentConfig, data: FedData) -> None:
    hr, ndcg = evaluate(state.model, data.split, cfg.k)
    groups = {}
    for name, members in data.groups.items():
        in_split = np.intersect1d(members, data.split.users)
        groups[name] = evaluate(state.model, data.split, cfg.k, users=in_split) if in_split.size else (math.nan, math.nan)
    loss = state.loss_history[-1] if state.loss_history else math.nan
    log_.add(state.t, hr, ndcg, loss, groups)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, dataset: Dataset | None = None, data: FedData | None = None, on_round=None) -> MetricsLog:
    """Run ``cfg.rounds`` rounds for one seed and return the evaluation log."""
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    start = time.perf_counter()
    data = prepare_data(cfg, seed, dataset) if data is None else data
    state = init_state(cfg, data, seed)
    log_ = MetricsLog(cfg.client_strategy, cfg.item_strategy, seed, group_names=tuple(data.groups))
    when = eval_rounds(cfg)
    _log_eval(log_, state, cfg, data)
    step = run_central_round if cfg.client_strategy == "gmf" else run_round
    for _ in range(cfg.rounds):
        info = step(state, cfg, data, seed)
        if on_round is not None:
            on_round(state, info)
        if state.t in when:
            _log_eval(log_, state, cfg, data)
        if not state.model.is_finite():
            raise FloatingPointError(f"non-finite parameters after round {state.t}")
    log_.skipped_rounds = list(state.skipped)
    log_.wall_clock = time.perf_counter() - start
    log_.final_model = state.model
    return log_
