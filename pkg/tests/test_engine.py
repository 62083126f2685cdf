import math

import numpy as np
import pytest
from scipy import stats

from fedfnn.config import config_from_dict
from fedfnn.engine import (
    eval_rounds,
    init_state,
    num_delegates,
    prepare_data,
    run_experiment,
    run_round,
    sample_clients,
)
from fedfnn.gmf import LocalHyper, local_train

SYNTH = {"num_users": 60, "num_items": 80, "num_groups": 3, "sparsity": 0.08, "seed": 1}


def small_cfg(**over):
    base = {
        "dataset": {"synthetic": dict(SYNTH)},
        "rounds": 4,
        "eval_interval": 2,
        "sample_rate": 0.2,
        "gmf": {"dim": 4, "lr": 0.01, "batch_size": 16},
        "fnn": {"predictor_epochs": 5, "grid": {"hidden": [[8]], "lr": [0.01], "dropout": [0.0]}},
        "fedfast": {"k": 3},
    }
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return config_from_dict(base)


class TestSampling:
    def test_m_from_rate(self):
        assert num_delegates(0.10, 943) == 94
        assert num_delegates(0.001, 50) == 1
        assert num_delegates(1.0, 7) == 7

    def test_everyone(self):
        got = sample_clients(10, 10, None, np.random.default_rng(0))
        np.testing.assert_array_equal(got, np.arange(10))

    def test_nobody_available(self):
        assert sample_clients(10, 3, np.zeros(10), np.random.default_rng(0)).size == 0

    def test_bad_m(self):
        with pytest.raises(ValueError):
            sample_clients(10, 0, None, np.random.default_rng(0))

    def test_uniform_single_draw(self):
        rng = np.random.default_rng(1)
        counts = np.bincount([sample_clients(20, 1, None, rng)[0] for _ in range(20000)], minlength=20)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_subset_size(self):
        rng = np.random.default_rng(2)
        profile = np.full(100, 0.5)
        sizes = [sample_clients(100, 10, profile, rng).size for _ in range(200)]
        assert max(sizes) == 10

    def test_availability_frequency(self):
        cfg = small_cfg(availability=[{"name": "normal", "fraction": 0.5, "prob": 1.0}, {"name": "poor", "fraction": 0.5, "prob": 0.25}])
        data = prepare_data(cfg, 0)
        rng = np.random.default_rng(3)
        m = num_delegates(0.1, data.num_users)
        counts = np.zeros(data.num_users)
        for _ in range(500):
            counts[sample_clients(data.num_users, m, data.availability, rng)] += 1
        ratio = counts[data.groups["poor"]].mean() / counts[data.groups["normal"]].mean()
        assert ratio == pytest.approx(0.25, abs=0.05)


class TestRound:
    def test_delegate_rows_committed(self):
        for strategy in ("fedavg", "wcu", "fedfast", "fedfnn"):
            cfg = small_cfg(client_strategy=strategy)
            data = prepare_data(cfg, 0)
            state = init_state(cfg, data, 0)
            before = state.model.copy()
            info = run_round(state, cfg, data, 0)
            for k in info.delegates:
                up = local_train(before, int(k), data.train.items[k], LocalHyper(cfg.gmf.epochs, cfg.gmf.negatives, cfg.gmf.lr, batch_size=cfg.gmf.batch_size), _local_seed(0, 1, k))
                assert state.model.user_emb[k].tobytes() == up.new_user_row.tobytes()

    def test_wcu_leaves_subordinates_bit_identical(self):
        cfg = small_cfg(client_strategy="wcu")
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        before = state.model.user_emb.copy()
        info = run_round(state, cfg, data, 0)
        subs = np.setdiff1d(np.arange(data.num_users), info.delegates)
        assert state.model.user_emb[subs].tobytes() == before[subs].tobytes()

    def test_wcu_zero_epochs_is_a_no_op(self):
        cfg = small_cfg(client_strategy="wcu", gmf={"epochs": 0})
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        before = state.model.copy()
        run_round(state, cfg, data, 0)
        m = state.model
        assert m.user_emb.tobytes() == before.user_emb.tobytes()
        assert m.item_emb.tobytes() == before.item_emb.tobytes()
        assert m.score_w.tobytes() == before.score_w.tobytes()
        assert m.score_b == before.score_b

    def test_all_delegates(self):
        cfg = small_cfg(client_strategy="fedavg", sample_rate=1.0)
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        before = state.model.item_emb.copy()
        info = run_round(state, cfg, data, 0)
        assert info.delegates.size == data.num_users
        assert not np.array_equal(state.model.item_emb, before)

    def test_fedavg_subordinates_share_a_row(self):
        cfg = small_cfg(client_strategy="fedavg")
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        info = run_round(state, cfg, data, 0)
        subs = np.setdiff1d(np.arange(data.num_users), info.delegates)
        np.testing.assert_allclose(state.model.user_emb[subs], state.model.user_emb[info.delegates].mean(0)[None, :].repeat(subs.size, 0), atol=1e-12)

    def test_loss_history_grows_and_skips_repeat(self):
        cfg = small_cfg(client_strategy="wcu", availability=[{"name": "off", "fraction": 1.0, "prob": 1e-12}])
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        run_round(state, cfg, data, 0)
        assert state.skipped == [1]
        assert len(state.loss_history) == 1 and math.isnan(state.loss_history[0])

    def test_global_loss_is_weighted_mean(self):
        cfg = small_cfg(client_strategy="wcu")
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        before = state.model.copy()
        info = run_round(state, cfg, data, 0)
        hyper = LocalHyper(cfg.gmf.epochs, cfg.gmf.negatives, cfg.gmf.lr, batch_size=cfg.gmf.batch_size)
        ups = [local_train(before, int(k), data.train.items[k], hyper, _local_seed(0, 1, k)) for k in info.delegates]
        want = sum(u.n_k * u.final_loss for u in ups) / sum(u.n_k for u in ups)
        assert info.loss == pytest.approx(want, rel=1e-12)

    def test_fedfnn_after_latch_leaves_subordinates_alone(self):
        cfg = small_cfg(client_strategy="fedfnn", fnn={"patience": 1, "epsilon": 10.0})
        data = prepare_data(cfg, 0)
        state = init_state(cfg, data, 0)
        first = run_round(state, cfg, data, 0)
        assert first.predicted
        for _ in range(2):
            before = state.model.user_emb.copy()
            info = run_round(state, cfg, data, 0)
            assert not info.predicted
            subs = np.setdiff1d(np.arange(data.num_users), info.delegates)
            assert state.model.user_emb[subs].tobytes() == before[subs].tobytes()
        assert state.monitor.stopped_at == 2


def _local_seed(seed, t, k):
    from fedfnn.engine import _LOCAL, derive_seed

    return derive_seed(seed, _LOCAL, t, k)


class TestExperiment:
    def test_zero_rounds(self):
        log = run_experiment(small_cfg(rounds=0))
        assert [r["round"] for r in log.rows] == [0]

    def test_eval_schedule(self):
        cfg = small_cfg(rounds=25, eval_interval=10, checkpoints=[3, 25, 99])
        assert eval_rounds(cfg) == {0, 3, 10, 20, 25}

    @pytest.mark.parametrize("strategy", ["fedavg", "wcu", "fedfast", "fedfnn", "gmf"])
    def test_deterministic(self, strategy):
        a = run_experiment(small_cfg(client_strategy=strategy))
        b = run_experiment(small_cfg(client_strategy=strategy))
        assert a.rows == b.rows or _nan_equal(a.rows, b.rows)

    def test_seeds_differ(self):
        cfg = small_cfg()
        assert run_experiment(cfg, seed=0).rows != run_experiment(cfg, seed=1).rows

    def test_group_columns(self):
        cfg = small_cfg(availability=[{"name": "normal", "fraction": 0.5, "prob": 1.0}, {"name": "poor", "fraction": 0.5, "prob": 0.25}])
        log = run_experiment(cfg)
        assert "hr_poor" in log.columns and "ndcg_normal" in log.columns

    def test_training_improves_hr(self):
        cfg = small_cfg(rounds=30, eval_interval=30, client_strategy="gmf")
        log = run_experiment(cfg)
        assert log.final["hr"] > log.rows[0]["hr"]


def _nan_equal(a, b):
    return all(
        x.keys() == y.keys() and all((x[k] == y[k]) or (isinstance(x[k], float) and math.isnan(x[k]) and math.isnan(y[k])) for k in x)
        for x, y in zip(a, b)
    )
