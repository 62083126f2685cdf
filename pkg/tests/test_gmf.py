import math

import numpy as np
import pytest

from fedfnn.gmf import (
    GmfModel,
    LocalHyper,
    _LocalParams,
    bce_loss,
    init_model,
    local_train,
    loss_and_grads,
    predict_score,
    sigmoid,
)
from fedfnn.optim import AdamState, adam_step
from gradcheck import central_diff, rel_err


class TestInitModel:
    def test_shapes(self):
        m = init_model(3, 2, 4, seed=7)
        assert m.user_emb.shape == (3, 4)
        assert m.item_emb.shape == (2, 4)
        assert m.score_w.shape == (4,)
        assert m.dim == 4

    def test_same_seed_same_bytes(self):
        a, b = init_model(3, 2, 4, seed=7), init_model(3, 2, 4, seed=7)
        assert a.user_emb.tobytes() == b.user_emb.tobytes()
        assert a.item_emb.tobytes() == b.item_emb.tobytes()
        assert a.score_w.tobytes() == b.score_w.tobytes()

    @pytest.mark.parametrize("sizes", [(3, 2, 0), (0, 2, 4), (3, -1, 4)])
    def test_bad_sizes(self, sizes):
        with pytest.raises(ValueError):
            init_model(*sizes, seed=0)

    def test_init_scales(self):
        m = init_model(2000, 2000, 16, seed=1)
        assert abs(m.user_emb.std() - 0.01) < 5e-4
        assert abs(m.item_emb.std() - 0.01) < 5e-4


class TestPredictScore:
    def test_zero_embeddings(self):
        m = GmfModel(np.zeros((2, 3)), np.zeros((2, 3)), np.ones(3), 0.0)
        assert predict_score(m, 0, 1) == 0.5

    def test_hand_value(self):
        m = GmfModel(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]]), np.array([1.0, 1.0]), 0.0)
        assert predict_score(m, 0, 0) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)
        assert predict_score(m, 0, 0) == pytest.approx(0.731059, abs=1e-6)

    def test_out_of_range(self):
        m = init_model(3, 2, 4, seed=0)
        with pytest.raises(ValueError):
            predict_score(m, 3, 0)
        with pytest.raises(ValueError):
            predict_score(m, 0, 2)

    def test_coordinate_permutation_invariance(self):
        m = init_model(5, 6, 8, seed=3)
        m.score_b = 0.3
        perm = np.random.default_rng(0).permutation(8)
        p = GmfModel(m.user_emb[:, perm], m.item_emb[:, perm], m.score_w[perm], m.score_b)
        for u in range(5):
            for i in range(6):
                assert predict_score(p, u, i) == pytest.approx(predict_score(m, u, i), abs=1e-15)


class TestBce:
    def test_half(self):
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)

    def test_clamped(self):
        v = bce_loss(1.0, 1)
        assert math.isfinite(v)
        assert v == pytest.approx(-math.log(1 - 1e-7), rel=1e-9)
        assert math.isfinite(bce_loss(0.0, 1))

    def test_negative_label(self):
        assert bce_loss(0.25, 0) == pytest.approx(-math.log(0.75), abs=1e-12)
        assert bce_loss(0.25, 0) == pytest.approx(0.287682, abs=1e-6)

    def test_nonnegative(self):
        p = np.linspace(0, 1, 101)
        assert (bce_loss(p, 1) >= 0).all() and (bce_loss(p, 0) >= 0).all()


class TestAdam:
    def test_zero_grad_no_move(self):
        p = [np.array([1.0, -2.0]), np.array([[3.0]])]
        st = AdamState.for_params(p, lr=0.1)
        adam_step(st, p, [np.zeros(2), np.zeros((1, 1))])
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        np.testing.assert_array_equal(p[1], [[3.0]])
        assert st.step_count == 1

    def test_first_step(self):
        p = [np.array(1.0)]
        st = AdamState.for_params(p, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        adam_step(st, p, [np.array(1.0)])
        # bias-corrected m and v are both 1 on the first step
        assert float(p[0]) == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
        assert float(p[0]) == pytest.approx(0.9, abs=1e-8)

    def test_stateful(self):
        p = [np.array([1.0])]
        st = AdamState.for_params(p, lr=0.1)
        adam_step(st, p, [np.array([1.0])])
        first = 1.0 - p[0][0]
        before = p[0][0]
        adam_step(st, p, [np.array([0.5])])
        second = before - p[0][0]
        assert st.step_count == 2
        assert first != second

    def test_shape_mismatch(self):
        p = [np.zeros(3)]
        with pytest.raises(ValueError):
            adam_step(AdamState.for_params(p), p, [np.zeros(2)])


def _random_instance(rng, n_users=4, n_items=6, d=3, n=15):
    ue = rng.normal(0, 0.5, (n_users, d))
    ie = rng.normal(0, 0.5, (n_items, d))
    w = rng.normal(0, 0.5, d)
    b = np.array([rng.normal(0, 0.2)])
    users = rng.integers(0, n_users, n)
    items = rng.integers(0, n_items, n)
    labels = rng.integers(0, 2, n).astype(float)
    return ue, ie, w, b, users, items, labels


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_dense_gradients_match_finite_differences(self, seed):
        ue, ie, w, b, users, items, labels = _random_instance(np.random.default_rng(seed))
        _, (gu, gi, gw, gb) = loss_and_grads(ue, ie, w, b[0], users, items, labels)

        def f():
            return loss_and_grads(ue, ie, w, b[0], users, items, labels)[0]

        for analytic, param in [(gu, ue), (gi, ie), (gw, w), (gb, b)]:
            assert rel_err(analytic, central_diff(f, param)) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_local_buffer_gradient(self, seed):
        rng = np.random.default_rng(100 + seed)
        lp = _LocalParams(rng.normal(0, 0.5, 3), rng.normal(0, 0.5, (5, 3)), rng.normal(0, 0.5, 3), 0.1)
        items = rng.integers(0, 5, 12)
        labels = rng.integers(0, 2, 12).astype(float)
        lp.fill_grad(items, labels)
        numeric = central_diff(lambda: lp.loss(items, labels), lp.flat)
        assert rel_err(lp.grad, numeric) < 1e-4


class TestLocalTrain:
    def _model(self):
        return init_model(4, 10, 4, seed=1)

    def test_zero_epochs_is_identity(self):
        m = self._model()
        up = local_train(m, 2, [1, 3], LocalHyper(epochs=0), seed=0)
        np.testing.assert_array_equal(up.new_user_row, m.user_emb[2])
        np.testing.assert_array_equal(up.item_rows, m.item_emb[up.item_ids])
        assert up.final_loss == up.initial_loss

    def test_single_step_lowers_loss(self):
        m = self._model()
        up = local_train(m, 0, [4], LocalHyper(epochs=1, negatives=1, lr=1e-3), seed=3)
        assert up.final_loss < up.initial_loss
        assert up.n_k == 1
        assert len(up.item_ids) == 2

    def test_all_items_positive(self):
        m = init_model(1, 5, 3, seed=0)
        up = local_train(m, 0, np.arange(5), LocalHyper(epochs=3, negatives=4, lr=1e-2), seed=0)
        np.testing.assert_array_equal(up.item_ids, np.arange(5))
        assert up.final_loss < up.initial_loss

    def test_does_not_mutate_model(self):
        m = self._model()
        before = m.copy()
        local_train(m, 1, [0, 5, 7], LocalHyper(epochs=3, lr=0.1), seed=2)
        np.testing.assert_array_equal(m.user_emb, before.user_emb)
        np.testing.assert_array_equal(m.item_emb, before.item_emb)
        np.testing.assert_array_equal(m.score_w, before.score_w)

    def test_touched_rows_cover_positives(self):
        m = self._model()
        up = local_train(m, 1, [0, 5, 7], LocalHyper(), seed=2)
        assert {0, 5, 7} <= set(up.touched_item_rows)
        assert set(up.touched_item_rows) <= set(range(10))

    def test_deterministic(self):
        m = self._model()
        a = local_train(m, 1, [0, 5, 7], LocalHyper(epochs=2, batch_size=4, lr=0.05), seed=9)
        b = local_train(m, 1, [0, 5, 7], LocalHyper(epochs=2, batch_size=4, lr=0.05), seed=9)
        assert a.new_user_row.tobytes() == b.new_user_row.tobytes()
        assert a.item_rows.tobytes() == b.item_rows.tobytes()
        assert a.final_loss == b.final_loss

    def test_empty_history(self):
        with pytest.raises(ValueError):
            local_train(self._model(), 0, [], LocalHyper(), seed=0)

    def test_parameters_stay_finite(self):
        m = self._model()
        up = local_train(m, 0, [1, 2], LocalHyper(epochs=50, lr=1.0), seed=0)
        assert np.isfinite(up.item_rows).all() and np.isfinite(up.new_user_row).all()


def test_sigmoid_symmetry():
    z = np.linspace(-30, 30, 601)
    np.testing.assert_allclose(sigmoid(z) + sigmoid(-z), 1.0, atol=1e-15)
