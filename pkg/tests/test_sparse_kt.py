import math

import numpy as np
import pytest

from auxkt import data as D
from auxkt import tensor as T
from auxkt.data import encode_labeled, load_aux_csv
from auxkt.sparse_kt import SparseKT, SparseKtConfig, train_sparse
from auxkt.util import rng_for

SMALL = SparseKtConfig(emb_dim=8, n_aux=8, c_max=4, hidden_dim=12,
                       batch_size=16, max_epochs=6, patience=3)


def make_dataset(seed=0, n_students=20, n_exercises=10, n_kcs=3, seq_len=12):
    ds, _ = D.generate_synthetic(n_students, n_exercises, n_kcs, 2 * n_kcs, seq_len, seed=seed)
    return ds


def logit(p):
    return math.log(p / (1 - p))


def rigged_model(activations, c_max=4, alpha=1.6, beta=0.4):
    """Model whose exercise 0 produces exactly the given activations."""
    m = len(activations)
    model = SparseKT(2, 3, SparseKtConfig(emb_dim=m, n_aux=m, c_max=c_max, hidden_dim=8), seed=0)
    model.enc_w.values[...] = np.eye(m)
    model.enc_b.values[...] = 0.0
    model.x_table.values[0] = activations
    model.p_alpha.values[...] = logit(alpha - 1.0)
    model.p_beta.values[...] = logit(beta)
    return model


class TestEncoding:
    def test_two_stage_selection_example(self):
        acts = [0.9, -0.2, 0.4, 0.1, -1.0, -0.3, -0.7, -0.9]
        model = rigged_model(acts)
        code = model.encode_exercise(0)
        # -0.2 makes the top-4 cut but fails the positivity threshold
        want = [1.6, 0.4, 1.6, 1.6, 0.4, 0.4, 0.4, 0.4]
        np.testing.assert_allclose(code, want)
        assert model.aux_sets([0])[0] == (0, 2, 3)

    def test_zero_encoder_gives_beta_everywhere(self):
        model = SparseKT(2, 4, SMALL, seed=1)
        model.enc_w.values[...] = 0.0
        model.enc_b.values[...] = 0.0
        _, beta = model.levels()
        for ex in range(4):
            np.testing.assert_allclose(model.encode_exercise(ex), beta)
        assert all(tags == () for tags in model.aux_sets().values())

    def test_alpha_count_bounded_by_c_max(self):
        model = SparseKT(3, 50, SMALL, seed=2)
        alpha, _ = model.levels()
        for ex in range(50):
            code = model.encode_exercise(ex)
            assert int((code == alpha).sum()) <= SMALL.c_max
            assert set(np.unique(code)) <= set(model.levels())

    def test_levels_keep_alpha_above_beta(self):
        model = SparseKT(2, 3, SMALL, seed=3)
        for v in (-5.0, 0.0, 5.0):
            model.p_alpha.values[...] = v
            model.p_beta.values[...] = -v
            alpha, beta = model.levels()
            assert alpha > 1.0 > beta

    def test_labeled_code_structure(self):
        model = SparseKT(3, 6, SMALL, seed=4)
        alpha, _ = model.levels()
        for ex in range(6):
            code = model.encode_exercise(ex)
            for y in (0, 1):
                lab = encode_labeled(code, y)
                active = lab[:8] if y == 1 else lab[8:]
                inactive = lab[8:] if y == 1 else lab[:8]
                assert np.count_nonzero(active) == SMALL.n_aux
                assert np.count_nonzero(inactive) == 0
                assert int((active == alpha).sum()) <= SMALL.c_max


class TestForward:
    def test_zero_weights_emit_zero_logits(self):
        model = SparseKT(3, 5, SMALL, seed=5)
        for p in model.params():
            p.values[...] = 0.0
        state = model.initial_state()
        np.testing.assert_array_equal(state.out, np.zeros(3 + SMALL.n_aux))
        nxt = model.advance(state, [0], (), 1)
        np.testing.assert_array_equal(nxt.out, np.zeros(3 + SMALL.n_aux))

    def test_predict_from_zero_logits_is_half(self):
        model = SparseKT(3, 5, SMALL, seed=6)
        state = model.initial_state()
        state.out[...] = 0.0
        assert model.predict(state, [0, 1], (2,)) == 0.5
        assert model.predict(state, [], ()) == 0.5

    def test_predict_matches_index_loop(self):
        rng = rng_for(7, "dot")
        model = SparseKT(4, 5, SMALL, seed=7)
        state = model.initial_state()
        state.out[...] = rng.normal(size=state.out.shape)
        kc_set, aux_set = [1, 3], (0, 5)
        total = 0.0
        for k in kc_set:
            total += state.out[k]
        for a in aux_set:
            total += state.out[4 + a]
        want = 1.0 / (1.0 + math.exp(-total))
        assert model.predict(state, kc_set, aux_set) == pytest.approx(want, rel=1e-12)

    def test_predict_is_order_invariant(self):
        model = SparseKT(4, 5, SMALL, seed=8)
        state = model.initial_state()
        assert model.predict(state, [3, 1], (2, 0)) == model.predict(state, [1, 3], (0, 2))

    def test_flipping_correctness_changes_next_but_not_current(self):
        ds = make_dataset(seed=9)
        model = SparseKT(ds.n_kcs, ds.n_exercises, SMALL, seed=9)
        aux = model.aux_sets()
        state = model.initial_state()
        ex0, ex1 = 0, 1
        current = model.predict(state, ds.qmatrix[ex0], aux[ex0])
        after_correct = model.advance(state, ds.qmatrix[ex0], aux[ex0], 1)
        after_wrong = model.advance(state, ds.qmatrix[ex0], aux[ex0], 0)
        # prediction for the step itself is independent of its own label
        assert model.predict(state, ds.qmatrix[ex0], aux[ex0]) == current
        p1 = model.predict(after_correct, ds.qmatrix[ex1], aux[ex1])
        p2 = model.predict(after_wrong, ds.qmatrix[ex1], aux[ex1])
        assert p1 != p2

    def test_batched_predictions_match_stepper(self):
        ds = make_dataset(seed=10)
        model = SparseKT(ds.n_kcs, ds.n_exercises, SMALL, seed=10)
        aux = model.aux_sets()
        seq = ds.sequences[0]
        preds, labels = model.predict_sequences([seq], ds.qmatrix)
        state = model.initial_state()
        manual = []
        for it in seq:
            manual.append(model.predict(state, ds.qmatrix[it.exercise_id], aux[it.exercise_id]))
            state = model.advance(state, ds.qmatrix[it.exercise_id], aux[it.exercise_id], it.correct)
        np.testing.assert_allclose(preds, manual, atol=1e-10)
        assert labels.tolist() == [it.correct for it in seq]


class TestTraining:
    def test_gradient_reaches_exercise_embeddings(self):
        ds = make_dataset(seed=11)
        model = SparseKT(ds.n_kcs, ds.n_exercises, SMALL, seed=11)
        batch = ds.sequences[:6]
        per_step = model._sequence_masks(batch, ds.qmatrix)
        with T.Graph() as g:
            loss, _ = model._unroll(per_step, len(batch))
            g.backward(loss)
        seen = {it.exercise_id for seq in batch for it in seq}
        grads = np.abs(model.x_table.grad).sum(axis=1)
        assert all(grads[ex] > 0 for ex in seen)
        assert float(np.abs(model.p_alpha.grad)) >= 0.0  # scalar levels got gradients
        assert model.enc_w.grad is not None and np.abs(model.enc_w.grad).sum() > 0

    def test_ste_identity_through_encoder(self):
        # upstream gradient lands on the activations unchanged, then flows
        # into the encoder by the chain rule
        model = rigged_model([0.5, -0.5, 0.2, 0.1])
        acts_in = T.Tensor(model._activations([0])[0], requires_grad=True)
        upstream = np.array([1.0, -2.0, 3.0, 0.5])
        with T.Graph() as g:
            alpha = T.add(T.sigmoid(model.p_alpha), 1.0)
            beta = T.sigmoid(model.p_beta)
            code = T.ste_quantize(acts_in, model.cfg.c_max, alpha, beta)
            g.backward(T.reduce_sum(T.mul(code, T.Tensor(upstream))))
        np.testing.assert_array_equal(acts_in.grad, upstream)

    def test_seeded_training_is_deterministic(self):
        ds = make_dataset(seed=12)
        tr, va, _ = D.split_dataset(ds, seed=2)
        a, _ = train_sparse(tr, va, SMALL, seed=13)
        b, _ = train_sparse(tr, va, SMALL, seed=13)
        for k, v in a.named_arrays().items():
            np.testing.assert_array_equal(v, b.named_arrays()[k])

    def test_levels_stay_ordered_during_training(self):
        ds = make_dataset(seed=14)
        tr, va, _ = D.split_dataset(ds, seed=3)
        model, _ = train_sparse(tr, va, SMALL, seed=14)
        alpha, beta = model.levels()
        assert alpha > 1.0 > beta


class TestExport:
    def test_export_is_pure(self):
        model = SparseKT(3, 7, SMALL, seed=15)
        assert model.aux_sets() == model.aux_sets()

    def test_aux_csv_round_trip(self, tmp_path):
        model = SparseKT(3, 7, SMALL, seed=16)
        path = tmp_path / "aux.csv"
        aux = model.export_aux_csv(path)
        assert load_aux_csv(path) == aux

    def test_checkpoint_round_trip(self, tmp_path):
        model = SparseKT(3, 7, SMALL, seed=17)
        path = tmp_path / "skt.npz"
        model.save(path)
        back = SparseKT.load(path)
        for k, v in model.named_arrays().items():
            np.testing.assert_array_equal(v, back.named_arrays()[k])
        assert back.levels() == model.levels()
