import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auxkt import data as D
from auxkt.dkt import DktConfig, DktModel, predict_exercise, train_dkt
from auxkt.util import rng_for

SMALL = DktConfig(emb_dim=8, hidden_dim=12, batch_size=16, max_epochs=8, patience=3)


def make_dataset(n_students=20, n_exercises=8, n_kcs=4, seq_len=12, seed=0):
    ds, _ = D.generate_synthetic(n_students, n_exercises, n_kcs, 2 * n_kcs, seq_len, seed=seed)
    return ds


class TestStep:
    def test_zero_weights_give_half_probabilities(self):
        model = DktModel(3, SMALL, seed=1)
        for p in model.params():
            p.values[...] = 0.0
        state, probs = model.step(model.initial_state(), [0, 2], 1)
        np.testing.assert_allclose(probs, 0.5)

    def test_singleton_input_is_exact_embedding_row(self):
        model = DktModel(3, SMALL, seed=2)
        sel = model._input_matrix([([1], 1)])
        x = sel @ model.emb.values
        np.testing.assert_allclose(x[0], model.emb.values[1])

    def test_two_tag_input_is_row_average(self):
        model = DktModel(4, SMALL, seed=3)
        sel = model._input_matrix([([0, 2], 0)])
        x = sel @ model.emb.values
        want = 0.5 * (model.emb.values[4 + 0] + model.emb.values[4 + 2])
        np.testing.assert_allclose(x[0], want)

    def test_empty_tag_set_rejected(self):
        model = DktModel(3, SMALL, seed=4)
        with pytest.raises(Exception, match="empty tag set"):
            model.step(model.initial_state(), [], 1)

    def test_step_is_functional(self):
        model = DktModel(3, SMALL, seed=5)
        state = model.initial_state()
        h_before = state.h.copy()
        model.step(state, [0], 1)
        np.testing.assert_array_equal(state.h, h_before)

    def test_step_many_matches_individual_steps(self):
        model = DktModel(4, SMALL, seed=6)
        state = model.initial_state()
        branches = model.step_many(state, [([0], 1), ([1, 2], 0), ([3], 1)])
        for item, branch in zip([([0], 1), ([1, 2], 0), ([3], 1)], branches):
            _, probs = model.step(state, *item)
            np.testing.assert_allclose(branch.probs, probs, atol=1e-12)


class TestPredictExercise:
    def test_mean_of_selected(self):
        assert predict_exercise([0.2, 0.8], [0, 1]) == pytest.approx(0.5)

    def test_singleton(self):
        assert predict_exercise([0.2, 0.8], [1]) == pytest.approx(0.8)

    @given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=8), st.data())
    @settings(max_examples=50, deadline=None)
    def test_bounded_by_selected_entries(self, probs, data):
        kc_set = data.draw(st.lists(st.integers(0, len(probs) - 1), min_size=1, unique=True))
        out = predict_exercise(probs, kc_set)
        chosen = [probs[k] for k in kc_set]
        assert min(chosen) - 1e-12 <= out <= max(chosen) + 1e-12


class TestTraining:
    def test_one_step_decreases_fixed_batch_loss(self):
        from auxkt import tensor as T

        ds = make_dataset(seed=7)
        model = DktModel(ds.n_kcs, SMALL, seed=7)
        batch = ds.sequences[:8]
        per_step = model._sequence_masks(batch, ds.qmatrix)
        opt = T.Adam(model.params(), lr=1e-3)

        def batch_loss():
            with T.Graph() as g:
                loss, _ = model._batch_loss(per_step, len(batch))
                g.backward(loss)
            return float(loss.values)

        before = batch_loss()
        opt.step()
        opt.zero_grad()
        with T.Graph():
            after, _ = model._batch_loss(per_step, len(batch))
        assert float(after.values) < before

    def test_loss_reaches_entropy_floor_on_signal_free_labels(self):
        # labels are coin flips with rate 0.7, independent of everything:
        # the best any predictor can do is the base-rate entropy
        rng = rng_for(8, "floor")
        rate = 0.7
        seqs = []
        for s in range(24):
            seqs.append(
                [D.Interaction(f"s{s}", 0, int(rng.random() < rate), t) for t in range(20)]
            )
        ds = D.Dataset(sequences=seqs, qmatrix={0: (0,)}, n_kcs=1, n_exercises=1)
        tr, va = ds, ds
        cfg = DktConfig(emb_dim=4, hidden_dim=6, batch_size=24, max_epochs=300, patience=300)
        model, history = train_dkt(tr, va, cfg, seed=9)
        floor = -(rate * np.log(rate) + (1 - rate) * np.log(1 - rate))
        assert history[-1][1] == pytest.approx(floor, abs=0.05)

    def test_seeded_training_is_deterministic(self):
        ds = make_dataset(seed=10)
        tr, va, _ = D.split_dataset(ds, seed=1)
        a, _ = train_dkt(tr, va, SMALL, seed=11)
        b, _ = train_dkt(tr, va, SMALL, seed=11)
        for k, v in a.named_arrays().items():
            np.testing.assert_array_equal(v, b.named_arrays()[k])


class TestNoLeakage:
    def test_prediction_for_t_ignores_label_at_t(self):
        ds = make_dataset(seed=12)
        model = DktModel(ds.n_kcs, SMALL, seed=12)
        seq = ds.sequences[0][:6]
        t_probe = 3

        def prediction_for_t(sequence):
            state = model.initial_state()
            for it in sequence[:t_probe]:
                state, _ = model.step(state, ds.qmatrix[it.exercise_id], it.correct)
            return predict_exercise(state.probs, ds.qmatrix[sequence[t_probe].exercise_id])

        flipped = list(seq)
        it = flipped[t_probe]
        flipped[t_probe] = D.Interaction(it.student_id, it.exercise_id, 1 - it.correct, it.order_index)
        assert prediction_for_t(seq) == prediction_for_t(flipped)

    def test_flipping_label_changes_next_prediction(self):
        ds = make_dataset(seed=13)
        model = DktModel(ds.n_kcs, SMALL, seed=13)
        state = model.initial_state()
        s_correct, _ = model.step(state, [0], 1)
        s_wrong, _ = model.step(state, [0], 0)
        assert not np.allclose(s_correct.probs, s_wrong.probs)


class TestProbabilityRange:
    def test_all_outputs_in_open_unit_interval(self):
        ds = make_dataset(seed=14)
        model = DktModel(ds.n_kcs, SMALL, seed=14)
        preds, _ = model.predict_sequences(ds.sequences, ds.qmatrix)
        assert np.all((preds > 0.0) & (preds < 1.0))


class TestAugmentedWidth:
    def test_output_covers_combined_universe(self):
        ds = make_dataset(seed=15)
        aux = {ex: (ex % 3,) for ex in ds.qmatrix}
        augmented = D.augment_with_aux(ds, aux, n_aux=3)
        model = DktModel(augmented.n_kcs, SMALL, seed=15)
        assert model.w_out.values.shape[1] == ds.n_kcs + 3
        assert model.emb.values.shape[0] == 2 * (ds.n_kcs + 3)
        assert max(t for tags in augmented.qmatrix.values() for t in tags) < augmented.n_kcs


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path):
        model = DktModel(5, SMALL, seed=16)
        path = tmp_path / "dkt.npz"
        model.save(path)
        back = DktModel.load(path)
        for k, v in model.named_arrays().items():
            np.testing.assert_array_equal(v, back.named_arrays()[k])
