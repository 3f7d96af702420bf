"""Knowledge tracing with learned sparse two-level exercise codes.

Every exercise owns a dense embedding that a linear encoder maps to
``n_aux`` activations. A quantizer keeps at most ``c_max`` strictly
positive activations and emits a two-level code: ``alpha`` on selected
entries, ``beta`` elsewhere, with ``alpha = 1 + sigmoid(p_alpha) > 1 >
beta = sigmoid(p_beta)`` learned as scalars. Codes are trained end to
end through a straight-through estimator and exported as binary
auxiliary tags (alpha -> 1, beta -> 0) for downstream models.

Per interaction, the input is the labeled concatenation of the human-tag
multi-hot and the labeled code, projected to the LSTM width. The output
layer emits one logit per human tag and per code slot; the probability
for an interaction is the sigmoid of the dot product between its binary
tag/code selector and the logits emitted by the previous step (the
initial step scores against logits from a learned initial state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import save_aux_csv
from .metrics import auc
from .util import rng_for


class SparseKtError(ValueError):
    pass


@dataclass(frozen=True)
class SparseKtConfig:
    emb_dim: int = 32
    n_aux: int = 32
    c_max: int = 4
    hidden_dim: int = 128
    lr: float = 0.001
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 5


@dataclass
class SparseState:
    """LSTM carry plus the logits emitted by the last processed step."""

    h: np.ndarray
    c: np.ndarray
    out: np.ndarray  # (n_kcs + n_aux,) logits scoring the next interaction


def _expit(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class SparseKT:
    def __init__(self, n_kcs, n_exercises, cfg: SparseKtConfig = SparseKtConfig(), seed=0):
        self.n_kcs = n_kcs
        self.n_exercises = n_exercises
        self.cfg = cfg
        rng = rng_for(seed, "sparse-init")
        d, m, hid = cfg.emb_dim, cfg.n_aux, cfg.hidden_dim
        if not 1 <= cfg.c_max <= m:
            raise SparseKtError(f"c_max={cfg.c_max} out of range for {m} code slots")
        b_emb = 1.0 / np.sqrt(d)
        self.x_table = T.Tensor(rng.uniform(-b_emb, b_emb, size=(n_exercises, d)), requires_grad=True)
        self.enc_w = T.Tensor(rng.uniform(-b_emb, b_emb, size=(d, m)), requires_grad=True)
        self.enc_b = T.Tensor(np.zeros((1, m)), requires_grad=True)
        self.p_alpha = T.Tensor(0.0, requires_grad=True)
        self.p_beta = T.Tensor(0.0, requires_grad=True)
        width = 2 * n_kcs + 2 * m
        b_proj = 1.0 / np.sqrt(width)
        self.w_proj = T.Tensor(rng.uniform(-b_proj, b_proj, size=(width, hid)), requires_grad=True)
        self.lstm = T.LstmWeights(hid, hid, rng)
        b_out = 1.0 / np.sqrt(hid)
        self.w_out = T.Tensor(rng.uniform(-b_out, b_out, size=(hid, n_kcs + m)), requires_grad=True)
        self.b_out = T.Tensor(np.zeros((1, n_kcs + m)), requires_grad=True)
        self.h0 = T.Tensor(np.zeros((1, hid)), requires_grad=True)
        self.c0 = T.Tensor(np.zeros((1, hid)), requires_grad=True)

    def params(self):
        return [
            self.x_table, self.enc_w, self.enc_b, self.p_alpha, self.p_beta,
            self.w_proj, *self.lstm.params(), self.w_out, self.b_out, self.h0, self.c0,
        ]

    def non_ste_params(self):
        """Parameters whose gradients are exact (not straight-through surrogates)."""
        return [
            self.p_alpha, self.p_beta, self.w_proj, *self.lstm.params(),
            self.w_out, self.b_out, self.h0, self.c0,
        ]

    # -- code levels and per-exercise codes ---------------------------------

    def levels(self):
        """Current (alpha, beta); alpha >= 1 > beta by construction."""
        return 1.0 + float(_expit(self.p_alpha.values)), float(_expit(self.p_beta.values))

    def _activations(self, exercise_ids):
        x = self.x_table.values[list(exercise_ids)]
        return x @ self.enc_w.values + self.enc_b.values[0]

    def encode_exercise(self, exercise_id):
        """Two-level code vector of one exercise under the current weights."""
        if not 0 <= exercise_id < self.n_exercises:
            raise SparseKtError(f"unknown exercise {exercise_id}")
        alpha, beta = self.levels()
        codes = T.sparse_binary_codes(self._activations([exercise_id])[0], self.cfg.c_max)
        return alpha * codes + beta * (1.0 - codes)

    def aux_sets(self, exercise_ids=None):
        """Binary auxiliary tags (code == alpha) per exercise."""
        if exercise_ids is None:
            exercise_ids = range(self.n_exercises)
        exercise_ids = list(exercise_ids)
        codes = T.sparse_binary_codes(self._activations(exercise_ids), self.cfg.c_max)
        return {
            ex: tuple(int(i) for i in np.nonzero(codes[row])[0])
            for row, ex in enumerate(exercise_ids)
        }

    def export_aux_csv(self, path, exercise_ids=None):
        aux = self.aux_sets(exercise_ids)
        save_aux_csv(aux, path)
        return aux

    # -- batched forward -----------------------------------------------------

    def _sequence_masks(self, sequences, qmatrix):
        n = len(sequences)
        n_kcs, m = self.n_kcs, self.cfg.n_aux
        steps = max(len(s) for s in sequences)
        per_step = []
        for t in range(steps):
            ex_sel = np.zeros((n, self.n_exercises))
            kc_labeled = np.zeros((n, 2 * n_kcs))
            kc_sel = np.zeros((n, n_kcs))
            ymask = np.zeros((n, m))
            yvec = np.zeros(n)
            active = np.zeros(n)
            for b, seq in enumerate(sequences):
                if t >= len(seq):
                    continue
                it = seq[t]
                tags = list(qmatrix[it.exercise_id])
                ex_sel[b, it.exercise_id] = 1.0
                half = 0 if it.correct else n_kcs
                for k in tags:
                    kc_labeled[b, half + k] = 1.0
                    kc_sel[b, k] = 1.0
                ymask[b, :] = it.correct
                yvec[b] = it.correct
                active[b] = 1.0
            per_step.append((ex_sel, kc_labeled, kc_sel, ymask, yvec, active))
        return per_step

    def _unroll(self, per_step, n_rows, collect=None):
        """Shared training/inference unroll.

        ``collect``, when given, is called per step with
        (logits_before_step, selector, yvec, active) in numpy form.
        Returns the summed masked cross-entropy tensor and event count.
        """
        alpha = T.add(T.sigmoid(self.p_alpha), 1.0)
        beta = T.sigmoid(self.p_beta)
        h = T.broadcast_rows(self.h0, n_rows)
        c = T.broadcast_rows(self.c0, n_rows)
        o_prev = T.add(T.matmul(h, self.w_out), T.broadcast_rows(self.b_out, n_rows))
        total = None
        events = 0
        for ex_sel, kc_labeled, kc_sel, ymask, yvec, active in per_step:
            x = T.matmul(T.Tensor(ex_sel), self.x_table)
            acts = T.add(T.matmul(x, self.enc_w), T.broadcast_rows(self.enc_b, n_rows))
            codes01 = T.sparse_binary_codes(acts.values, self.cfg.c_max)

            # score this interaction against the logits from the previous step;
            # the selector uses the binary (0/1) view of the code, detached
            selector = np.concatenate([kc_sel, codes01 * (active[:, None])], axis=1)
            logit = T.reduce_sum(T.mul(o_prev, T.Tensor(selector)), axis=1)
            if collect is not None:
                collect(o_prev.values, selector, yvec, active)
            events += int(active.sum())
            nll = T.add(T.softplus(logit), T.mul(logit, T.Tensor(-yvec)))
            term = T.reduce_sum(T.mul(nll, T.Tensor(active)))
            total = term if total is None else T.add(total, term)

            # advance with the labeled concatenation of tags and code
            code = T.ste_quantize(acts, self.cfg.c_max, alpha, beta)
            code_y = T.concat(
                [T.mul(code, T.Tensor(ymask)), T.mul(code, T.Tensor(1.0 - ymask))], axis=1
            )
            v = T.concat([T.Tensor(kc_labeled), code_y], axis=1)
            z = T.matmul(v, self.w_proj)
            h, c = T.lstm_step(z, h, c, self.lstm)
            o_prev = T.add(T.matmul(h, self.w_out), T.broadcast_rows(self.b_out, n_rows))
        if events == 0:
            raise SparseKtError("batch has no interactions")
        return T.scale(total, 1.0 / events), events

    def predict_sequences(self, sequences, qmatrix, batch_size=None):
        """One-step-ahead (prediction, label) pairs for every interaction."""
        batch_size = batch_size or self.cfg.batch_size
        preds, labels = [], []

        def collect(o_values, selector, yvec, active):
            logits = (o_values * selector).sum(axis=1)
            for b in np.nonzero(active)[0]:
                preds.append(float(_expit(logits[b])))
                labels.append(int(yvec[b]))

        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start : start + batch_size]
            per_step = self._sequence_masks(chunk, qmatrix)
            self._unroll(per_step, len(chunk), collect=collect)
        return np.asarray(preds), np.asarray(labels)

    def evaluate_auc(self, ds):
        preds, labels = self.predict_sequences(ds.sequences, ds.qmatrix)
        return auc(preds, labels)

    # -- single-student stepping (planners, probes) -------------------------

    def initial_state(self):
        h = self.h0.values.copy()
        c = self.c0.values.copy()
        out = (h @ self.w_out.values + self.b_out.values)[0]
        return SparseState(h, c, out)

    def advance_many(self, state, items):
        """Advance branches of one state; items are (kc_set, aux_set, correct).

        ``aux_set`` holds binary code positions; a real exercise advances
        with its current code (``aux_sets``), a bare human tag with an
        empty code, a bare auxiliary tag with a singleton.
        """
        n = len(items)
        n_kcs, m = self.n_kcs, self.cfg.n_aux
        alpha, beta = self.levels()
        kc_labeled = np.zeros((n, 2 * n_kcs))
        code_labeled = np.full((n, 2 * m), 0.0)
        for b, (kc_set, aux_set, correct) in enumerate(items):
            half = 0 if correct else n_kcs
            for k in kc_set:
                kc_labeled[b, half + k] = 1.0
            code = np.full(m, beta)
            code[list(aux_set)] = alpha
            chalf = 0 if correct else m
            code_labeled[b, chalf : chalf + m] = code
        v = np.concatenate([kc_labeled, code_labeled], axis=1)
        z = T.Tensor(v @ self.w_proj.values)
        h = T.Tensor(np.repeat(state.h, n, axis=0))
        c = T.Tensor(np.repeat(state.c, n, axis=0))
        h2, c2 = T.lstm_step(z, h, c, self.lstm)
        outs = h2.values @ self.w_out.values + self.b_out.values
        return [
            SparseState(h2.values[b : b + 1].copy(), c2.values[b : b + 1].copy(), outs[b].copy())
            for b in range(n)
        ]

    def advance(self, state, kc_set, aux_set, correct):
        (new,) = self.advance_many(state, [(kc_set, aux_set, correct)])
        return new

    def predict(self, state, kc_set, aux_set=()):
        """sigmoid of the selector dot product with the last emitted logits."""
        total = sum(state.out[k] for k in kc_set)
        total += sum(state.out[self.n_kcs + a] for a in aux_set)
        return float(_expit(np.float64(total)))

    # -- persistence ---------------------------------------------------------

    def named_arrays(self):
        arrays = {
            "x_table": self.x_table.values,
            "enc_w": self.enc_w.values,
            "enc_b": self.enc_b.values,
            "p_alpha": self.p_alpha.values,
            "p_beta": self.p_beta.values,
            "w_proj": self.w_proj.values,
            "w_out": self.w_out.values,
            "b_out": self.b_out.values,
            "h0": self.h0.values,
            "c0": self.c0.values,
        }
        arrays.update(self.lstm.named_arrays("lstm."))
        return arrays

    def snapshot(self):
        return {k: v.copy() for k, v in self.named_arrays().items()}

    def restore(self, snap):
        for k, v in self.named_arrays().items():
            v[...] = snap[k]

    def save(self, path):
        meta = {
            "kind": "sparse_kt",
            "n_kcs": self.n_kcs,
            "n_exercises": self.n_exercises,
            "emb_dim": self.cfg.emb_dim,
            "n_aux": self.cfg.n_aux,
            "c_max": self.cfg.c_max,
            "hidden_dim": self.cfg.hidden_dim,
        }
        T.save_checkpoint(path, self.named_arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = T.load_checkpoint(path)
        if meta.get("kind") != "sparse_kt":
            raise SparseKtError(f"{path}: not a sparse-KT checkpoint")
        cfg = SparseKtConfig(
            emb_dim=meta["emb_dim"], n_aux=meta["n_aux"], c_max=meta["c_max"],
            hidden_dim=meta["hidden_dim"],
        )
        model = cls(meta["n_kcs"], meta["n_exercises"], cfg)
        model.restore(arrays)
        return model


def train_sparse(train_ds, val_ds, cfg: SparseKtConfig = SparseKtConfig(), seed=0, log=None):
    """Adam + straight-through training with early stopping on validation AUC."""
    if not train_ds.sequences:
        raise SparseKtError("empty training set")
    model = SparseKT(train_ds.n_kcs, train_ds.n_exercises, cfg, seed=seed)
    opt = T.Adam(model.params(), lr=cfg.lr)
    rng = rng_for(seed, "sparse-train")
    best = (-np.inf, None)
    history = []
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_ds.sequences))
        epoch_loss = 0.0
        epoch_events = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_ds.sequences[i] for i in order[start : start + cfg.batch_size]]
            per_step = model._sequence_masks(batch, train_ds.qmatrix)
            opt.zero_grad()
            with T.Graph() as g:
                loss, events = model._unroll(per_step, len(batch))
                g.backward(loss)
            opt.step()
            epoch_loss += float(loss.values) * events
            epoch_events += events
        val_auc = model.evaluate_auc(val_ds)
        history.append((epoch, epoch_loss / max(epoch_events, 1), val_auc))
        if log:
            log(f"epoch {epoch}: loss {epoch_loss / max(epoch_events, 1):.4f} val_auc {val_auc:.4f}")
        if val_auc > best[0]:
            best = (val_auc, model.snapshot())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best[1] is not None:
        model.restore(best[1])
    return model, history
