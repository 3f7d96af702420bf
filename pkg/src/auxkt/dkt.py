"""Recurrent knowledge-tracing baseline over skill-tag inputs.

Each interaction is embedded as the mean of its tags' labeled embedding
rows (row k for a correct response on tag k, row n_kcs + k for an
incorrect one), fed through an LSTM, and mapped to per-tag correctness
probabilities by a sigmoid output layer. Predictions are strictly
one-step-ahead: the score for interaction t is computed from the state
after interaction t-1, and the first interaction of a sequence is never
scored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .metrics import auc
from .util import rng_for


class DktError(ValueError):
    pass


@dataclass(frozen=True)
class DktConfig:
    emb_dim: int = 32
    hidden_dim: int = 128
    lr: float = 0.001
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 5


@dataclass
class DktState:
    """LSTM carry plus the per-tag probabilities emitted by the last step."""

    h: np.ndarray
    c: np.ndarray
    probs: np.ndarray


def predict_exercise(probs, kc_set):
    """Exercise-level score: mean of the per-tag probabilities."""
    kc_set = list(kc_set)
    if not kc_set:
        raise DktError("empty tag set")
    return float(np.mean(np.asarray(probs)[kc_set]))


class DktModel:
    def __init__(self, n_kcs, cfg: DktConfig = DktConfig(), seed=0):
        self.n_kcs = n_kcs
        self.cfg = cfg
        rng = rng_for(seed, "dkt-init")
        b_emb = 1.0 / np.sqrt(cfg.emb_dim)
        b_out = 1.0 / np.sqrt(cfg.hidden_dim)
        self.emb = T.Tensor(rng.uniform(-b_emb, b_emb, size=(2 * n_kcs, cfg.emb_dim)),
                            requires_grad=True)
        self.lstm = T.LstmWeights(cfg.emb_dim, cfg.hidden_dim, rng)
        self.w_out = T.Tensor(rng.uniform(-b_out, b_out, size=(cfg.hidden_dim, n_kcs)),
                              requires_grad=True)
        self.b_out = T.Tensor(np.zeros((1, n_kcs)), requires_grad=True)

    def params(self):
        return [self.emb, *self.lstm.params(), self.w_out, self.b_out]

    # -- stepping --------------------------------------------------------

    def input_rows(self, kc_set, correct):
        offset = 0 if correct else self.n_kcs
        return [offset + k for k in kc_set]

    def _input_matrix(self, items):
        """(B, 2K) selection matrix averaging each row's labeled tag rows."""
        sel = np.zeros((len(items), 2 * self.n_kcs))
        for b, (kc_set, correct) in enumerate(items):
            rows = self.input_rows(kc_set, correct)
            if rows:
                sel[b, rows] = 1.0 / len(rows)
        return sel

    def _advance(self, h, c, sel):
        x = T.matmul(T.Tensor(sel), self.emb)
        h2, c2 = T.lstm_step(x, h, c, self.lstm)
        out = T.add(T.matmul(h2, self.w_out), T.broadcast_rows(self.b_out, sel.shape[0]))
        return h2, c2, T.sigmoid(out)

    def initial_state(self):
        d = self.cfg.hidden_dim
        probs = 1.0 / (1.0 + np.exp(-self.b_out.values[0]))
        return DktState(np.zeros((1, d)), np.zeros((1, d)), probs)

    def step(self, state, kc_set, correct):
        """Advance one interaction; returns (new state, next-step tag probabilities)."""
        (new_state,) = self.step_many(state, [(kc_set, correct)])
        return new_state, new_state.probs

    def step_many(self, state, items):
        """Advance several hypothetical branches of the same state at once."""
        for kc_set, _ in items:
            if not list(kc_set):
                raise DktError("empty tag set")
        n = len(items)
        sel = self._input_matrix(items)
        h = T.Tensor(np.repeat(state.h, n, axis=0))
        c = T.Tensor(np.repeat(state.c, n, axis=0))
        h2, c2, probs = self._advance(h, c, sel)
        return [
            DktState(h2.values[b : b + 1].copy(), c2.values[b : b + 1].copy(), probs.values[b].copy())
            for b in range(n)
        ]

    # -- batched sequence processing --------------------------------------

    def _sequence_masks(self, sequences, qmatrix):
        n = len(sequences)
        steps = max(len(s) for s in sequences)
        per_step = []
        for t in range(steps):
            items = []
            wts = np.zeros((n, self.n_kcs))
            yvec = np.zeros(n)
            mask = np.zeros(n)
            for b, seq in enumerate(sequences):
                if t < len(seq):
                    it = seq[t]
                    tags = list(qmatrix[it.exercise_id])
                    items.append((tags, it.correct))
                    if t >= 1 and tags:
                        wts[b, tags] = 1.0 / len(tags)
                        yvec[b] = it.correct
                        mask[b] = 1.0
                else:
                    items.append(((), 0))
            per_step.append((self._input_matrix(items), wts, yvec, mask))
        return per_step

    def _batch_loss(self, per_step, n_rows):
        """Mean one-step-ahead cross-entropy over the scored events."""
        d = self.cfg.hidden_dim
        h = T.Tensor(np.zeros((n_rows, d)))
        c = T.Tensor(np.zeros((n_rows, d)))
        probs = None
        total = None
        events = 0
        for sel, wts, yvec, mask in per_step:
            if probs is not None and mask.any():
                events += int(mask.sum())
                pred = T.reduce_sum(T.mul(probs, T.Tensor(wts)), axis=1)
                pred = T.clip(pred, 1e-7, 1.0 - 1e-7)
                nll = T.scale(
                    T.add(
                        T.mul(T.Tensor(yvec), T.log(pred)),
                        T.mul(T.Tensor(1.0 - yvec), T.log(T.add(T.scale(pred, -1.0), 1.0))),
                    ),
                    -1.0,
                )
                term = T.reduce_sum(T.mul(nll, T.Tensor(mask)))
                total = term if total is None else T.add(total, term)
            h, c, probs = self._advance(h, c, sel)
        if events == 0:
            raise DktError("batch has no scorable events (all sequences too short)")
        return T.scale(total, 1.0 / events), events

    def predict_sequences(self, sequences, qmatrix, batch_size=None):
        """One-step-ahead (prediction, label) pairs for interactions t >= 2."""
        batch_size = batch_size or self.cfg.batch_size
        preds, labels = [], []
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start : start + batch_size]
            per_step = self._sequence_masks(chunk, qmatrix)
            n = len(chunk)
            h = np.zeros((n, self.cfg.hidden_dim))
            c = np.zeros((n, self.cfg.hidden_dim))
            probs = None
            for sel, wts, yvec, mask in per_step:
                if probs is not None and mask.any():
                    pred = (probs * wts).sum(axis=1)
                    for b in np.nonzero(mask)[0]:
                        preds.append(float(pred[b]))
                        labels.append(int(yvec[b]))
                ht, ct, pt = self._advance(T.Tensor(h), T.Tensor(c), sel)
                h, c, probs = ht.values, ct.values, pt.values
        return np.asarray(preds), np.asarray(labels)

    def evaluate_auc(self, ds):
        preds, labels = self.predict_sequences(ds.sequences, ds.qmatrix)
        if preds.size == 0:
            raise DktError("no scorable events")
        return auc(preds, labels)

    # -- persistence -------------------------------------------------------

    def named_arrays(self):
        arrays = {"emb": self.emb.values, "w_out": self.w_out.values, "b_out": self.b_out.values}
        arrays.update(self.lstm.named_arrays("lstm."))
        return arrays

    def snapshot(self):
        return {k: v.copy() for k, v in self.named_arrays().items()}

    def restore(self, snap):
        for k, v in self.named_arrays().items():
            v[...] = snap[k]

    def save(self, path):
        meta = {
            "kind": "dkt",
            "n_kcs": self.n_kcs,
            "emb_dim": self.cfg.emb_dim,
            "hidden_dim": self.cfg.hidden_dim,
        }
        T.save_checkpoint(path, self.named_arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = T.load_checkpoint(path)
        if meta.get("kind") != "dkt":
            raise DktError(f"{path}: not a DKT checkpoint")
        model = cls(meta["n_kcs"], DktConfig(emb_dim=meta["emb_dim"], hidden_dim=meta["hidden_dim"]))
        model.restore(arrays)
        return model


def train_dkt(train_ds, val_ds, cfg: DktConfig = DktConfig(), seed=0, log=None):
    """Adam training with early stopping on validation AUC.

    Returns (model, history) where history rows are
    (epoch, train_loss, val_auc).
    """
    if not train_ds.sequences:
        raise DktError("empty training set")
    model = DktModel(train_ds.n_kcs, cfg, seed=seed)
    opt = T.Adam(model.params(), lr=cfg.lr)
    rng = rng_for(seed, "dkt-train")
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
                loss, events = model._batch_loss(per_step, len(batch))
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
