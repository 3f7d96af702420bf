"""Two-state mastery HMM per skill tag with guessing, slipping and forgetting.

Prediction runs a forward filter in plain numpy. Training ascends the
log-likelihood by SGD on logit-parameterized probabilities, with the
filter unrolled through the autodiff engine. Exercises tagged with
several skills update each chain independently; the exercise-level
prediction (and the per-interaction likelihood term) is the mean of the
per-skill predictions, one Bernoulli term per interaction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .metrics import auc
from .util import format_float, rng_for


class BktError(ValueError):
    pass


PARAM_NAMES = ("l0", "learn", "guess", "slip", "forget")
INIT_PROBS = (0.3, 0.3, 0.2, 0.1, 0.05)
_EPS = 1e-12


def _logit(p):
    return float(np.log(p / (1.0 - p)))


def _expit(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class BktState:
    """Mastery beliefs for one student, one entry per skill tag."""

    mastery: np.ndarray

    def copy(self):
        return BktState(self.mastery.copy())


class BktModel:
    """Per-tag probabilities {l0, learn, guess, slip, forget}, stored as logits."""

    def __init__(self, n_kcs, init_probs=INIT_PROBS):
        self.n_kcs = n_kcs
        self.logits = np.tile([_logit(p) for p in init_probs], (n_kcs, 1))

    def probs(self):
        """(n_kcs, 5) matrix of probabilities in PARAM_NAMES column order."""
        return _expit(self.logits)

    def initial_state(self):
        return BktState(self.probs()[:, 0].copy())

    def _check_kc(self, kc):
        if not 0 <= kc < self.n_kcs:
            raise BktError(f"unknown KC {kc} (universe size {self.n_kcs})")

    def predict_correct(self, state, kc):
        """P(correct now) = p * (1 - slip) + (1 - p) * guess."""
        self._check_kc(kc)
        _, _, g, s, _ = self.probs()[kc]
        p = state.mastery[kc]
        return float(p * (1.0 - s) + (1.0 - p) * g)

    def observe(self, state, kc, correct):
        """Bayes-update the tag's mastery from one response, then transition."""
        self._check_kc(kc)
        if correct not in (0, 1):
            raise BktError(f"correct must be 0/1, got {correct}")
        _, t, g, s, f = self.probs()[kc]
        p = state.mastery[kc]
        if correct:
            post = p * (1.0 - s) / max(p * (1.0 - s) + (1.0 - p) * g, _EPS)
        else:
            post = p * s / max(p * s + (1.0 - p) * (1.0 - g), _EPS)
        new = state.copy()
        new.mastery[kc] = post * (1.0 - f) + (1.0 - post) * t
        return new

    # -- sequence-level filtering -------------------------------------------

    def filter_sequence(self, seq, qmatrix):
        """One-step-ahead predictions for each interaction with >= 1 tag.

        Returns (predictions, labels); untagged exercises are skipped
        entirely (no prediction, no update).
        """
        probs = self.probs()
        t, g, s, f = probs[:, 1], probs[:, 2], probs[:, 3], probs[:, 4]
        p = probs[:, 0].copy()
        preds, labels = [], []
        for it in seq:
            tags = list(qmatrix[it.exercise_id])
            if not tags:
                continue
            pc = p[tags] * (1.0 - s[tags]) + (1.0 - p[tags]) * g[tags]
            preds.append(float(pc.mean()))
            labels.append(it.correct)
            if it.correct:
                post = p[tags] * (1.0 - s[tags]) / np.maximum(pc, _EPS)
            else:
                post = p[tags] * s[tags] / np.maximum(1.0 - pc, _EPS)
            p[tags] = post * (1.0 - f[tags]) + (1.0 - post) * t[tags]
        return preds, labels

    def sequence_loglik(self, seq, qmatrix):
        """Sum of log one-step-ahead probabilities of the observed responses."""
        preds, labels = self.filter_sequence(seq, qmatrix)
        total = 0.0
        for p, y in zip(preds, labels):
            total += np.log(max(p if y else 1.0 - p, _EPS))
        return float(total)

    def dataset_loglik(self, ds):
        return sum(self.sequence_loglik(seq, ds.qmatrix) for seq in ds.sequences)

    def predict_dataset(self, ds):
        preds, labels = [], []
        for seq in ds.sequences:
            p, y = self.filter_sequence(seq, ds.qmatrix)
            preds += p
            labels += y
        return np.asarray(preds), np.asarray(labels)

    # -- persistence ---------------------------------------------------------

    def export_text(self, path):
        """Full-precision parameter table; logits are canonical on import."""
        cols = [f"p_{n}" for n in PARAM_NAMES] + [f"logit_{n}" for n in PARAM_NAMES]
        probs = self.probs()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("kc," + ",".join(cols) + "\n")
            for k in range(self.n_kcs):
                row = [format_float(x) for x in probs[k]] + [format_float(x) for x in self.logits[k]]
                fh.write(f"{k}," + ",".join(row) + "\n")

    @classmethod
    def import_text(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        if header[0] != "kc" or len(header) != 11:
            raise BktError(f"{path}: unexpected parameter table header")
        model = cls(len(rows))
        for row in rows:
            k = int(row[0])
            model.logits[k] = [float(x) for x in row[6:11]]
        return model


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class BktTrainConfig:
    lr: float = 0.01
    epochs: int = 30
    batch_size: int = 128


def _batch_masks(sequences, qmatrix, n_kcs):
    """Constant per-step masks for a batch of sequences.

    For each time step: update mask (B, K), normalized prediction weights
    (B, K), per-row label replicated across K, label vector (B,) and the
    loss mask (active rows with >= 1 tag).
    """
    n = len(sequences)
    steps = max(len(s) for s in sequences)
    out = []
    for t in range(steps):
        upd = np.zeros((n, n_kcs))
        wts = np.zeros((n, n_kcs))
        ymat = np.zeros((n, n_kcs))
        yvec = np.zeros(n)
        mask = np.zeros(n)
        for b, seq in enumerate(sequences):
            if t >= len(seq):
                continue
            it = seq[t]
            tags = list(qmatrix[it.exercise_id])
            if not tags:
                continue
            upd[b, tags] = 1.0
            wts[b, tags] = 1.0 / len(tags)
            ymat[b, :] = it.correct
            yvec[b] = it.correct
            mask[b] = 1.0
        out.append((upd, wts, ymat, yvec, mask))
    return out


def _batch_nll(logit_params, masks, n_rows):
    """Unrolled filter over a batch; returns (mean NLL tensor, event count)."""
    ones = T.Tensor(np.ones((n_rows, 1)))
    l0, learn, guess, slip, forget = (
        T.matmul(ones, T.sigmoid(p)) for p in logit_params
    )
    one = 1.0
    not_slip = T.add(T.scale(slip, -1.0), one)
    not_forget = T.add(T.scale(forget, -1.0), one)
    p = l0
    total = None
    events = 0
    for upd, wts, ymat, yvec, mask in masks:
        events += int(mask.sum())
        not_p = T.add(T.scale(p, -1.0), one)
        pc = T.add(T.mul(p, not_slip), T.mul(not_p, guess))
        pred = T.reduce_sum(T.mul(pc, T.Tensor(wts)), axis=1)
        pred = T.clip(pred, 1e-7, 1.0 - 1e-7)
        y = T.Tensor(yvec)
        not_y = T.Tensor(1.0 - yvec)
        nll = T.scale(
            T.add(T.mul(y, T.log(pred)), T.mul(not_y, T.log(T.add(T.scale(pred, -1.0), one)))),
            -1.0,
        )
        term = T.reduce_sum(T.mul(nll, T.Tensor(mask)))
        total = term if total is None else T.add(total, term)

        post_c = T.div(T.mul(p, not_slip), pc)
        post_w = T.div(T.mul(p, slip), T.add(T.scale(pc, -1.0), one))
        ym = T.Tensor(ymat)
        post = T.add(T.mul(ym, post_c), T.mul(T.Tensor(1.0 - ymat), post_w))
        trans = T.add(T.mul(post, not_forget), T.mul(T.add(T.scale(post, -1.0), one), learn))
        um = T.Tensor(upd)
        p = T.add(T.mul(um, trans), T.mul(T.Tensor(1.0 - upd), p))
    if events == 0:
        raise BktError("batch contains no scorable interactions")
    return T.scale(total, 1.0 / events), events


def train_bkt(ds, cfg: BktTrainConfig = BktTrainConfig(), seed=0):
    """SGD ascent on total log-likelihood; deterministic under the seed.

    Returns the trained model and the per-epoch mean train log-likelihood
    history (computed with the plain filter after each epoch).
    """
    if not ds.sequences:
        raise BktError("empty dataset")
    model = BktModel(ds.n_kcs)
    if cfg.epochs == 0:
        return model, []
    params = [
        T.Tensor(model.logits[:, j].reshape(1, -1).copy(), requires_grad=True) for j in range(5)
    ]
    opt = T.Sgd(params, lr=cfg.lr)
    rng = rng_for(seed, "bkt-train")
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(ds.sequences))
        for start in range(0, len(order), cfg.batch_size):
            batch = [ds.sequences[i] for i in order[start : start + cfg.batch_size]]
            masks = _batch_masks(batch, ds.qmatrix, ds.n_kcs)
            opt.zero_grad()
            with T.Graph() as g:
                loss, _ = _batch_nll(params, masks, len(batch))
                g.backward(loss)
            opt.step()
        for j, p in enumerate(params):
            model.logits[:, j] = p.values[0]
        history.append(model.dataset_loglik(ds) / max(ds.n_interactions(), 1))
    return model, history


def evaluate_auc(model, ds):
    """AUC of one-step-ahead predictions over every scorable interaction."""
    preds, labels = model.predict_dataset(ds)
    if preds.size == 0:
        raise BktError("no scorable interactions in the dataset")
    return auc(preds, labels)
