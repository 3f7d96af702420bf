"""Interaction data model: ingestion, encodings, splits, synthetic generation.

The synthetic generator plants hidden sub-skills underneath coarse visible
skill tags and samples responses from a multi-sub-skill mastery process
with guessing, slipping, learning and forgetting. The same generative
student model backs the simulated environment, so recommendation
experiments can be checked against exact belief propagation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .util import rng_for


class DataError(ValueError):
    pass


MAX_SEQUENCE_LEN = 200
MIN_SEQUENCE_LEN = 3


@dataclass(frozen=True)
class Interaction:
    student_id: str
    exercise_id: int  # contiguous re-indexed id
    correct: int
    order_index: int


@dataclass
class Dataset:
    """Sequences plus the exercise -> skill-tag mapping they refer to.

    ``qmatrix`` maps every exercise id to a sorted tuple of tag indices in
    [0, n_kcs). After augmentation the universe is the disjoint union:
    original tags keep indices [0, n_base_kcs) and learned auxiliary tags
    occupy [n_base_kcs, n_kcs).
    """

    sequences: list  # list[list[Interaction]], one per student (or chunk)
    qmatrix: dict
    n_kcs: int
    n_exercises: int
    exercise_labels: list = field(default_factory=list)  # re-indexed id -> original label
    kc_labels: list = field(default_factory=list)
    n_base_kcs: int | None = None  # set on augmented datasets
    n_aux: int = 0
    aux_qmatrix: dict | None = None

    def __post_init__(self):
        if self.n_base_kcs is None:
            self.n_base_kcs = self.n_kcs

    def n_interactions(self):
        return sum(len(s) for s in self.sequences)

    def student_ids(self):
        seen = dict.fromkeys(seq[0].student_id for seq in self.sequences if seq)
        return list(seen)

    def validate(self):
        for seq in self.sequences:
            prev = -1
            for it in seq:
                if it.exercise_id not in self.qmatrix:
                    raise DataError(f"exercise {it.exercise_id} missing from the q-matrix")
                if it.correct not in (0, 1):
                    raise DataError(f"correct must be 0/1, got {it.correct}")
                if it.order_index <= prev:
                    raise DataError("order_index must be strictly increasing within a student")
                prev = it.order_index
        for ex, tags in self.qmatrix.items():
            if any(not 0 <= t < self.n_kcs for t in tags):
                raise DataError(f"exercise {ex} has tag outside [0, {self.n_kcs})")
        return self


# ---------------------------------------------------------------------------
# CSV ingestion

CSV_HEADER = ["student_id", "exercise_id", "kc_ids", "correct", "order_index"]
AUX_HEADER = ["exercise_id", "aux_kc_ids"]
KC_SEP = ";"


@dataclass(frozen=True)
class CsvFormat:
    """Column adapter for interaction logs from different corpora."""

    student_col: str = "student_id"
    exercise_col: str = "exercise_id"
    kc_col: str = "kc_ids"
    correct_col: str = "correct"
    order_col: str = "order_index"
    kc_sep: str = KC_SEP
    delimiter: str = ","


CSV_FORMATS = {
    "default": CsvFormat(),
    "assistments2009": CsvFormat(
        student_col="user_id",
        exercise_col="problem_id",
        kc_col="skill_id",
        correct_col="correct",
        order_col="order_id",
    ),
}


def load_csv(path, fmt: CsvFormat = CSV_FORMATS["default"], preprocess=True):
    """Read an interaction log into a Dataset with contiguous ids.

    Exercises are re-indexed in order of first appearance; skill tags are
    re-indexed by sorted original integer id. Mapping tables are retained
    on the dataset for export.
    """
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=fmt.delimiter)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        required = {fmt.student_col, fmt.exercise_col, fmt.kc_col, fmt.correct_col, fmt.order_col}
        missing = required - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: header is missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            rows.append((lineno, row))
    if not rows:
        raise DataError(f"{path}: no interaction rows")

    per_student = {}
    raw_kcs = set()
    exercise_order = {}
    parsed = []
    for lineno, row in rows:
        try:
            student = row[fmt.student_col].strip()
            exercise = row[fmt.exercise_col].strip()
            correct = int(row[fmt.correct_col])
            order = int(row[fmt.order_col])
            kc_field = (row[fmt.kc_col] or "").strip()
            kcs = tuple(int(k) for k in kc_field.split(fmt.kc_sep)) if kc_field else ()
        except (TypeError, ValueError, KeyError, AttributeError) as err:
            raise DataError(f"{path}:{lineno}: malformed row ({err})") from None
        if correct not in (0, 1):
            raise DataError(f"{path}:{lineno}: correct must be 0 or 1, got {correct}")
        if order < 0:
            raise DataError(f"{path}:{lineno}: order_index must be non-negative")
        if any(k < 0 for k in kcs):
            raise DataError(f"{path}:{lineno}: unknown KC id (negative)")
        raw_kcs.update(kcs)
        if exercise not in exercise_order:
            exercise_order[exercise] = len(exercise_order)
        parsed.append((student, exercise, kcs, correct, order, lineno))

    kc_labels = sorted(raw_kcs)
    kc_index = {k: i for i, k in enumerate(kc_labels)}
    exercise_labels = list(exercise_order)
    ex_index = exercise_order

    qmatrix = {}
    for student, exercise, kcs, correct, order, lineno in parsed:
        ex = ex_index[exercise]
        tags = tuple(sorted(kc_index[k] for k in kcs))
        if ex in qmatrix and qmatrix[ex] != tags:
            raise DataError(f"{path}:{lineno}: exercise {exercise} re-tagged inconsistently")
        qmatrix[ex] = tags
        per_student.setdefault(student, []).append(
            Interaction(student, ex, correct, order)
        )

    sequences = []
    for student in dict.fromkeys(s for s, *_ in parsed):
        seq = sorted(per_student[student], key=lambda it: it.order_index)
        prev = -1
        for it in seq:
            if it.order_index <= prev:
                raise DataError(f"{path}: student {student} has duplicate order_index {it.order_index}")
            prev = it.order_index
        sequences.append(seq)

    ds = Dataset(
        sequences=sequences,
        qmatrix=qmatrix,
        n_kcs=len(kc_labels),
        n_exercises=len(exercise_labels),
        exercise_labels=[str(x) for x in exercise_labels],
        kc_labels=[str(k) for k in kc_labels],
    )
    ds.validate()
    return preprocess_sequences(ds) if preprocess else ds


def preprocess_sequences(ds, max_len=MAX_SEQUENCE_LEN, min_len=MIN_SEQUENCE_LEN):
    """Chunk sequences longer than max_len into consecutive windows and drop
    sequences shorter than min_len."""
    chunks = []
    for seq in ds.sequences:
        for start in range(0, len(seq), max_len):
            window = seq[start : start + max_len]
            if len(window) >= min_len:
                chunks.append(window)
    return replace(ds, sequences=chunks)


def export_csv(ds, path):
    """Write a Dataset back out using its retained original labels."""
    kc_labels = ds.kc_labels or [str(i) for i in range(ds.n_kcs)]
    ex_labels = ds.exercise_labels or [str(i) for i in range(ds.n_exercises)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for seq in ds.sequences:
            for it in seq:
                tags = KC_SEP.join(kc_labels[k] for k in ds.qmatrix[it.exercise_id])
                fh.write(
                    f"{it.student_id},{ex_labels[it.exercise_id]},{tags},{it.correct},{it.order_index}\n"
                )


def save_aux_csv(aux_qmatrix, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(AUX_HEADER) + "\n")
        for ex in sorted(aux_qmatrix):
            fh.write(f"{ex},{KC_SEP.join(str(a) for a in aux_qmatrix[ex])}\n")


def load_aux_csv(path):
    aux = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AUX_HEADER:
            raise DataError(f"{path}: expected header {','.join(AUX_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ex = int(row["exercise_id"])
                tags = row["aux_kc_ids"] or ""
                aux[ex] = tuple(sorted(int(a) for a in tags.split(KC_SEP))) if tags else ()
            except (TypeError, ValueError) as err:
                raise DataError(f"{path}:{lineno}: malformed row ({err})") from None
    return aux


# ---------------------------------------------------------------------------
# encodings


def encode_multihot(exercise_id, qmatrix, n_kcs):
    """Binary tag vector of an exercise over a universe of n_kcs tags."""
    if exercise_id not in qmatrix:
        raise DataError(f"unknown exercise {exercise_id}")
    out = np.zeros(n_kcs)
    for k in qmatrix[exercise_id]:
        out[k] = 1.0
    return out


def encode_labeled(u, y):
    """Concatenate the correct-half and incorrect-half copies of ``u``.

    The first half carries ``u`` when the response was correct (y=1), the
    second half carries it when incorrect (y=0); the other half is zero.
    """
    if y not in (0, 1):
        raise DataError(f"label must be 0/1, got {y}")
    u = np.asarray(u, dtype=np.float64)
    return np.concatenate([y * u, (1 - y) * u])


# ---------------------------------------------------------------------------
# splits


def split_dataset(ds, ratios=(0.8, 0.1, 0.1), seed=0):
    """Partition whole students into train/val/test, deterministically."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    students = ds.student_ids()
    if len(students) < 3:
        raise DataError(f"need at least 3 students to split, got {len(students)}")
    rng = rng_for(seed, "split")
    order = rng.permutation(len(students))
    shuffled = [students[i] for i in order]
    n = len(students)
    n_val = max(1, int(n * ratios[1]))
    n_test = max(1, int(n * ratios[2]))
    n_train = n - n_val - n_test
    groups = {
        s: "train" for s in shuffled[:n_train]
    }
    groups.update({s: "val" for s in shuffled[n_train : n_train + n_val]})
    groups.update({s: "test" for s in shuffled[n_train + n_val :]})

    def subset(name):
        seqs = [seq for seq in ds.sequences if groups[seq[0].student_id] == name]
        return replace(ds, sequences=seqs)

    return subset("train"), subset("val"), subset("test")


# ---------------------------------------------------------------------------
# augmentation with learned auxiliary tags


def augment_with_aux(ds, aux_qmatrix, n_aux=None):
    """Extend the tag universe with auxiliary tags at offset n_kcs.

    Exercises absent from ``aux_qmatrix`` simply get no auxiliary tags.
    """
    if n_aux is None:
        n_aux = 1 + max((max(tags) for tags in aux_qmatrix.values() if tags), default=-1)
    base = ds.n_kcs
    combined = {}
    for ex, tags in ds.qmatrix.items():
        aux = aux_qmatrix.get(ex, ())
        if any(not 0 <= a < n_aux for a in aux):
            raise DataError(f"exercise {ex}: auxiliary tag outside [0, {n_aux})")
        combined[ex] = tuple(sorted(tags) + sorted(base + a for a in aux))
    return replace(
        ds,
        qmatrix=combined,
        n_kcs=base + n_aux,
        n_base_kcs=base,
        n_aux=n_aux,
        aux_qmatrix=dict(aux_qmatrix),
    )


# ---------------------------------------------------------------------------
# synthetic data with known latent sub-skills


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the planted-structure generator.

    Visible tags are coarse areas; each exercise draws its hidden
    sub-skills from the pools of one or two areas. ``inert_area_frac``
    areas start essentially mastered, making their exercises low-value
    practice (useful as distractors in recommendation experiments).
    """

    max_hidden_per_exercise: int = 4
    second_area_prob: float = 0.3
    l0_range: tuple = (0.05, 0.35)
    learn_range: tuple = (0.1, 0.45)
    forget_range: tuple = (0.0, 0.06)
    guess_range: tuple = (0.05, 0.3)
    slip_range: tuple = (0.02, 0.15)
    student_jitter: float = 0.15
    inert_area_frac: float = 0.0
    inert_l0: float = 0.97


@dataclass
class GroundTruth:
    """Latent generative world behind a synthetic dataset."""

    n_subskills: int
    latent_tags: dict  # exercise -> tuple of hidden sub-skill indices
    base_l0: np.ndarray
    base_learn: np.ndarray
    base_forget: np.ndarray
    guess: np.ndarray  # per exercise
    slip: np.ndarray  # per exercise
    student_jitter: float = 0.0
    student_params: np.ndarray | None = None  # (n_students, n_subskills, 3): l0, learn, forget

    def n_exercises(self):
        return len(self.latent_tags)

    def sample_student_params(self, rng):
        """Per-sub-skill (l0, learn, forget) with multiplicative jitter."""
        base = np.stack([self.base_l0, self.base_learn, self.base_forget], axis=1)
        if self.student_jitter == 0.0:
            return base.copy()
        noise = 1.0 + self.student_jitter * rng.uniform(-1.0, 1.0, size=base.shape)
        return np.clip(base * noise, 0.0, 0.99)

    def save_json(self, path):
        payload = {
            "n_subskills": self.n_subskills,
            "latent_tags": {str(k): list(v) for k, v in sorted(self.latent_tags.items())},
            "base_l0": self.base_l0.tolist(),
            "base_learn": self.base_learn.tolist(),
            "base_forget": self.base_forget.tolist(),
            "guess": self.guess.tolist(),
            "slip": self.slip.tolist(),
            "student_jitter": self.student_jitter,
        }
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            n_subskills=payload["n_subskills"],
            latent_tags={int(k): tuple(v) for k, v in payload["latent_tags"].items()},
            base_l0=np.asarray(payload["base_l0"]),
            base_learn=np.asarray(payload["base_learn"]),
            base_forget=np.asarray(payload["base_forget"]),
            guess=np.asarray(payload["guess"]),
            slip=np.asarray(payload["slip"]),
            student_jitter=payload["student_jitter"],
        )


class StudentSim:
    """A sampled student: latent mastery bits over sub-skills plus their
    personal learning parameters. Transitions fire only on practice."""

    __slots__ = ("params", "mastered")

    def __init__(self, gt, rng, params=None):
        self.params = gt.sample_student_params(rng) if params is None else params
        self.mastered = rng.random(gt.n_subskills) < self.params[:, 0]

    def true_prob(self, gt, exercise_id):
        tags = gt.latent_tags[exercise_id]
        ok = all(self.mastered[t] for t in tags)
        return float(1.0 - gt.slip[exercise_id]) if ok else float(gt.guess[exercise_id])

    def answer(self, gt, exercise_id, rng):
        return int(rng.random() < self.true_prob(gt, exercise_id))

    def practice(self, gt, exercise_id, rng):
        for t in gt.latent_tags[exercise_id]:
            if self.mastered[t]:
                self.mastered[t] = rng.random() >= self.params[t, 2]
            else:
                self.mastered[t] = rng.random() < self.params[t, 1]


def initial_beliefs(params):
    return params[:, 0].copy()


def practice_beliefs(beliefs, params, tags):
    """Exact mastery-probability propagation for one practice opportunity."""
    out = beliefs.copy()
    idx = list(tags)
    p = beliefs[idx]
    out[idx] = p * (1.0 - params[idx, 2]) + (1.0 - p) * params[idx, 1]
    return out


def emission_prob(gt, beliefs, exercise_id):
    """P(correct) under independent sub-skill chains with the stated beliefs."""
    tags = gt.latent_tags[exercise_id]
    p_all = float(np.prod(beliefs[list(tags)])) if tags else 1.0
    return p_all * (1.0 - float(gt.slip[exercise_id])) + (1.0 - p_all) * float(gt.guess[exercise_id])


def generate_synthetic(
    n_students,
    n_exercises,
    n_visible_kcs,
    n_hidden_subskills,
    seq_len,
    seed,
    cfg: SyntheticConfig = SyntheticConfig(),
):
    """Build a (Dataset, GroundTruth) pair with planted hidden structure."""
    if min(n_students, n_exercises, n_visible_kcs, n_hidden_subskills, seq_len) < 1:
        raise DataError("all synthetic counts must be >= 1")
    rng = rng_for(seed, "synthetic")

    # hidden sub-skill j belongs to visible area j % V
    areas = [[] for _ in range(n_visible_kcs)]
    for j in range(n_hidden_subskills):
        areas[j % n_visible_kcs].append(j)

    n_inert = int(round(cfg.inert_area_frac * n_visible_kcs))
    inert_areas = set(rng.choice(n_visible_kcs, size=n_inert, replace=False).tolist()) if n_inert else set()

    base_l0 = rng.uniform(*cfg.l0_range, size=n_hidden_subskills)
    base_learn = rng.uniform(*cfg.learn_range, size=n_hidden_subskills)
    base_forget = rng.uniform(*cfg.forget_range, size=n_hidden_subskills)
    for a in inert_areas:
        base_l0[areas[a]] = cfg.inert_l0

    qmatrix = {}
    latent_tags = {}
    guess = rng.uniform(*cfg.guess_range, size=n_exercises)
    slip = rng.uniform(*cfg.slip_range, size=n_exercises)
    for ex in range(n_exercises):
        primary = int(rng.integers(n_visible_kcs))
        visible = {primary}
        if n_visible_kcs > 1 and rng.random() < cfg.second_area_prob:
            second = int(rng.integers(n_visible_kcs))
            if second != primary:
                visible.add(second)
        pool = sorted({s for a in visible for s in areas[a]})
        k = int(rng.integers(1, min(cfg.max_hidden_per_exercise, len(pool)) + 1))
        hidden = tuple(sorted(rng.choice(pool, size=k, replace=False).tolist()))
        qmatrix[ex] = tuple(sorted(visible))
        latent_tags[ex] = hidden

    gt = GroundTruth(
        n_subskills=n_hidden_subskills,
        latent_tags=latent_tags,
        base_l0=base_l0,
        base_learn=base_learn,
        base_forget=base_forget,
        guess=guess,
        slip=slip,
        student_jitter=cfg.student_jitter,
    )

    sequences = []
    student_params = np.empty((n_students, n_hidden_subskills, 3))
    for s in range(n_students):
        student = StudentSim(gt, rng)
        student_params[s] = student.params
        sid = f"s{s:05d}"
        seq = []
        for t in range(seq_len):
            ex = int(rng.integers(n_exercises))
            correct = student.answer(gt, ex, rng)
            seq.append(Interaction(sid, ex, correct, t))
            student.practice(gt, ex, rng)
        sequences.append(seq)
    gt.student_params = student_params

    ds = Dataset(
        sequences=sequences,
        qmatrix=qmatrix,
        n_kcs=n_visible_kcs,
        n_exercises=n_exercises,
        exercise_labels=[str(i) for i in range(n_exercises)],
        kc_labels=[str(i) for i in range(n_visible_kcs)],
    )
    ds.validate()
    return preprocess_sequences(ds), gt
