"""Evaluation metrics: rank-based AUC, normalized learning gain, RL aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


def auc(scores, labels):
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Equals P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg),
    computed exactly with average ranks for ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length 1-d arrays")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise MetricError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    rank_sum_pos = float(ranks[labels == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _average_ranks(values):
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def normalized_gain(s_pre, s_post):
    """Achieved fraction of the maximum possible improvement."""
    if not 0.0 <= s_pre < 1.0:
        raise MetricError(f"pre-test score must be in [0, 1), got {s_pre}")
    if not 0.0 <= s_post <= 1.0:
        raise MetricError(f"post-test score must be in [0, 1], got {s_post}")
    return (s_post - s_pre) / (1.0 - s_pre)


@dataclass(frozen=True)
class RlSummary:
    gain: float          # mean normalized gain across students
    mean_reward: float   # mean over students of per-student mean reward
    reward_std: float    # across-student standard deviation of mean reward
    n_students: int


def aggregate_rl(per_student):
    """Summarize (s_pre, s_post, rewards) triples across simulated students."""
    if not per_student:
        raise MetricError("no students to aggregate")
    gains = []
    means = []
    for s_pre, s_post, rewards in per_student:
        gains.append(normalized_gain(s_pre, s_post))
        means.append(float(np.mean(rewards)))
    means = np.asarray(means)
    return RlSummary(
        gain=float(np.mean(gains)),
        mean_reward=float(np.mean(means)),
        reward_std=float(np.std(means)),
        n_students=len(per_student),
    )
