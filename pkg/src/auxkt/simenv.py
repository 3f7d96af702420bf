"""Episode interface around the ground-truth generative student.

The environment is a black box to policies: actions are exercise ids,
observations are (exercise, sampled correctness) pairs, and the reward
after each step is the fraction of probe exercises the student could
currently answer (true probability >= 0.5), or the mean true probability
when configured with ``reward_mode="mean_prob"``. Pre/post test scores
are always mean true probabilities over the probe set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GroundTruth, StudentSim
from .util import rng_for


class EnvError(ValueError):
    pass


REWARD_MODES = ("threshold", "mean_prob")


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 140
    reward_mode: str = "threshold"
    probe: tuple | None = None  # None = every exercise

    def __post_init__(self):
        if self.horizon < 1:
            raise EnvError(f"horizon must be >= 1, got {self.horizon}")
        if self.reward_mode not in REWARD_MODES:
            raise EnvError(f"reward_mode must be one of {REWARD_MODES}")


@dataclass(frozen=True)
class EnvStep:
    observation: tuple  # (exercise_id, correct)
    reward: float
    done: bool


@dataclass
class EpisodeContext:
    student: StudentSim
    rng: np.random.Generator
    t: int = 0
    done: bool = False
    s_pre: float = 0.0


class SimEnv:
    def __init__(self, gt: GroundTruth, config: EnvConfig = EnvConfig()):
        self.gt = gt
        self.config = config
        self.n_exercises = gt.n_exercises()
        probe = config.probe if config.probe is not None else tuple(range(self.n_exercises))
        if not probe:
            raise EnvError("probe set must be non-empty")
        if any(not 0 <= e < self.n_exercises for e in probe):
            raise EnvError("probe contains unknown exercises")
        self.probe = tuple(probe)

    # -- scores ----------------------------------------------------------

    def _true_probs(self, student):
        return np.array([student.true_prob(self.gt, e) for e in self.probe])

    def score(self, student):
        """Mean true answer probability over the probe set."""
        return float(self._true_probs(student).mean())

    def reward(self, student):
        probs = self._true_probs(student)
        if self.config.reward_mode == "threshold":
            return float((probs >= 0.5).mean())
        return float(probs.mean())

    # -- episode interface -------------------------------------------------

    def reset(self, student_seed):
        """Sample a fresh student from the ground-truth priors."""
        rng = rng_for(student_seed, "env-episode")
        student = StudentSim(self.gt, rng)
        ctx = EpisodeContext(student=student, rng=rng)
        ctx.s_pre = self.score(student)
        return ctx

    def step(self, ctx, exercise_id):
        if ctx.done:
            raise EnvError("episode already finished")
        if not 0 <= exercise_id < self.n_exercises:
            raise EnvError(f"unknown exercise {exercise_id} at step {ctx.t}")
        correct = ctx.student.answer(self.gt, exercise_id, ctx.rng)
        ctx.student.practice(self.gt, exercise_id, ctx.rng)
        ctx.t += 1
        ctx.done = ctx.t >= self.config.horizon
        return EnvStep(observation=(exercise_id, correct), reward=self.reward(ctx.student), done=ctx.done)

    def post_test(self, ctx):
        if not ctx.done:
            raise EnvError("post_test called mid-episode")
        return self.score(ctx.student)


def env_from_files(gt_path, horizon=140, reward_mode="threshold", probe="all"):
    """Build an environment from a ground-truth JSON plus config values."""
    gt = GroundTruth.load_json(gt_path)
    probe_set = None
    if probe not in ("all", "", None):
        probe_set = tuple(int(p) for p in str(probe).split(";"))
    return SimEnv(gt, EnvConfig(horizon=int(horizon), reward_mode=reward_mode, probe=probe_set))
