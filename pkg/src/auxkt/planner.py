"""Depth-1 expectimax exercise recommendation over tag universes.

A planner view exposes per-tag correctness probabilities and hypothetical
single-tag practice rollouts on top of a trained tracing model. Each
candidate tag is scored by the probability-weighted mean predicted
mastery after simulating both response outcomes; the winning tag's
exercises form the candidate pool. The dual variant runs one planner
over human tags and one over learned auxiliary tags and intersects their
exercise pools, falling back to the human pool when the intersection is
empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import aggregate_rl


class PlannerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# planner views over trained models


class DktPlannerView:
    """Plan over the tag universe of a trained DKT model."""

    def __init__(self, model, qmatrix):
        self.model = model
        self.qmatrix = qmatrix
        self.universe = model.n_kcs

    def initial_state(self):
        return self.model.initial_state()

    def kc_probs(self, state):
        return state.probs

    def advance_kc_many(self, state, items):
        branches = self.model.step_many(state, [([kc], correct) for kc, correct in items])
        return branches

    def observe_exercise(self, state, exercise_id, correct):
        tags = list(self.qmatrix.get(exercise_id, ()))
        if not tags:
            return state
        new_state, _ = self.model.step(state, tags, correct)
        return new_state


class SparsePlannerView:
    """Plan over one half (human or auxiliary) of a sparse-code KT model.

    Hypothetical practice of a human tag advances the model with that tag
    and an empty code; practice of an auxiliary tag advances with a
    singleton code and no human tags. Observations advance with the
    exercise's human tags plus its current code, so two views sharing one
    model state stay consistent.
    """

    def __init__(self, model, part, qmatrix):
        if part not in ("human", "aux"):
            raise PlannerError(f"unknown part {part!r}")
        self.model = model
        self.part = part
        self.qmatrix = qmatrix
        self.universe = model.n_kcs if part == "human" else model.cfg.n_aux
        self._aux_sets = model.aux_sets()

    def initial_state(self):
        return self.model.initial_state()

    def kc_probs(self, state):
        n = self.model.n_kcs
        logits = state.out[:n] if self.part == "human" else state.out[n:]
        return 1.0 / (1.0 + np.exp(-logits))

    def advance_kc_many(self, state, items):
        if self.part == "human":
            branch_items = [([kc], (), correct) for kc, correct in items]
        else:
            branch_items = [([], (kc,), correct) for kc, correct in items]
        return self.model.advance_many(state, branch_items)

    def observe_exercise(self, state, exercise_id, correct):
        tags = list(self.qmatrix.get(exercise_id, ()))
        return self.model.advance(state, tags, self._aux_sets[exercise_id], correct)


# ---------------------------------------------------------------------------
# expectimax core


def expectimax_rank(view, state, candidates=None):
    """Rank candidate tags by expected post-practice mean mastery.

    Returns [(tag, expected_score)] sorted best-first with ties broken
    toward the lowest tag index. Never mutates ``state``.
    """
    if candidates is None:
        candidates = range(view.universe)
    candidates = list(candidates)
    if not candidates:
        raise PlannerError("no candidate tags")
    probs = view.kc_probs(state)
    branches = [(k, 1) for k in candidates] + [(k, 0) for k in candidates]
    states = view.advance_kc_many(state, branches)
    n = len(candidates)
    scored = []
    for i, k in enumerate(candidates):
        p = float(probs[k])
        s_plus = float(np.mean(view.kc_probs(states[i])))
        s_minus = float(np.mean(view.kc_probs(states[n + i])))
        scored.append((k, p * s_plus + (1.0 - p) * s_minus))
    scored.sort(key=lambda ks: (-ks[1], ks[0]))
    return scored


def expectimax_kc(view, state, candidates=None):
    """The single best tag (see expectimax_rank)."""
    return expectimax_rank(view, state, candidates)[0][0]


def exercises_by_tag(qmatrix, universe):
    table = {k: [] for k in range(universe)}
    for ex in sorted(qmatrix):
        for k in qmatrix[ex]:
            table[k].append(ex)
    return table


def pick_exercise(ranked, tag_exercises, rng):
    """Uniform seeded choice among the best rankable tag's exercises.

    Tags without exercises fall through to the next-best candidate.
    """
    for kc, _ in ranked:
        pool = tag_exercises.get(kc, ())
        if pool:
            return int(rng.choice(pool)), kc
    raise PlannerError("no ranked tag has exercises")


@dataclass
class DualStats:
    steps: int = 0
    fallbacks: int = 0
    human_pool_sizes: list = field(default_factory=list)
    dual_pool_sizes: list = field(default_factory=list)

    def fallback_rate(self):
        return self.fallbacks / self.steps if self.steps else 0.0


def pick_exercise_dual(ranked_h, ranked_a, human_exercises, aux_exercises, rng, stats=None):
    """Intersect the winning human tag's pool with the winning auxiliary
    tag's pool; fall back to the human pool when the intersection is empty."""
    for kc_h, _ in ranked_h:
        pool_h = human_exercises.get(kc_h, ())
        if pool_h:
            break
    else:
        raise PlannerError("no human tag has exercises")
    kc_a = ranked_a[0][0]
    pool_a = set(aux_exercises.get(kc_a, ()))
    dual_pool = [ex for ex in pool_h if ex in pool_a]
    fallback = not dual_pool
    pool = pool_h if fallback else dual_pool
    if stats is not None:
        stats.steps += 1
        stats.fallbacks += int(fallback)
        stats.human_pool_sizes.append(len(pool_h))
        stats.dual_pool_sizes.append(len(dual_pool) if dual_pool else len(pool_h))
    return int(rng.choice(pool)), (kc_h, kc_a, fallback)


# ---------------------------------------------------------------------------
# episode agents


class ExpectimaxAgent:
    """Single-universe planner agent for environment episodes."""

    def __init__(self, view, qmatrix, rng):
        self.view = view
        self.state = view.initial_state()
        self.tag_exercises = exercises_by_tag(qmatrix, view.universe)
        self.rng = rng

    def act(self):
        ranked = expectimax_rank(self.view, self.state)
        exercise, _ = pick_exercise(ranked, self.tag_exercises, self.rng)
        return exercise

    def observe(self, exercise, correct):
        self.state = self.view.observe_exercise(self.state, exercise, correct)


class DualExpectimaxAgent:
    """Two planner views (human tags, auxiliary tags) with intersection filtering.

    When both views wrap the same underlying model (shared state), pass
    ``shared=True`` so each observation advances the state only once.
    """

    def __init__(self, human_view, aux_view, qmatrix, aux_qmatrix, rng, shared=False):
        self.human_view = human_view
        self.aux_view = aux_view
        self.shared = shared
        self.human_state = human_view.initial_state()
        self.aux_state = self.human_state if shared else aux_view.initial_state()
        self.human_exercises = exercises_by_tag(qmatrix, human_view.universe)
        self.aux_exercises = exercises_by_tag(aux_qmatrix, aux_view.universe)
        self.rng = rng
        self.stats = DualStats()

    def act(self):
        ranked_h = expectimax_rank(self.human_view, self.human_state)
        ranked_a = expectimax_rank(self.aux_view, self.aux_state)
        exercise, _ = pick_exercise_dual(
            ranked_h, ranked_a, self.human_exercises, self.aux_exercises, self.rng, self.stats
        )
        return exercise

    def observe(self, exercise, correct):
        self.human_state = self.human_view.observe_exercise(self.human_state, exercise, correct)
        if self.shared:
            self.aux_state = self.human_state
        else:
            self.aux_state = self.aux_view.observe_exercise(self.aux_state, exercise, correct)


class RandomAgent:
    def __init__(self, n_exercises, rng):
        self.n_exercises = n_exercises
        self.rng = rng

    def act(self):
        return int(self.rng.integers(self.n_exercises))

    def observe(self, exercise, correct):
        pass


def run_episodes(env, make_agent, n_students, seed_stream):
    """Roll one episode per student; returns (per-student rows, summary, agents).

    Rows are (student_index, s_pre, s_post, gain, mean_reward).
    """
    per_student = []
    agents = []
    for i in range(n_students):
        episode_seed = seed_stream(i)
        ctx = env.reset(student_seed=episode_seed)
        agent = make_agent(i)
        agents.append(agent)
        rewards = []
        while not ctx.done:
            exercise = agent.act()
            result = env.step(ctx, exercise)
            agent.observe(*result.observation)
            rewards.append(result.reward)
        per_student.append((ctx.s_pre, env.post_test(ctx), rewards))
    summary = aggregate_rl(per_student)
    return per_student, summary, agents
