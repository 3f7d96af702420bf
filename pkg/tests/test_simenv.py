import numpy as np
import pytest

from auxkt import data as D
from auxkt.simenv import EnvConfig, EnvError, SimEnv
from auxkt.util import rng_for


def make_world(seed=0, cfg=None, n_exercises=8, n_hidden=6):
    cfg = cfg or D.SyntheticConfig(student_jitter=0.0)
    _, gt = D.generate_synthetic(1, n_exercises, 3, n_hidden, 4, seed=seed, cfg=cfg)
    return gt


class TestReset:
    def test_prior_one_gives_pretest_of_one_minus_slip(self):
        cfg = D.SyntheticConfig(l0_range=(1.0, 1.0), student_jitter=0.0)
        gt = make_world(seed=1, cfg=cfg)
        env = SimEnv(gt, EnvConfig(horizon=5))
        ctx = env.reset(student_seed=0)
        assert ctx.s_pre == pytest.approx(float((1.0 - gt.slip).mean()))

    def test_seeded_reset_reproducible(self):
        gt = make_world(seed=2)
        env = SimEnv(gt, EnvConfig(horizon=5))
        a = env.reset(student_seed=11)
        b = env.reset(student_seed=11)
        np.testing.assert_array_equal(a.student.mastered, b.student.mastered)
        np.testing.assert_array_equal(a.student.params, b.student.params)

    def test_distinct_seeds_give_distinct_students(self):
        gt = make_world(seed=3, n_hidden=12)
        env = SimEnv(gt, EnvConfig(horizon=5))
        distinct = 0
        for k in range(100):
            a = env.reset(student_seed=2 * k)
            b = env.reset(student_seed=2 * k + 1)
            if not np.array_equal(a.student.mastered, b.student.mastered):
                distinct += 1
        assert distinct >= 95


class TestStep:
    def test_certain_learning_locks_probe_contribution(self):
        cfg = D.SyntheticConfig(
            l0_range=(0.0, 0.0), learn_range=(1.0, 1.0), forget_range=(0.0, 0.0),
            slip_range=(0.0, 0.0), guess_range=(0.1, 0.1), student_jitter=0.0,
        )
        gt = make_world(seed=4, cfg=cfg)
        env = SimEnv(gt, EnvConfig(horizon=6))
        ctx = env.reset(student_seed=1)
        target = 0
        rewards = []
        for _ in range(6):
            rewards.append(env.step(ctx, target).reward)
        # the practiced exercise's sub-skills are mastered after one step and stay
        assert all(ctx.student.mastered[t] for t in gt.latent_tags[target])
        covered = [e for e in range(env.n_exercises)
                   if set(gt.latent_tags[e]) <= set(gt.latent_tags[target])]
        assert rewards[0] >= len(covered) / env.n_exercises - 1e-9
        assert all(r >= rewards[0] - 1e-9 for r in rewards)

    def test_certain_forgetting_collapses_after_next_practice(self):
        cfg = D.SyntheticConfig(
            l0_range=(0.0, 0.0), learn_range=(1.0, 1.0), forget_range=(1.0, 1.0),
            slip_range=(0.0, 0.0), guess_range=(0.1, 0.1), student_jitter=0.0,
        )
        gt = make_world(seed=5, cfg=cfg)
        env = SimEnv(gt, EnvConfig(horizon=4))
        ctx = env.reset(student_seed=2)
        env.step(ctx, 0)
        mastered_after_first = [ctx.student.mastered[t] for t in gt.latent_tags[0]]
        env.step(ctx, 0)
        # learn=1 then forget=1: mastery toggles off again on the second practice
        assert all(mastered_after_first)
        assert not any(ctx.student.mastered[t] for t in gt.latent_tags[0])

    def test_unknown_exercise_rejected(self):
        gt = make_world(seed=6)
        env = SimEnv(gt, EnvConfig(horizon=3))
        ctx = env.reset(student_seed=0)
        with pytest.raises(EnvError, match="unknown exercise"):
            env.step(ctx, 99)

    def test_episode_ends_at_horizon(self):
        gt = make_world(seed=7)
        env = SimEnv(gt, EnvConfig(horizon=3))
        ctx = env.reset(student_seed=0)
        flags = [env.step(ctx, 0).done for _ in range(3)]
        assert flags == [False, False, True]
        with pytest.raises(EnvError, match="finished"):
            env.step(ctx, 0)

    def test_trajectory_deterministic_in_seed_and_actions(self):
        gt = make_world(seed=8, cfg=D.SyntheticConfig(student_jitter=0.2))
        env = SimEnv(gt, EnvConfig(horizon=10))
        actions = [3, 1, 4, 1, 5, 2, 6, 0, 7, 3]

        def run():
            ctx = env.reset(student_seed=42)
            return [env.step(ctx, a) for a in actions]

        assert run() == run()

    def test_monte_carlo_matches_exact_belief_rollout(self):
        gt = make_world(seed=9)
        env = SimEnv(gt, EnvConfig(horizon=6))
        script = [0, 3, 0, 5, 2, 0]
        n_rollouts = 10_000
        totals = np.zeros(len(script))
        for i in range(n_rollouts):
            ctx = env.reset(student_seed=i)
            for step_i, a in enumerate(script):
                totals[step_i] += env.step(ctx, a).reward

        # exact computation: propagate mastery beliefs, then P(all tags mastered)
        params = gt.sample_student_params(rng_for(0, "unused"))  # jitter 0: exact
        beliefs = D.initial_beliefs(params)
        exact = []
        for a in script:
            beliefs = D.practice_beliefs(beliefs, params, gt.latent_tags[a])
            step_reward = 0.0
            for e in range(env.n_exercises):
                p_all = float(np.prod(beliefs[list(gt.latent_tags[e])]))
                high = 1.0 if (1.0 - gt.slip[e]) >= 0.5 else 0.0
                low = 1.0 if gt.guess[e] >= 0.5 else 0.0
                step_reward += p_all * high + (1.0 - p_all) * low
            exact.append(step_reward / env.n_exercises)
        np.testing.assert_allclose(totals / n_rollouts, exact, atol=0.02)


class TestPostTest:
    def test_untouched_student_keeps_pretest_score(self):
        gt = make_world(seed=10)
        env = SimEnv(gt, EnvConfig(horizon=2))
        ctx = env.reset(student_seed=3)
        s_pre = ctx.s_pre
        # practice an exercise with no effect: impossible here, so simply
        # verify the score function is stable without practice
        assert env.score(ctx.student) == s_pre

    def test_fully_mastered_posttest(self):
        cfg = D.SyntheticConfig(l0_range=(1.0, 1.0), forget_range=(0.0, 0.0), student_jitter=0.0)
        gt = make_world(seed=11, cfg=cfg)
        env = SimEnv(gt, EnvConfig(horizon=2))
        ctx = env.reset(student_seed=1)
        env.step(ctx, 0)
        env.step(ctx, 1)
        assert env.post_test(ctx) == pytest.approx(float((1.0 - gt.slip).mean()))

    def test_mid_episode_post_test_rejected(self):
        gt = make_world(seed=12)
        env = SimEnv(gt, EnvConfig(horizon=3))
        ctx = env.reset(student_seed=0)
        env.step(ctx, 0)
        with pytest.raises(EnvError, match="mid-episode"):
            env.post_test(ctx)

    def test_post_test_in_unit_interval(self):
        gt = make_world(seed=13, cfg=D.SyntheticConfig(student_jitter=0.3))
        env = SimEnv(gt, EnvConfig(horizon=4))
        for seed in range(10):
            ctx = env.reset(student_seed=seed)
            for _ in range(4):
                env.step(ctx, int(seed % env.n_exercises))
            assert 0.0 <= env.post_test(ctx) <= 1.0


class TestRewardMonotonicity:
    def test_mastering_a_subskill_never_decreases_reward(self):
        gt = make_world(seed=14)
        for mode in ("threshold", "mean_prob"):
            env = SimEnv(gt, EnvConfig(horizon=2, reward_mode=mode))
            ctx = env.reset(student_seed=5)
            ctx.student.mastered[...] = False
            base = env.reward(ctx.student)
            for j in range(gt.n_subskills):
                ctx.student.mastered[...] = False
                ctx.student.mastered[j] = True
                assert env.reward(ctx.student) >= base - 1e-12


class TestConfig:
    def test_probe_subset(self):
        gt = make_world(seed=15)
        env = SimEnv(gt, EnvConfig(horizon=2, probe=(0, 1)))
        assert env.probe == (0, 1)

    def test_bad_reward_mode(self):
        with pytest.raises(EnvError):
            EnvConfig(reward_mode="nope")

    def test_bad_probe(self):
        gt = make_world(seed=16)
        with pytest.raises(EnvError):
            SimEnv(gt, EnvConfig(probe=(99,)))
