import numpy as np
import pytest

from auxkt import data as D
from auxkt import planner as P
from auxkt import policy as PL
from auxkt import tensor as T
from auxkt.simenv import EnvConfig, SimEnv
from auxkt.util import rng_for


class BanditEnv:
    """Stateless stub: one fixed exercise pays reward 1, everything else 0."""

    def __init__(self, n_exercises=5, target=3, horizon=16):
        self.n_exercises = n_exercises
        self.target = target
        self.horizon = horizon

    class Ctx:
        def __init__(self):
            self.t = 0
            self.done = False
            self.s_pre = 0.2

    def reset(self, student_seed):
        return self.Ctx()

    def step(self, ctx, action):
        from auxkt.simenv import EnvStep

        ctx.t += 1
        ctx.done = ctx.t >= self.horizon
        reward = 1.0 if action == self.target else 0.0
        return EnvStep(observation=(action, int(reward)), reward=reward, done=ctx.done)

    def post_test(self, ctx):
        return 0.2


class ConstantRewardEnv(BanditEnv):
    def __init__(self, reward, horizon=6):
        super().__init__(n_exercises=3, target=0, horizon=horizon)
        self.constant = reward

    def step(self, ctx, action):
        out = super().step(ctx, action)
        from auxkt.simenv import EnvStep

        return EnvStep(out.observation, self.constant, out.done)


def bandit_tags(n):
    return {a: (a,) for a in range(n)}


SMALL_CFG = PL.PpoConfig(emb_dim=6, hidden_dim=12, n_envs=4, iterations=3, horizon=8)


class TestPolicyNetwork:
    def test_untrained_policy_is_near_uniform(self):
        policy = PL.RecurrentPolicy(5, 7, bandit_tags(5), SMALL_CFG, seed=1)
        _, _, logits, _ = policy.step_np(*policy.zero_state(1), [None])
        logp = PL._log_softmax_np(logits)[0]
        entropy = -float((np.exp(logp) * logp).sum())
        assert entropy == pytest.approx(np.log(7), abs=0.01)

    def test_observation_embedding_differs_with_aux_tags(self):
        qmatrix = {0: (0,), 1: (1,)}
        aux = {0: (0, 2), 1: ()}
        plain_tags, plain_n = PL.policy_obs_tags(qmatrix, 2)
        aux_tags, aux_n = PL.policy_obs_tags(qmatrix, 2, aux, 3)
        assert plain_n == 2 and aux_n == 5
        assert aux_tags[0] == (0, 2, 4)  # human tag + offset aux tags
        assert aux_tags[1] == (1,)
        plain_policy = PL.RecurrentPolicy(plain_n, 2, plain_tags, SMALL_CFG, seed=2)
        aux_policy = PL.RecurrentPolicy(aux_n, 2, aux_tags, SMALL_CFG, seed=2)
        a = plain_policy.obs_matrix([(0, 1)])
        b = aux_policy.obs_matrix([(0, 1)])
        assert a.shape != b.shape or not np.array_equal(a, b)
        assert np.count_nonzero(b[0]) == 3

    def test_none_observation_embeds_to_zero(self):
        policy = PL.RecurrentPolicy(4, 3, bandit_tags(4), SMALL_CFG, seed=3)
        assert np.count_nonzero(policy.obs_matrix([None])) == 0

    def test_checkpoint_round_trip(self, tmp_path):
        policy = PL.RecurrentPolicy(4, 6, {0: (0,), 1: (1, 2)}, SMALL_CFG, seed=4)
        path = tmp_path / "policy.npz"
        policy.save(path)
        back = PL.RecurrentPolicy.load(path)
        assert back.obs_tags == policy.obs_tags
        for k, v in policy.named_arrays().items():
            np.testing.assert_array_equal(v, back.named_arrays()[k])


class TestSurrogate:
    def run_terms(self, ratios, advantages, eps=0.2):
        new_logp = T.Tensor(np.log(ratios), requires_grad=True)
        out = PL.clipped_surrogate(new_logp, np.zeros(len(ratios)), np.asarray(advantages), eps)
        return out.values

    def test_matches_min_clip_oracle(self):
        rng = rng_for(5, "surr")
        for _ in range(100):
            r = rng.uniform(0.2, 2.5, size=6)
            a = rng.normal(size=6)
            got = self.run_terms(r, a)
            want = np.minimum(r * a, np.clip(r, 0.8, 1.2) * a)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_positive_advantage_capped_above(self):
        vals = self.run_terms([2.0, 1.1, 0.5], [1.0, 1.0, 1.0])
        assert vals[0] == pytest.approx(1.2)  # capped at (1 + eps) * adv
        assert vals[1] == pytest.approx(1.1)  # inside the trust region
        assert vals[2] == pytest.approx(0.5)  # shrinking ratio not clipped upward

    def test_negative_advantage_is_pessimistic(self):
        vals = self.run_terms([2.0, 0.5], [-1.0, -1.0])
        assert vals[0] == pytest.approx(-2.0)  # unclipped side is worse, min keeps it
        assert vals[1] == pytest.approx(-0.8)  # clipped at (1 - eps) * adv
        for r, a, v in [(2.0, -1.0, vals[0]), (0.5, -1.0, vals[1])]:
            assert v <= (1 - 0.2) * a + 1e-12


class TestGae:
    def test_hand_computed_small_case(self):
        rewards = np.array([[1.0, 0.0, 2.0]])
        values = np.array([[0.5, 0.4, 0.3]])
        adv, ret = PL.compute_gae(rewards, values, gamma=0.9, lam=0.8)
        a2 = 2.0 - 0.3
        a1 = (0.0 + 0.9 * 0.3 - 0.4) + 0.9 * 0.8 * a2
        a0 = (1.0 + 0.9 * 0.4 - 0.5) + 0.9 * 0.8 * a1
        np.testing.assert_allclose(adv[0], [a0, a1, a2], atol=1e-12)
        np.testing.assert_allclose(ret, adv + values)


class TestTraining:
    def test_bandit_policy_concentrates_on_paying_arm(self):
        env = BanditEnv(n_exercises=5, target=3, horizon=16)
        cfg = PL.PpoConfig(
            lr=0.01, emb_dim=6, hidden_dim=12, n_envs=8, iterations=60, horizon=16,
        )
        policy, history = PL.ppo_train(env, bandit_tags(5), 5, cfg, seed=6)
        _, _, logits, _ = policy.step_np(*policy.zero_state(1), [None])
        probs = np.exp(PL._log_softmax_np(logits)[0])
        assert probs[3] > 0.9
        assert history[-1][1] > history[0][1]

    def test_training_is_deterministic(self):
        env = BanditEnv(n_exercises=3, target=1, horizon=6)
        a, _ = PL.ppo_train(env, bandit_tags(3), 3, SMALL_CFG, seed=7)
        b, _ = PL.ppo_train(env, bandit_tags(3), 3, SMALL_CFG, seed=7)
        for k, v in a.named_arrays().items():
            np.testing.assert_array_equal(v, b.named_arrays()[k])


class TestEvaluation:
    def test_constant_reward_env_reports_that_reward(self):
        env = ConstantRewardEnv(reward=0.7, horizon=5)
        policy = PL.RecurrentPolicy(3, 3, bandit_tags(3), SMALL_CFG, seed=8)
        rows, summary = PL.ppo_evaluate(policy, env, n_students=4, seed=9)
        assert summary.mean_reward == pytest.approx(0.7)
        assert summary.gain == pytest.approx(0.0)

    def test_greedy_agent_reproducible_on_sim_env(self):
        _, gt = D.generate_synthetic(1, 6, 2, 4, 4, seed=22)
        env = SimEnv(gt, EnvConfig(horizon=6))
        tags, n = PL.policy_obs_tags({e: (e % 2,) for e in range(6)}, 2)
        policy = PL.RecurrentPolicy(n, env.n_exercises, tags, SMALL_CFG, seed=10)
        a = PL.ppo_evaluate(policy, env, n_students=3, seed=11)[1]
        b = PL.ppo_evaluate(policy, env, n_students=3, seed=11)[1]
        assert a == b
