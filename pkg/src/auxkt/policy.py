"""Recurrent PPO policy for exercise recommendation.

The policy body mirrors the tracing recurrence: each observation
(previous recommended exercise, simulated correctness) is embedded as the
mean of its labeled tag rows (human tags, optionally with learned
auxiliary tags appended) and fed through an LSTM. Two linear heads read
the hidden state: the actor emits logits over the exercise pool, the
critic a scalar value. Training is clipped-surrogate PPO with GAE over
fixed-length episodes, full backprop through the episode horizon, and a
best-checkpoint-by-mean-reward return policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .metrics import aggregate_rl
from .util import rng_for


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 2.5e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    update_epochs: int = 4
    n_minibatches: int = 4
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 8
    iterations: int = 150
    horizon: int = 140
    emb_dim: int = 32
    hidden_dim: int = 128
    normalize_adv: bool = True


def _log_softmax_np(logits):
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))


class RecurrentPolicy:
    """DKT-style body (labeled tag embedding + LSTM) with actor/critic heads."""

    def __init__(self, n_obs_tags, n_actions, obs_tags, cfg: PpoConfig = PpoConfig(), seed=0):
        self.n_obs_tags = n_obs_tags
        self.n_actions = n_actions
        self.obs_tags = {int(k): tuple(v) for k, v in obs_tags.items()}
        self.cfg = cfg
        rng = rng_for(seed, "policy-init")
        d, hid = cfg.emb_dim, cfg.hidden_dim
        b_emb = 1.0 / np.sqrt(d)
        self.emb = T.Tensor(rng.uniform(-b_emb, b_emb, size=(2 * n_obs_tags, d)), requires_grad=True)
        self.lstm = T.LstmWeights(d, hid, rng)
        # near-zero actor init keeps the starting policy close to uniform
        self.w_actor = T.Tensor(rng.uniform(-0.01, 0.01, size=(hid, n_actions)), requires_grad=True)
        self.b_actor = T.Tensor(np.zeros((1, n_actions)), requires_grad=True)
        self.w_critic = T.Tensor(rng.uniform(-0.01, 0.01, size=(hid, 1)), requires_grad=True)
        self.b_critic = T.Tensor(np.zeros((1, 1)), requires_grad=True)

    def params(self):
        return [self.emb, *self.lstm.params(), self.w_actor, self.b_actor,
                self.w_critic, self.b_critic]

    # -- observation embedding ----------------------------------------------

    def obs_matrix(self, observations):
        """(B, 2K) selection rows; ``None`` observations embed as zero."""
        sel = np.zeros((len(observations), 2 * self.n_obs_tags))
        for b, obs in enumerate(observations):
            if obs is None:
                continue
            exercise, correct = obs
            tags = self.obs_tags.get(exercise, ())
            if not tags:
                continue
            offset = 0 if correct else self.n_obs_tags
            for k in tags:
                sel[b, offset + k] = 1.0 / len(tags)
        return sel

    # -- forward -------------------------------------------------------------

    def forward_step(self, h, c, sel):
        """Tensor-path step; returns (h', c', action logits, value column)."""
        x = T.matmul(T.Tensor(sel), self.emb)
        h2, c2 = T.lstm_step(x, h, c, self.lstm)
        n = sel.shape[0]
        logits = T.add(T.matmul(h2, self.w_actor), T.broadcast_rows(self.b_actor, n))
        value = T.add(T.matmul(h2, self.w_critic), T.broadcast_rows(self.b_critic, n))
        return h2, c2, logits, value

    def step_np(self, h, c, observations):
        """Inference step over numpy carries; returns (h, c, logits, values)."""
        sel = self.obs_matrix(observations)
        h2, c2, logits, value = self.forward_step(T.Tensor(h), T.Tensor(c), sel)
        return h2.values, c2.values, logits.values, value.values[:, 0]

    def zero_state(self, n_rows=1):
        hid = self.cfg.hidden_dim
        return np.zeros((n_rows, hid)), np.zeros((n_rows, hid))

    # -- persistence -----------------------------------------------------------

    def named_arrays(self):
        arrays = {
            "emb": self.emb.values,
            "w_actor": self.w_actor.values, "b_actor": self.b_actor.values,
            "w_critic": self.w_critic.values, "b_critic": self.b_critic.values,
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
            "kind": "policy",
            "n_obs_tags": self.n_obs_tags,
            "n_actions": self.n_actions,
            "obs_tags": json.dumps({str(k): list(v) for k, v in sorted(self.obs_tags.items())}),
            "emb_dim": self.cfg.emb_dim,
            "hidden_dim": self.cfg.hidden_dim,
        }
        T.save_checkpoint(path, self.named_arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = T.load_checkpoint(path)
        if meta.get("kind") != "policy":
            raise PolicyError(f"{path}: not a policy checkpoint")
        obs_tags = {int(k): tuple(v) for k, v in json.loads(meta["obs_tags"]).items()}
        cfg = PpoConfig(emb_dim=meta["emb_dim"], hidden_dim=meta["hidden_dim"])
        policy = cls(meta["n_obs_tags"], meta["n_actions"], obs_tags, cfg)
        policy.restore(arrays)
        return policy


class PolicyAgent:
    """Greedy episode agent: argmax action, recurrent state rolled via observations."""

    def __init__(self, policy):
        self.policy = policy
        self.h, self.c = policy.zero_state(1)
        self.prev = None

    def act(self):
        self.h, self.c, logits, _ = self.policy.step_np(self.h, self.c, [self.prev])
        return int(np.argmax(logits[0]))

    def observe(self, exercise, correct):
        self.prev = (exercise, correct)


def policy_obs_tags(qmatrix, n_kcs, aux_qmatrix=None, n_aux=0):
    """Observation tag table: human tags, plus offset auxiliary tags if given."""
    tags = {ex: tuple(qmatrix[ex]) for ex in qmatrix}
    if aux_qmatrix is not None:
        tags = {
            ex: tuple(list(tags.get(ex, ())) + [n_kcs + a for a in aux_qmatrix.get(ex, ())])
            for ex in tags
        }
        return tags, n_kcs + n_aux
    return tags, n_kcs


# ---------------------------------------------------------------------------
# PPO training


def clipped_surrogate(new_logp, old_logp, advantages, eps):
    """Per-sample clipped surrogate (tensor path, to be maximized)."""
    ratio = T.exp(T.add(new_logp, T.Tensor(-np.asarray(old_logp))))
    adv = T.Tensor(advantages)
    unclipped = T.mul(ratio, adv)
    clipped = T.mul(T.clip(ratio, 1.0 - eps, 1.0 + eps), adv)
    return T.minimum(unclipped, clipped)


def compute_gae(rewards, values, gamma, lam):
    """Advantages/returns for fixed-horizon episodes (terminal at the last step)."""
    n_envs, horizon = rewards.shape
    advantages = np.zeros_like(rewards)
    carry = np.zeros(n_envs)
    for t in reversed(range(horizon)):
        next_value = values[:, t + 1] if t + 1 < horizon else np.zeros(n_envs)
        nonterminal = 1.0 if t + 1 < horizon else 0.0
        delta = rewards[:, t] + gamma * next_value * nonterminal - values[:, t]
        carry = delta + gamma * lam * nonterminal * carry
        advantages[:, t] = carry
    return advantages, advantages + values


@dataclass
class RolloutBuffer:
    observations: list  # per step: list of per-env observations (or None)
    actions: np.ndarray  # (n_envs, T) int
    logp: np.ndarray  # (n_envs, T)
    rewards: np.ndarray  # (n_envs, T)
    values: np.ndarray  # (n_envs, T)


def _collect_rollout(policy, env, horizon, episode_seeds, rng):
    n = len(episode_seeds)
    ctxs = [env.reset(student_seed=s) for s in episode_seeds]
    h, c = policy.zero_state(n)
    prev = [None] * n
    observations = []
    actions = np.zeros((n, horizon), dtype=np.int64)
    logp = np.zeros((n, horizon))
    rewards = np.zeros((n, horizon))
    values = np.zeros((n, horizon))
    for t in range(horizon):
        observations.append(list(prev))
        h, c, logits, vals = policy.step_np(h, c, prev)
        logps = _log_softmax_np(logits)
        probs = np.exp(logps)
        draws = rng.random(n)
        for b in range(n):
            action = int(np.searchsorted(np.cumsum(probs[b]), draws[b]))
            action = min(action, policy.n_actions - 1)
            actions[b, t] = action
            logp[b, t] = logps[b, action]
        values[:, t] = vals
        for b in range(n):
            result = env.step(ctxs[b], int(actions[b, t]))
            rewards[b, t] = result.reward
            prev[b] = result.observation
    return RolloutBuffer(observations, actions, logp, rewards, values), ctxs


def _update(policy, opt, buf, advantages, returns, cfg, rng):
    n_envs, horizon = buf.actions.shape
    order = rng.permutation(n_envs)
    splits = np.array_split(order, cfg.n_minibatches)
    for rows in splits:
        if rows.size == 0:
            continue
        adv = advantages[rows]
        if cfg.normalize_adv:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        opt.zero_grad()
        with T.Graph() as g:
            h = T.Tensor(np.zeros((rows.size, cfg.hidden_dim)))
            c = T.Tensor(np.zeros((rows.size, cfg.hidden_dim)))
            pg_sum = None
            v_sum = None
            ent_sum = None
            for t in range(horizon):
                sel = policy.obs_matrix([buf.observations[t][b] for b in rows])
                h, c, logits, value = policy.forward_step(h, c, sel)
                logps = T.log_softmax(logits, axis=1)
                onehot = np.zeros((rows.size, policy.n_actions))
                onehot[np.arange(rows.size), buf.actions[rows, t]] = 1.0
                chosen = T.reduce_sum(T.mul(logps, T.Tensor(onehot)), axis=1)
                surr = clipped_surrogate(chosen, buf.logp[rows, t], adv[:, t], cfg.clip_eps)
                pg_term = T.reduce_sum(surr)
                pg_sum = pg_term if pg_sum is None else T.add(pg_sum, pg_term)
                err = T.add(T.reduce_sum(value, axis=1), T.Tensor(-returns[rows, t]))
                v_term = T.reduce_sum(T.mul(err, err))
                v_sum = v_term if v_sum is None else T.add(v_sum, v_term)
                ent_term = T.scale(T.reduce_sum(T.mul(T.exp(logps), logps)), -1.0)
                ent_sum = ent_term if ent_sum is None else T.add(ent_sum, ent_term)
            scale = 1.0 / (rows.size * horizon)
            loss = T.add(
                T.scale(pg_sum, -scale),
                T.add(
                    T.scale(v_sum, 0.5 * cfg.vf_coef * scale),
                    T.scale(ent_sum, -cfg.ent_coef * scale),
                ),
            )
            g.backward(loss)
        T.clip_grad_norm(policy.params(), cfg.max_grad_norm)
        opt.step()


def ppo_train(env, obs_tags, n_obs_tags, cfg: PpoConfig = PpoConfig(), seed=0, log=None):
    """Train a recurrent policy on the environment; keeps the best snapshot
    by rollout mean step reward. Returns (policy, history)."""
    policy = RecurrentPolicy(n_obs_tags, env.n_exercises, obs_tags, cfg, seed=seed)
    opt = T.Adam(policy.params(), lr=cfg.lr)
    rng = rng_for(seed, "ppo-train")
    seed_rng = rng_for(seed, "ppo-episodes")
    history = []
    best = (-np.inf, policy.snapshot())
    for iteration in range(cfg.iterations):
        episode_seeds = [int(s) for s in seed_rng.integers(0, 2**31 - 1, size=cfg.n_envs)]
        buf, _ = _collect_rollout(policy, env, cfg.horizon, episode_seeds, rng)
        advantages, returns = compute_gae(buf.rewards, buf.values, cfg.gamma, cfg.gae_lambda)
        mean_reward = float(buf.rewards.mean())
        history.append((iteration, mean_reward))
        if mean_reward > best[0]:
            best = (mean_reward, policy.snapshot())
        if log:
            log(f"iter {iteration}: mean step reward {mean_reward:.4f}")
        _update(policy, opt, buf, advantages, returns, cfg, rng)
    policy.restore(best[1])
    return policy, history


def ppo_evaluate(policy, env, n_students=24, seed=0):
    """Greedy evaluation; returns (per-student rows, RlSummary)."""
    from .planner import run_episodes

    seed_rng = rng_for(seed, "ppo-eval")
    seeds = [int(s) for s in seed_rng.integers(0, 2**31 - 1, size=n_students)]
    rows, summary, _ = run_episodes(
        env,
        make_agent=lambda i: PolicyAgent(policy),
        n_students=n_students,
        seed_stream=lambda i: seeds[i],
    )
    return rows, summary
