from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slr.core import gaussian_log_prob
from slr.ppo import (
    LossWeights,
    Optimizers,
    PpoConfig,
    RolloutBuffer,
    adapt_learning_rate,
    compute_gae,
    minibatch_loss,
    normalize_advantages,
    ppo_surrogate,
    update,
)
from slr.tensor import Tape, ops

from .helpers import filled_buffer, max_rel_err, tiny_config


def gae_oracle(rewards, values, dones, bootstrap, gamma, lam):
    """Advantages as explicit lambda-weighted sums of discounted TD errors."""
    t_len = len(rewards)
    nxt = np.append(values[1:], bootstrap)
    delta = [rewards[t] + gamma * nxt[t] * (1 - dones[t]) - values[t] for t in range(t_len)]
    adv = []
    for t in range(t_len):
        total, weight = 0.0, 1.0
        for k in range(t, t_len):
            total += weight * delta[k]
            if dones[k]:
                break
            weight *= gamma * lam
        adv.append(total)
    return np.array(adv)


# -- GAE ---------------------------------------------------------------------------------


def test_gae_single_terminal_step():
    adv, ret = compute_gae([1.0], [0.0], [1.0], 0.0, 0.99, 0.95)
    assert adv[0] == 1.0 and ret[0] == 1.0


def test_gae_two_steps():
    adv, _ = compute_gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 0.0, 0.99, 0.95)
    assert np.allclose(adv, [1.9405, 1.0], atol=1e-12)


def test_done_severs_the_recursion():
    base, _ = compute_gae([1.0, 5.0, 2.0], [0.1, 0.2, 0.3], [1.0, 0.0, 0.0], 0.7, 0.99, 0.95)
    other, _ = compute_gae([1.0, -9.0, 4.0], [0.1, 3.0, -2.0], [1.0, 0.0, 0.0], -5.0, 0.99, 0.95)
    assert base[0] == other[0] == pytest.approx(0.9, abs=1e-12)


def test_gae_matches_brute_force_on_random_sequences():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        t = int(rng.integers(1, 30))
        r = rng.standard_normal(t)
        v = rng.standard_normal(t)
        d = (rng.random(t) < 0.15).astype(float)
        boot = float(rng.standard_normal())
        gamma, lam = float(rng.uniform(0.8, 1.0)), float(rng.uniform(0.8, 1.0))
        adv, ret = compute_gae(r, v, d, boot, gamma, lam)
        oracle = gae_oracle(r, v, d, boot, gamma, lam)
        assert np.max(np.abs(adv - oracle)) < 1e-8
        assert np.allclose(ret, adv + v, atol=0)


def test_gae_batched_equals_columns():
    rng = np.random.default_rng(1)
    r, v = rng.standard_normal((12, 5)), rng.standard_normal((12, 5))
    d = (rng.random((12, 5)) < 0.2).astype(float)
    boot = rng.standard_normal(5)
    adv, _ = compute_gae(r, v, d, boot, 0.99, 0.95)
    for n in range(5):
        col, _ = compute_gae(r[:, n], v[:, n], d[:, n], boot[n], 0.99, 0.95)
        assert np.array_equal(adv[:, n], col)


def test_gae_length_mismatch_raises():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0], [0.0, 0.0], 0.0, 0.99, 0.95)


# -- surrogate, learning rate, normalization ---------------------------------------------


def test_surrogate_identity_ratio():
    a = np.array([0.5, -1.0, 2.0])
    assert ppo_surrogate(np.ones(3), a, 0.2) == pytest.approx(-a.mean(), abs=1e-15)


@pytest.mark.parametrize("ratio, adv, term", [(2.0, 1.0, 1.2), (0.5, -1.0, -0.8)])
def test_surrogate_clip_arithmetic(ratio, adv, term):
    assert ppo_surrogate(np.array([ratio]), np.array([adv]), 0.2) == pytest.approx(-term, abs=1e-15)


@pytest.mark.parametrize(
    "kl, expected", [(0.03, 1e-3 / 1.5), (0.004, 1.5e-3), (0.01, 1e-3), (0.0, 1e-3)]
)
def test_learning_rate_rule(kl, expected):
    assert adapt_learning_rate(kl, 1e-3, 0.01) == pytest.approx(expected, rel=1e-12)


def test_learning_rate_bounds_and_negative_kl():
    assert adapt_learning_rate(1.0, 1e-5, 0.01, lr_min=1e-5) == 1e-5
    assert adapt_learning_rate(1e-4, 1e-2, 0.01, lr_max=1e-2) == 1e-2
    with pytest.raises(ValueError):
        adapt_learning_rate(-0.1, 1e-3, 0.01)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-100, 100), st.floats(0.01, 100))
def test_advantage_normalization(seed, loc, scale):
    adv = np.random.default_rng(seed).normal(loc, scale, size=(24, 16))
    out = normalize_advantages(adv)
    assert abs(out.mean()) < 1e-6 and abs(out.std() - 1) < 1e-4


def test_surrogate_with_unbounded_clip_is_vanilla_policy_gradient():
    rng = np.random.default_rng(2)
    mean = rng.standard_normal((16, 2))
    log_std = np.array([0.1, -0.3])
    actions = mean + rng.standard_normal((16, 2))
    adv = rng.standard_normal(16)
    old = gaussian_log_prob(mean, log_std, actions)

    tape = Tape()
    m = tape.parameter(mean, "mean")
    ratio = ops.exp(gaussian_log_prob(m, log_std, actions, tape) - old)
    g_ppo = tape.backward(ppo_surrogate(ratio, adv, 1e12, tape))["mean"]

    tape = Tape()
    m = tape.parameter(mean, "mean")
    logp = gaussian_log_prob(m, log_std, actions, tape)
    g_pg = tape.backward(-ops.mean(logp * adv))["mean"]  # at rho = 1: grad rho = grad log pi
    assert max_rel_err(g_ppo, g_pg, floor=1e-12) < 1e-6


# -- buffer ------------------------------------------------------------------------------


def test_buffer_overflow_and_finish_checks():
    buf = RolloutBuffer(2, 1, 3, 6, 1, 2)
    with pytest.raises(RuntimeError):
        buf.finish(np.zeros((2, 3)), np.zeros((2, 6)), np.zeros((2, 1)), np.zeros(2), np.zeros(2))
    args = [np.zeros((2, 3)), np.zeros((2, 6)), np.zeros((2, 1))] + [np.zeros((2, 2))] * 3 + [np.zeros(2)] * 4
    buf.add(*args)
    with pytest.raises(RuntimeError, match="overflow"):
        buf.add(*args)
    assert not buf.full


def test_update_empties_the_buffer():
    cfg = tiny_config()
    agent, buf, rngs = filled_buffer(cfg)
    optim = Optimizers.for_agent(agent, cfg.ppo)
    update(buf, agent, optim, cfg.ppo, 1e-3, rngs["shuffle"], rngs["negative"])
    assert buf.step == 0 and not buf.full and len(buf) == 0 and buf.clears == 1
    assert np.isnan(buf.rewards).all() and np.isnan(buf.history).all()
    with pytest.raises(RuntimeError):
        update(buf, agent, optim, cfg.ppo, 1e-3, rngs["shuffle"], rngs["negative"])


# -- joint loss ----------------------------------------------------------------------------


def _batch(cfg, seed=0):
    agent, buf, rngs = filled_buffer(cfg, seed)
    t, n = buf.horizon, buf.num_envs
    adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values, cfg.ppo.gamma, cfg.ppo.lam)
    flat = lambda a: a.reshape(t * n, *a.shape[2:])  # noqa: E731
    batch = {
        "obs": flat(buf.obs[:t]),
        "history": flat(buf.history[:t]),
        "privileged": flat(buf.privileged[:t]),
        "next_history": flat(buf.history[1:]),
        "neg_history": flat(buf.history[::-1][: t]),
        "actions": flat(buf.actions),
        "applied_actions": flat(buf.applied_actions),
        "old_log_probs": flat(buf.log_probs),
        "advantages": flat(normalize_advantages(adv)).astype(np.float32),
        "returns": flat(ret).astype(np.float32),
        "anchor_mask": flat(1.0 - buf.dones),
    }
    return agent, batch


def _to64(agent):
    for net in agent.networks():
        net.layers[:] = [(w.astype(np.float64), b.astype(np.float64)) for w, b in net.layers]
    agent.log_std = agent.log_std.astype(np.float64)
    return agent


def test_total_gradient_is_sum_of_parts():
    cfg = tiny_config()
    agent, batch = _batch(cfg)
    agent = _to64(agent)
    batch = {k: v.astype(np.float64) for k, v in batch.items()}
    weights = LossWeights(triplet_coef=1.0, margin=1.0)

    def grads(parts):
        tape = Tape()
        loss, _ = minibatch_loss(agent, batch, cfg.ppo, weights, tape, parts)
        return tape.backward(loss)

    total = grads(("ppo", "triplet"))
    ppo = grads(("ppo",))
    trip = grads(("triplet",))
    flat_total = np.concatenate([g.ravel() for g in total.values()])
    flat_sum = np.concatenate([(ppo[k] + trip[k]).ravel() for k in total])
    assert np.any(np.concatenate([g.ravel() for g in trip.values()]) != 0)
    assert max_rel_err(flat_total, flat_sum, floor=1e-12) < 1e-6
    assert abs(np.linalg.norm(flat_total) - np.linalg.norm(flat_sum)) <= 1e-6 * np.linalg.norm(flat_sum)


def test_log_std_gradient_nonzero_in_joint_loss():
    cfg = tiny_config()
    agent, batch = _batch(cfg)
    tape = Tape()
    loss, _ = minibatch_loss(agent, batch, cfg.ppo, LossWeights(), tape)
    assert np.all(tape.backward(loss)["log_std"] != 0)


def test_triplet_loss_ignores_anchors_across_episode_ends():
    cfg = tiny_config()
    agent, batch = _batch(cfg)
    batch["anchor_mask"] = np.zeros_like(batch["anchor_mask"])
    tape = Tape()
    _, info = minibatch_loss(agent, batch, cfg.ppo, LossWeights(), tape, ("triplet",))
    assert info["triplet_loss"] == 0.0


def _encoder_after_update(cfg, alpha, value_coef):
    agent, buf, rngs = filled_buffer(cfg)
    before = {k: v.copy() for k, v in agent.encoder.named_arrays().items()}
    ppo = replace(cfg.ppo, value_coef=value_coef)
    optim = Optimizers.for_agent(agent, ppo)
    update(buf, agent, optim, ppo, 1e-3, rngs["shuffle"], rngs["negative"], LossWeights(triplet_coef=alpha))
    after = agent.encoder.named_arrays()
    return all(np.array_equal(before[k], after[k]) for k in before)


def test_stop_gradient_keeps_encoder_bitwise_unchanged():
    cfg = tiny_config()
    assert _encoder_after_update(cfg, alpha=0.0, value_coef=0.0)
    assert not _encoder_after_update(cfg, alpha=1.0, value_coef=0.0)
    assert not _encoder_after_update(cfg, alpha=0.0, value_coef=1.0)


def test_zero_alpha_update_equals_ppo_only_update():
    cfg = tiny_config()
    results = []
    for weights in (LossWeights(triplet_coef=0.0), LossWeights(use_triplet=False)):
        agent, buf, rngs = filled_buffer(cfg)
        optim = Optimizers.for_agent(agent, cfg.ppo)
        m = update(buf, agent, optim, cfg.ppo, 1e-3, rngs["shuffle"], rngs["negative"], weights)
        results.append((m, [a.copy() for net in agent.networks() for a in net.arrays()], agent.log_std.copy()))
    (m0, p0, s0), (m1, p1, s1) = results
    for field in ("surrogate", "value_loss", "entropy", "kl", "lr", "grad_norm"):
        assert getattr(m0, field) == getattr(m1, field), field
    assert all(np.array_equal(a, b) for a, b in zip(p0, p1))
    assert np.array_equal(s0, s1)


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip_range=0.0).validate()
    with pytest.raises(ValueError):
        PpoConfig(gamma=1.5).validate()
    with pytest.raises(ValueError):
        PpoConfig(schedule="cosine").validate()
