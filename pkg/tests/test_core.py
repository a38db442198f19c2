from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from slr.core import (
    NetworkConfig,
    ObservationHistory,
    SlrDims,
    build_slr_networks,
    encode,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
    policy_forward,
    predict_next_latent,
    sample_negative,
    sample_negative_slots,
    triplet_loss,
    value_forward,
)
from slr.tensor import ShapeError, Tape, ops

from .helpers import central_difference, max_rel_err

DIMS = SlrDims(obs_dim=5, action_dim=2, history_len=3, latent_dim=4)
SMALL = NetworkConfig(encoder_hidden=(8,), actor_hidden=(8,), critic_hidden=(8,), transition_hidden=(8,))


def _nets(seed=0, dims=DIMS, cfg=SMALL):
    return build_slr_networks(dims, cfg, np.random.default_rng(seed))


def _zero(ps):
    for w, b in ps.layers:
        w[:] = 0
        b[:] = 0
    return ps


# -- triplet loss -------------------------------------------------------------------


@pytest.mark.parametrize(
    "anchor, pos, neg, expected",
    [
        ((0, 0), (0, 0), (2, 0), 0.0),
        ((0, 0), (1, 0), (1, 0), 1.0),
        ((0, 0), (1, 1), (1, 0), 2.0),
    ],
)
def test_triplet_examples(anchor, pos, neg, expected):
    got = triplet_loss(np.array([anchor], float), np.array([pos], float), np.array([neg], float), margin=1.0)
    assert abs(got[0] - expected) <= 1e-9


def test_triplet_examples_on_tape_match():
    a, p, n = (np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), np.array([[1.0, 0.0]]))
    tape = Tape()
    out = triplet_loss(tape.parameter(a, "a"), tape.constant(p), tape.constant(n), 1.0, tape)
    assert abs(float(out.value[0]) - 2.0) <= 1e-9


def test_triplet_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a, p, n = (rng.standard_normal((6, 4)) for _ in range(3))
    p = a + 0.8 * rng.standard_normal((6, 4))  # keep every hinge active
    n = a + 0.3 * rng.standard_normal((6, 4))

    def value():
        return float(np.sum(triplet_loss(a, p, n, 1.0)))

    assert np.all(triplet_loss(a, p, n, 1.0) > 0.05)
    tape = Tape()
    na, np_, nn = tape.parameter(a, "a"), tape.parameter(p, "p"), tape.parameter(n, "n")
    grads = tape.backward(ops.sum(triplet_loss(na, np_, nn, 1.0, tape)))
    for name, arr in (("a", a), ("p", p), ("n", n)):
        fd = central_difference(value, arr, h=1e-6)
        assert max_rel_err(grads[name], fd) < 1e-5, name


def test_triplet_gradient_zero_at_kink_and_when_inactive():
    a = np.zeros((1, 2))
    p = np.array([[1.0, 0.0]])
    n = np.array([[math.sqrt(2.0), 0.0]])  # |a-p|^2 - |a-n|^2 + 1 = 0 exactly
    for neg in (n, np.array([[5.0, 0.0]])):
        tape = Tape()
        out = triplet_loss(tape.parameter(a, "a"), tape.parameter(p, "p"), tape.parameter(neg, "n"), 1.0, tape)
        grads = tape.backward(ops.sum(out))
        assert all(np.all(g == 0) for g in grads.values())


def test_triplet_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        triplet_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 4)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 3.0))
def test_triplet_nonnegative_and_orthogonally_invariant(seed, margin):
    rng = np.random.default_rng(seed)
    a, p, n = (rng.standard_normal((5, 6)) for _ in range(3))
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    shift = rng.standard_normal(6)
    base = triplet_loss(a, p, n, margin)
    moved = triplet_loss(a @ q + shift, p @ q + shift, n @ q + shift, margin)
    assert np.all(base >= 0)
    assert np.allclose(base, moved, atol=1e-9)
    far = np.sum((a - n) ** 2, -1) >= np.sum((a - p) ** 2, -1) + margin
    assert np.all(base[far] == 0)


# -- observation history --------------------------------------------------------------


def test_history_zero_padding_and_order():
    h = ObservationHistory(2, 3, 2)
    frames = [np.full((2, 2), float(k + 1)) for k in range(4)]
    h.push(frames[0])
    flat = h.flat()
    assert flat.shape == (2, 6)
    assert np.all(flat[:, :4] == 0) and np.all(flat[:, 4:] == 1)
    h.push(frames[1])
    assert np.all(h.flat()[:, :2] == 0)
    h.push(frames[2])
    h.push(frames[3])
    assert h.flat()[0].tolist() == [2, 2, 3, 3, 4, 4]  # oldest first


def test_history_reset_only_touches_given_envs():
    h = ObservationHistory(3, 2, 1)
    h.push(np.ones((3, 1)))
    h.reset([1])
    h.push(np.full((3, 1), 2.0))
    assert h.flat().tolist() == [[1, 2], [0, 2], [1, 2]]


def test_episode_start_histories_have_zero_leading_slots_in_rollouts():
    from .helpers import filled_buffer, tiny_config

    cfg = tiny_config(**{"env.horizon": 12, "env.episode_length": 5, "env.randomize_start_step": "false"})
    _, buf, _ = filled_buffer(cfg)
    d = 11
    steps_since_reset = np.zeros(buf.num_envs, dtype=int)
    for t in range(buf.horizon):
        for n in range(buf.num_envs):
            k = steps_since_reset[n]  # frames pushed so far minus one
            if k < cfg.slr.history_len - 1:
                lead = buf.history[t, n, : (cfg.slr.history_len - 1 - k) * d]
                assert np.all(lead == 0)
        steps_since_reset = np.where(buf.dones[t] > 0, 0, steps_since_reset + 1)


# -- networks -----------------------------------------------------------------------------


def test_network_dims_follow_the_wiring():
    nets = _nets()
    assert nets.encoder.in_dim == DIMS.history_len * DIMS.obs_dim
    assert nets.encoder.out_dim == DIMS.latent_dim
    assert nets.actor.in_dim == DIMS.obs_dim + DIMS.latent_dim
    assert nets.critic.in_dim == DIMS.obs_dim + DIMS.latent_dim
    assert nets.transition.in_dim == DIMS.latent_dim + DIMS.action_dim
    assert nets.transition.out_dim == DIMS.latent_dim


def test_default_latent_is_twenty_dimensional():
    dims = SlrDims(11, 2)
    nets = build_slr_networks(dims, NetworkConfig(), np.random.default_rng(0))
    hist = np.random.default_rng(1).standard_normal((3, dims.history_dim)).astype(np.float32)
    z = encode(hist, nets)
    assert z.shape == (3, 20)
    assert predict_next_latent(z, np.zeros((3, 2), np.float32), nets).shape == (3, 20)
    assert np.array_equal(z, encode(hist.copy(), nets))


def test_zero_weight_networks_return_output_bias():
    nets = _nets()
    for ps in (nets.encoder, nets.actor, nets.critic, nets.transition):
        _zero(ps)
        ps.layers[-1][1][:] = np.arange(ps.out_dim) + 1.0
    rng = np.random.default_rng(0)
    hist = rng.standard_normal((2, DIMS.history_dim))
    obs = rng.standard_normal((2, DIMS.obs_dim))
    z = encode(hist, nets)
    assert np.all(z == np.arange(4) + 1.0)
    mean, _ = policy_forward(obs, rng.standard_normal((2, 4)), nets)
    assert np.all(mean == [1.0, 2.0])
    assert np.all(value_forward(obs, z, nets) == 1.0)
    assert np.all(predict_next_latent(z, rng.standard_normal((2, 2)), nets) == np.arange(4) + 1.0)


def _grads(loss_fn, nets):
    tape = Tape()
    return tape.backward(loss_fn(tape))


def test_actor_loss_gives_exactly_zero_encoder_gradient():
    nets = _nets(1)
    rng = np.random.default_rng(2)
    hist = rng.standard_normal((4, DIMS.history_dim))
    obs = rng.standard_normal((4, DIMS.obs_dim))

    def loss(tape):
        tape.watch(nets.encoder)
        z = encode(hist, nets, tape)
        mean, _ = policy_forward(obs, z, nets, tape)
        return ops.sum(ops.square(mean))

    grads = _grads(loss, nets)
    enc = [g for k, g in grads.items() if k.startswith("encoder.")]
    act = [g for k, g in grads.items() if k.startswith("actor.")]
    assert enc and all(np.all(g == 0) for g in enc)
    assert any(np.any(g != 0) for g in act)


def test_value_and_transition_losses_reach_the_encoder():
    nets = _nets(1)
    rng = np.random.default_rng(2)
    hist = rng.standard_normal((4, DIMS.history_dim))
    obs = rng.standard_normal((4, DIMS.obs_dim))
    act = rng.standard_normal((4, DIMS.action_dim))

    def value_loss(tape):
        return ops.mean(ops.square(value_forward(obs, encode(hist, nets, tape), nets, tape) - 1.0))

    def trans_loss(tape):
        return ops.sum(ops.square(predict_next_latent(encode(hist, nets, tape), act, nets, tape)))

    for fn in (value_loss, trans_loss):
        grads = _grads(fn, nets)
        assert any(np.any(g != 0) for k, g in grads.items() if k.startswith("encoder."))


def test_value_loss_gradient_matches_finite_differences():
    dims = SlrDims(obs_dim=3, action_dim=1, history_len=2, latent_dim=2)
    rng = np.random.default_rng(4)
    nets = build_slr_networks(dims, SMALL, rng)
    for ps in (nets.encoder, nets.critic):
        ps.layers[:] = [(w.astype(np.float64), b.astype(np.float64) + 0.1) for w, b in ps.layers]
    hist = rng.standard_normal((5, dims.history_dim))
    obs = rng.standard_normal((5, 3))
    ret = rng.standard_normal(5)

    def f():
        v = value_forward(obs, encode(hist, nets), nets)
        return float(np.mean((v - ret) ** 2))

    tape = Tape()
    v = value_forward(obs, encode(hist, nets, tape), nets, tape)
    grads = tape.backward(ops.mean(ops.square(v - ret)))
    for ps in (nets.encoder, nets.critic):
        for name, arr in ps.named_arrays().items():
            assert max_rel_err(grads[name], central_difference(f, arr, 1e-6)) < 1e-4, name


# -- negative sampling ----------------------------------------------------------------------


def test_forced_choice_with_two_slots():
    rng = np.random.default_rng(0)
    hist = np.array([[[1.0]], [[5.0]]])  # slots t+1 and t+5 of one env
    for _ in range(200):
        h, slot, env = sample_negative(hist, env=0, anchor_slot=0, rng=rng)
        assert (slot, env, float(h[0])) == (1, 0, 5.0)


def test_anchor_is_never_drawn_and_others_are_uniform():
    rng = np.random.default_rng(1)
    slots, envs = 25, 1
    anchor = np.full(10_000, 1)
    s, e = sample_negative_slots(slots, envs, anchor, np.zeros(10_000, dtype=int), rng)
    assert not np.any(s == 1)
    counts = np.bincount(s, minlength=slots)
    eligible = np.delete(counts, 1)
    assert chisquare(eligible).pvalue > 0.01


def test_cross_env_negatives_exclude_only_the_anchor_pair():
    rng = np.random.default_rng(2)
    k = 20_000
    s, e = sample_negative_slots(5, 3, np.full(k, 2), np.full(k, 1), rng)
    assert not np.any((s == 2) & (e == 1))
    flat = np.bincount(s * 3 + e, minlength=15)
    assert flat[2 * 3 + 1] == 0
    assert chisquare(np.delete(flat, 2 * 3 + 1)).pvalue > 0.01


def test_negative_sampling_needs_two_slots():
    with pytest.raises(ValueError):
        sample_negative_slots(1, 1, np.array([0]), np.array([0]), np.random.default_rng(0))


# -- Gaussian policy -------------------------------------------------------------------------


def test_log_prob_at_mean():
    log_std = np.array([0.3, -0.7])
    mean = np.array([[0.5, -1.0]])
    got = gaussian_log_prob(mean, log_std, mean.copy())
    assert abs(got[0] - (-log_std.sum() - math.log(2 * math.pi))) < 1e-12


def test_log_prob_matches_scalar_density_and_tape():
    rng = np.random.default_rng(5)
    mean, act = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    log_std = rng.standard_normal(3) * 0.3
    oracle = [
        sum(-0.5 * ((a - m) / math.exp(s)) ** 2 - s - 0.5 * math.log(2 * math.pi) for a, m, s in zip(ar, mr, log_std))
        for ar, mr in zip(act, mean)
    ]
    assert np.allclose(gaussian_log_prob(mean, log_std, act), oracle, atol=1e-12)
    tape = Tape()
    node = gaussian_log_prob(tape.parameter(mean, "m"), tape.parameter(log_std, "s"), act, tape)
    assert np.allclose(node.value, oracle, atol=1e-12)


def test_entropy_and_kl():
    log_std = np.array([0.1, -0.2])
    assert abs(gaussian_entropy(log_std) - (log_std.sum() + (1 + math.log(2 * math.pi)))) < 1e-12
    m = np.array([[0.2, 0.4]])
    assert gaussian_kl(m, log_std, m, log_std)[0] == 0.0
    # one-dimensional closed form
    kl = gaussian_kl(np.array([[0.0]]), np.array([0.0]), np.array([[1.0]]), np.array([math.log(2.0)]))
    assert abs(kl[0] - (math.log(2.0) + (1 + 1) / 8 - 0.5)) < 1e-12


def test_log_std_gradient_is_nonzero():
    rng = np.random.default_rng(6)
    mean, act = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
    tape = Tape()
    s = tape.parameter(np.zeros(2), "log_std")
    grads = tape.backward(ops.mean(gaussian_log_prob(mean, s, act, tape)))
    assert np.all(grads["log_std"] != 0)
