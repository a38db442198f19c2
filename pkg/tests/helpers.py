"""Independent numerical oracles shared by the test modules."""

from __future__ import annotations

import numpy as np

from slr.tensor import ParamSet, init_mlp


def central_difference(f, arr: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    assert arr.flags.c_contiguous
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def random_mlp_loss_setup(rng: np.random.Generator, sizes: list[int], activation: str):
    net: ParamSet = init_mlp("net", sizes, rng, activation=activation, output_gain=1.0, dtype=np.float64)
    for _, b in net.layers:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((3, sizes[0]))
    target = rng.standard_normal((3, sizes[-1]))
    return net, x, target


def tiny_config(kind: str = "slr", **overrides):
    """A RunConfig small enough for unit tests: few envs, short horizon, narrow nets."""
    from slr.config import load_config

    sets = [
        f"variant.kind={kind!r}".replace("'", '"'),
        "env.num_envs=4",
        "env.horizon=6",
        "networks.encoder_hidden=[16]",
        "networks.actor_hidden=[16, 8]",
        "networks.critic_hidden=[16, 8]",
        "networks.transition_hidden=[16]",
        "variant.teacher_hidden=[8]",
        "ppo.epochs=1",
        "ppo.minibatches=2",
        "train.iterations=2",
        "train.checkpoint_every=1",
    ]
    sets += [f"{k}={v}" for k, v in overrides.items()]
    return load_config(None, sets)


def filled_buffer(cfg, seed: int = 0):
    """(agent, buffer, rngs) after one rollout collected with ``cfg``."""
    from slr.env import ACTION_DIM, OBS_DIM, PRIVILEGED_DIM
    from slr.ppo import RolloutBuffer
    from slr.runner import _streams, collect, make_agent, start_rollout

    rngs = _streams(seed)
    agent = make_agent(cfg, rngs["init"])
    ro = start_rollout(cfg)
    buf = RolloutBuffer(ro.env.num_envs, cfg.env.horizon, OBS_DIM, agent.dims.history_dim, PRIVILEGED_DIM, ACTION_DIM)
    collect(ro, agent, buf, cfg.ppo.gamma, rngs["action"])
    return agent, buf, rngs


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
