"""Compiled vs numpy kernels: rover physics step and GAE.

    python3 benchmarks/bench_kernels.py [--envs 256] [--repeat 20]

Both backends are fed identical inputs; the script also reports the
largest difference between their outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from slr.env import EnvConfig, RoverEnv
from slr.kernels import backend


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_physics(envs: int, repeat: int) -> dict:
    cfg = EnvConfig(num_envs=envs)
    env = RoverEnv(cfg, seed=0)
    env.reset()
    actions = np.random.default_rng(0).uniform(-1, 1, (envs, 2))
    out = {}
    finals = {}
    for name in ("python", "cython"):
        k = backend(name)
        state, torques, contact = env.state.copy(), env.torques.copy(), env.contact.copy()

        def step():
            k.integrate(state, env.dyn, actions, *env.terrain.arrays, env.consts, cfg.substeps,
                        cfg.dt / cfg.substeps, torques, contact)

        out[name] = _best(step, repeat)
        s, t, c = env.state.copy(), env.torques.copy(), env.contact.copy()
        for _ in range(10):
            k.integrate(s, env.dyn, actions, *env.terrain.arrays, env.consts, cfg.substeps,
                        cfg.dt / cfg.substeps, t, c)
        finals[name] = s
    out["max_abs_diff_after_10_steps"] = float(np.max(np.abs(finals["python"] - finals["cython"])))
    return out


def bench_gae(envs: int, horizon: int, repeat: int) -> dict:
    rng = np.random.default_rng(1)
    r, v = rng.standard_normal((horizon, envs)), rng.standard_normal((horizon, envs))
    d = (rng.random((horizon, envs)) < 0.05).astype(float)
    last = rng.standard_normal(envs)
    out, advs = {}, {}
    for name in ("python", "cython"):
        k = backend(name)
        adv = np.empty_like(r)
        out[name] = _best(lambda: k.gae(r, v, d, last, 0.99, 0.95, adv), repeat)
        advs[name] = adv.copy()
    out["max_abs_diff"] = float(np.max(np.abs(advs["python"] - advs["cython"])))
    return out


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--envs", type=int, default=256)
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("--repeat", type=int, default=20)
    a = p.parse_args()
    phys = bench_physics(a.envs, a.repeat)
    gae = bench_gae(a.envs, a.horizon, a.repeat)
    print(f"{'kernel':<22}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}{'max |diff|':>14}")
    for label, res, diff in (
        (f"physics step ({a.envs} envs)", phys, phys["max_abs_diff_after_10_steps"]),
        (f"gae ({a.horizon}x{a.envs})", gae, gae["max_abs_diff"]),
    ):
        print(f"{label:<22}{res['python'] * 1e3:>14.3f}{res['cython'] * 1e3:>14.3f}"
              f"{res['python'] / res['cython']:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
