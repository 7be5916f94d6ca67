"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

``--end-to-end`` also times one DTS run on RiverSwim(6) in a fresh process
per backend, toggled by ``DTSLAB_DISABLE_NUMBA``.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dtslab import _kernels_numba as nb
from dtslab import _kernels_numpy as npk


def _case(S, A, seed=0):
    rng = np.random.default_rng(seed)
    theta = rng.dirichlet(np.ones(S), size=(S, A))
    reward = rng.uniform(1e-3, 1.0, size=(S, A))
    mu = rng.dirichlet(np.ones(A), size=S)
    return theta, reward, mu


def _ppi_args(S, A):
    theta, reward, mu = _case(S, A)
    star = np.argmax(reward, axis=1).astype(np.int64)
    P, r = npk.induced(theta, reward, np.eye(A)[star])
    j_star, _ = npk.gain_bias(P, r)
    d_star = np.full(S, 1.0 / S)
    key = np.argmax(mu, axis=1).astype(np.int64)
    return (theta, reward, mu, star, j_star, d_star, 3.0, key, 200, 1e-12, 1e-6, -1.0)


def _rollout_args(S, A, n_steps=20_000, n_chains=4):
    theta, reward, mu = _case(S, A)
    u = np.random.default_rng(1).random((n_steps, n_chains, 2))
    return (np.cumsum(mu, axis=1), np.cumsum(theta, axis=2), reward, 0, u)


def _hitting_args(S):
    theta, _, _ = _case(S, 1)
    return (np.cumsum(theta[:, 0], axis=1), 0, S - 1, 2_000, 10_000, 3)


CASES = {
    "induced+gain_bias S=6": lambda m: m.gain_bias(*m.induced(*_case(6, 2))),
    "ppi_iterate S=6 A=2": (lambda args: lambda m: m.ppi_iterate(*args))(_ppi_args(6, 2)),
    "ppi_iterate S=20 A=4": (lambda args: lambda m: m.ppi_iterate(*args))(_ppi_args(20, 4)),
    "rollout 20k steps x4": (lambda args: lambda m: m.rollout_rewards(*args))(_rollout_args(6, 2)),
    "hitting 2k episodes S=8": (lambda args: lambda m: m.hitting_lengths(*args))(_hitting_args(8)),
}


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


E2E_SNIPPET = """
import time
from dtslab import BACKEND
from dtslab.agents import make_agent
from dtslab.envs import make_riverswim
from dtslab.regret_lab.runner import simulate
env = make_riverswim(6, seed=0)
simulate(env, make_agent("dts", env.mdp, seed=0), 64)  # warm caches
env = make_riverswim(6, seed=0)
t0 = time.perf_counter()
simulate(env, make_agent("dts", env.mdp, seed=0), {T})
print(BACKEND, time.perf_counter() - t0)
"""


def end_to_end(T: int = 8192) -> None:
    for flag in ("1", "0"):
        env = dict(os.environ, DTSLAB_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E_SNIPPET.format(T=T)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"dts riverswim:6 T={T} backend={out[0]:6s} {float(out[1]):8.2f} s")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--end-to-end", action="store_true")
    args = p.parse_args(argv)
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, run in CASES.items():
        run(nb)  # compile (or load from cache) outside the timing
        t_np = _best_of(lambda: run(npk), args.repeat)
        t_nb = _best_of(lambda: run(nb), args.repeat)
        print(f"{name:28s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:7.1f}x")
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
