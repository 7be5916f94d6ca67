"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the terminal summary.
"""
import itertools
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dtslab import kernels
from dtslab.agents import make_agent
from dtslab.envs import make_random_mdp, make_riverswim
from dtslab.mdp_core import StochasticPolicy, TabularMdp, gain, policy_key, solve_gain_bias
from dtslab.posterior import DirichletPosterior, VisitCounters, bayes_update
from dtslab.ppi import PpiConfig, run_ppi, solve_optimal_policy
from dtslab.regret_lab import bounds
from dtslab.regret_lab.experiment import load_config, run_experiment
from dtslab.regret_lab.runner import simulate

import oracles

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DELTA = 0.05
pytestmark = pytest.mark.slow


def test_bellman_consistency(verdict):
    rng = np.random.default_rng(2024)
    worst_res = worst_mc = 0.0
    n_chains, n_steps = 100, 10_000  # 10^6 simulated steps per model
    for _ in range(100):
        S, A = int(rng.integers(2, 11)), int(rng.integers(1, 5))
        theta, reward = oracles.random_model(rng, S, A)
        mdp = TabularMdp(reward, theta, 0.95)
        mu = StochasticPolicy(rng.dirichlet(np.ones(A), size=S))
        sol = solve_gain_bias(mdp, mu)
        # residual recomputed from the raw tensors, not from the solver's own chain
        P = np.einsum("sa,sat->st", mu.probs, theta)
        r = mdp.discount * np.einsum("sa,sa->s", mu.probs, reward)
        own = float(np.max(np.abs(sol.gain + sol.bias - r - P @ sol.bias)))
        worst_res = max(worst_res, sol.residual, own)
        u = rng.random((n_steps, n_chains, 2))
        tot = kernels.rollout_rewards(np.cumsum(mu.probs, axis=1), np.cumsum(theta, axis=2), reward, 0, u)
        mc = mdp.discount * tot.sum() / (n_chains * n_steps)
        worst_mc = max(worst_mc, abs(mc - sol.gain))
    ok = worst_res <= 1e-8 and worst_mc <= 1e-2
    assert verdict(ok, f"max residual {worst_res:.2e} (<= 1e-8), max |J - MC| {worst_mc:.2e} (<= 1e-2)")


def test_optimal_policy_matches_enumeration(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        S, A = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        theta, reward = oracles.random_model(rng, S, A)
        mdp = TabularMdp(reward, theta, 0.95)
        best, _ = oracles.enumerate_best_gain(theta, reward, mdp.discount)
        worst = max(worst, abs(gain(mdp, solve_optimal_policy(mdp)) - best))
    assert verdict(worst <= 1e-9, f"max |J_PI - J_enum| {worst:.2e} over 50 models (<= 1e-9)")


def test_ppi_monotone_and_epsilon_optimal(verdict):
    rng = np.random.default_rng(11)
    eps = 1e-3
    worst_drop = 0.0
    n_conv = bad_gap = bad_log = 0
    for _ in range(200):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 4))
        theta, reward = oracles.random_model(rng, S, A)
        mdp = TabularMdp(reward, theta, 0.95)
        counters = VisitCounters(S, A)
        for acts in itertools.product(range(A), repeat=S):
            h = np.zeros((S, S))
            h[0, 0] = rng.integers(50, 400)
            counters.h_pair[policy_key(np.array(acts))] = h
        mu = StochasticPolicy(rng.dirichlet(np.ones(A), size=S))
        res = run_ppi(mdp, mu, counters, PpiConfig(epsilon=eps))
        steps = np.diff(np.r_[res.j_init, res.j_trace])
        worst_drop = max(worst_drop, float(-steps.min()) if steps.size else 0.0)
        if res.converged:
            n_conv += 1
            bad_gap += res.j_star - res.j_final > eps
            bad_log += res.log_ratio_gap() > eps
    ok = worst_drop <= 1e-10 and n_conv > 0 and bad_gap == 0 and bad_log == 0
    assert verdict(ok, f"largest gain drop {max(worst_drop, 0):.1e}; {n_conv}/200 converged; "
                       f"{bad_gap} gap and {bad_log} log-ratio violations at convergence")


def test_conjugacy_exactness(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        # priors of at least one keep the grid oracle's density bounded at the simplex edge
        alpha0 = rng.uniform(1.0, 3.0, size=3)
        obs = rng.integers(0, 3, size=int(rng.integers(0, 40)))
        alpha = np.ones((3, 1, 3))
        alpha[0, 0] = alpha0
        post = DirichletPosterior(alpha)
        for o in obs:
            post = bayes_update(post, 0, 0, int(o))
        worst = max(worst, float(np.abs(post.mean()[0, 0] - oracles.grid_bayes_mean(alpha0, obs)).max()))
    assert verdict(worst <= 1e-3, f"max |posterior mean - grid Bayes| {worst:.2e} over 100 sequences (<= 1e-3)")


@pytest.fixture(scope="module")
def long_dts_runs():
    """DTS for 2^14 steps, 20 seeds each on RiverSwim(6) and on random 6x2 models."""
    runs = []
    for seed in range(20):
        for env in (make_riverswim(6, seed=seed), make_random_mdp(6, 2, seed=1000 + seed)):
            env.reset(seed=seed)
            runs.append(simulate(env, make_agent("dts", env.mdp, seed=seed), 2**14, "dts", seed))
    return runs


def test_episode_count_bounds(verdict, long_dts_runs):
    fails = 0
    m_max = k_max = 0
    for rec in long_dts_runs:
        rep = bounds.check_episode_bounds(rec.s, rec.a, rec.epoch, 6, 2)
        fails += not (rep.m_ok and rep.k_ok)
        m_max, k_max = max(m_max, rep.m_observed), max(k_max, rep.k_observed)
    T = 2**14
    assert verdict(fails == 0, f"{fails} violations in {len(long_dts_runs)} runs; max M {m_max} vs "
                               f"{bounds.m_bound(6, 2, T):.1f}, max K {k_max} vs {bounds.k_bound(6, 2, T):.1f}")


def test_regret_growth_exponent(verdict, tmp_path):
    cfg = replace(load_config(CONFIGS / "riverswim6.toml"), write_traces=False)
    assert cfg.horizons == (2**10, 2**12, 2**14, 2**16) and cfg.seeds == 20
    agg = run_experiment(cfg, str(tmp_path))
    T = str(max(cfg.horizons))
    fit = agg["agents"]["dts"]["slope_fit"]
    final = {a: agg["agents"][a]["horizons"][T]["mean_regret"] for a in ("dts", "tsde", "egreedy")}
    slope_ok = 0.35 <= fit["slope"] <= 0.65
    beat_eg = final["dts"] <= final["egreedy"]
    beat_ts = final["dts"] <= 1.25 * final["tsde"]
    detail = (f"slope {fit['slope']:.3f}±{fit['stderr']:.3f} (need [0.35, 0.65]: {'ok' if slope_ok else 'no'}); "
              f"final dts {final['dts']:.1f} vs egreedy {final['egreedy']:.1f} ({'ok' if beat_eg else 'no'}), "
              f"vs 1.25*tsde {1.25 * final['tsde']:.1f} ({'ok' if beat_ts else 'no'})")
    assert verdict(slope_ok and beat_eg and beat_ts, detail)


def test_confidence_set_coverage(verdict, long_dts_runs):
    viol = checked = 0
    for rec in long_dts_runs:
        v, c = bounds.confidence_violation_rate(rec.s, rec.a, rec.s_next, rec.epoch, rec.mdp)
        viol, checked = viol + v, checked + c
    rate = viol / checked
    assert verdict(rate <= DELTA, f"{viol}/{checked} triples outside the set, rate {rate:.4f} (<= {DELTA})")


def test_martingale_increments(verdict):
    T = 2**12
    detail = []
    ok = True
    for label, build in (("riverswim:6", lambda s: make_riverswim(6, seed=s)),
                         ("random:6x2", lambda s: make_random_mdp(6, 2, seed=500 + s))):
        ys, az_fail = [], 0
        for seed in range(100):
            env = build(seed)
            env.reset(seed=seed)
            rec = simulate(env, make_agent("dts", env.mdp, seed=seed), T, "dts", seed)
            seg = rec.decomposition().segment_of_t
            y, diam, _ = bounds.martingale_increments(rec.s, rec.a, rec.s_next, seg, rec.segments, rec.mdp)
            rep = bounds.check_martingale(y, float(diam[np.unique(seg)].max()), DELTA)
            az_fail += not rep.azuma_ok
            ys.append(y)
        pooled = bounds.check_martingale(np.concatenate(ys), 1.0, DELTA)
        ok &= pooled.ci_contains_zero and az_fail < 5
        detail.append(f"{label} mean {pooled.mean:+.2e} CI [{pooled.ci_low:+.2e}, {pooled.ci_high:+.2e}], "
                      f"Azuma failures {az_fail}/100")
    assert verdict(ok, "; ".join(detail))


def test_determinism(verdict, tmp_path):
    cfg = load_config(CONFIGS / "smoke.toml")
    run_experiment(cfg, str(tmp_path / "a"))
    run_experiment(cfg, str(tmp_path / "b"))
    files = sorted((tmp_path / "a" / "traces").glob("*.csv"))
    same = [f.read_bytes() == (tmp_path / "b" / "traces" / f.name).read_bytes() for f in files]
    ok = bool(files) and all(same)
    assert verdict(ok, f"{sum(same)}/{len(files)} trace CSVs byte-identical across repeat runs")
