import json
import math

import numpy as np
import pytest

from dtslab.agents import Segment, make_agent
from dtslab.cli import main
from dtslab.envs import make_chain, make_random_mdp, make_riverswim
from dtslab.errors import ConfigError, InsufficientPoints
from dtslab.regret_lab import bounds
from dtslab.regret_lab.decomposition import compute_decomposition
from dtslab.regret_lab.experiment import parse_config, run_experiment, seeds_for
from dtslab.regret_lab.runner import TRACE_COLUMNS, read_trace_csv, simulate, trace_csv

import oracles

# closed forms at S=6, A=2, T=2**14 (natural log)
M_BOUND_6x2_2_14 = 1 + 12 * math.log(2**14 / 12)
K_BOUND_6x2_2_14 = math.sqrt(2 * 2**14 * 12 * math.log(2**14))


def dts_record(T=3000, seed=0):
    env = make_riverswim(6, seed=seed)
    return simulate(env, make_agent("dts", env.mdp, seed=seed), T, "dts", seed)


class TestDecomposition:
    @pytest.mark.parametrize("seed", range(3))
    def test_identity_closes(self, seed):
        tr = dts_record(seed=seed).decomposition()
        t = np.arange(1, len(tr) + 1)
        assert np.all(tr.identity_residual() <= 1e-6 * t)
        assert len(tr.reg1) == len(tr.reg2) == len(tr.reg3) == len(tr.reg_total) == len(tr)

    def test_gains_match_independent_oracle(self):
        rec = dts_record(2000)
        tr = rec.decomposition()
        m = rec.mdp
        best, _ = oracles.enumerate_best_gain(m.transition, m.reward, m.discount)
        assert tr.j_star == pytest.approx(best, abs=1e-9)
        theta_hat = rec.posterior_mean()
        for i in (0, len(rec.segments) // 2, len(rec.segments) - 1):
            sg = rec.segments[i]
            t = sg.t_start
            if tr.segment_of_t[t] != i:
                continue
            assert tr.j_hat[t] == pytest.approx(oracles.straight_gain(theta_hat, m.reward, m.discount, sg.mu), abs=1e-8)
            assert tr.j_sampled[t] == pytest.approx(oracles.straight_gain(sg.theta, m.reward, m.discount, sg.mu), abs=1e-8)
        np.testing.assert_allclose(tr.reg_total, np.cumsum(best - m.discount * rec.r), atol=1e-8)

    def test_oracle_on_truth_has_no_model_terms(self):
        env = make_random_mdp(4, 2, seed=3)
        rec = simulate(env, make_agent("oracle", env.mdp), 500, "oracle")
        tr = compute_decomposition(rec.r, rec.segments, env.mdp.transition, rec.segments[-1].mu, env.mdp)
        np.testing.assert_allclose(tr.reg1, 0.0, atol=1e-12)
        np.testing.assert_allclose(tr.reg2, 0.0, atol=1e-12)
        np.testing.assert_allclose(tr.terminal_correction, 0.0, atol=1e-9)

    def test_segments_must_start_at_zero(self):
        env = make_chain(3)
        with pytest.raises(ValueError):
            compute_decomposition(np.ones(5), [Segment(t_start=2, epoch=1, mu=np.full((3, 2), 0.5))],
                                  env.mdp.transition, np.full((3, 2), 0.5), env.mdp)


class TestEpisodeBounds:
    def test_bound_closed_forms(self):
        assert bounds.m_bound(6, 2, 2**14) == pytest.approx(M_BOUND_6x2_2_14, rel=1e-15)
        assert bounds.k_bound(6, 2, 2**14) == pytest.approx(K_BOUND_6x2_2_14, rel=1e-15)
        assert bounds.m_bound(6, 2, 5) == 1.0
        assert bounds.k_bound(1, 1, 1) == pytest.approx(math.sqrt(2))

    def test_macro_count_hand_example(self):
        # single pair, epoch-start counts 0, 1, 3, 7, 10: doublings at 1->3 and 3->7 (0->1 needs N >= 1)
        counts = np.array([0, 1, 3, 7, 10]).reshape(-1, 1, 1)
        assert bounds.macro_episode_count(counts) == 3

    def test_single_pair_doubling(self):
        # with one pair every epoch start count is strictly past double the last, so M = floor(log2 N) + 1
        for N in (1, 2, 5, 16, 100):
            counts = [0]
            while counts[-1] < N:
                counts.append(min(2 * counts[-1] + 1, N) if counts[-1] else 1)
            counts = np.array(counts).reshape(-1, 1, 1)
            exp = bounds.macro_episode_count(counts)
            doublings = sum(1 for p, c in zip(counts[:-1, 0, 0], counts[1:, 0, 0]) if p >= 1 and c > 2 * p)
            assert exp == 1 + doublings

    def test_dts_run_meets_bounds(self):
        rec = dts_record(2**12)
        rep = bounds.check_episode_bounds(rec.s, rec.a, rec.epoch, 6, 2)
        assert rep.ok and rep.max_length_slack <= 0

    def test_epoch_start_counts_shape(self):
        c = bounds.epoch_start_counts([0, 1, 0, 0], [0, 0, 1, 0], [1, 2, 2, 3], 2, 2)
        assert c.shape == (4, 2, 2)
        np.testing.assert_array_equal(c[-1].sum(), 4)
        np.testing.assert_array_equal(c[2], [[1, 1], [1, 0]])  # steps 0..2 before the t=3 start


class TestConfidence:
    def test_truth_never_violates(self):
        env = make_random_mdp(3, 2, seed=0)
        assert bounds.check_confidence_set(env.mdp.transition, env.mdp, 10, 100, np.full((3, 2), 50)) == 0

    def test_empty_counts_give_wide_radius(self):
        env = make_random_mdp(3, 2, seed=0)
        wrong = np.roll(env.mdp.transition, 1, axis=2)
        assert bounds.check_confidence_set(wrong, env.mdp, 1, 10, np.zeros((3, 2))) == 0

    def test_far_center_with_many_counts_violates(self):
        env = make_chain(3)
        wrong = np.roll(env.mdp.transition, 1, axis=2)
        assert bounds.check_confidence_set(wrong, env.mdp, 10, 100, np.full((3, 2), 10**9)) == 6

    def test_rate_on_run(self):
        rec = dts_record(2000)
        viol, checked = bounds.confidence_violation_rate(rec.s, rec.a, rec.s_next, rec.epoch, rec.mdp)
        assert checked == 12 * len(np.unique(rec.epoch)) and viol <= 0.05 * checked


class TestMartingale:
    def test_deterministic_env_has_zero_increments(self):
        env = make_chain(5)
        rec = simulate(env, make_agent("oracle", env.mdp), 200, "oracle")
        seg = np.zeros(200, np.int64)
        y, diam, _ = bounds.martingale_increments(rec.s, rec.a, rec.s_next, seg, rec.segments, env.mdp)
        np.testing.assert_allclose(y, 0.0, atol=1e-12)
        assert diam[0] == pytest.approx(4.0)

    def test_report_numbers(self):
        y = np.array([1.0, -1.0, 1.0, -1.0])
        rep = bounds.check_martingale(y, diameter=2.0, delta=0.05)
        assert rep.total == 0 and rep.ci_contains_zero and rep.azuma_ok
        assert rep.azuma_bound == pytest.approx(2.0 * math.sqrt(8 * math.log(40)))
        assert not bounds.check_martingale(np.full(100, 1.0), diameter=0.01).azuma_ok


class TestSlope:
    def test_exact_power_law(self):
        fit = bounds.fit_regret_slope({T: 3.0 * T**0.5 for T in (2**10, 2**12, 2**14, 2**16)})
        assert fit.slope == pytest.approx(0.5, abs=1e-12) and fit.stderr < 1e-10
        assert math.exp(fit.intercept) == pytest.approx(3.0, rel=1e-10)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(0)
        Ts = [2**k for k in range(8, 18)]
        fit = bounds.fit_regret_slope({T: T**0.4 * math.exp(rng.normal(0, 0.05)) for T in Ts})
        assert abs(fit.slope - 0.4) < 3 * fit.stderr + 0.02

    def test_insufficient(self):
        with pytest.raises(InsufficientPoints):
            bounds.fit_regret_slope({10: 1.0, 100: 2.0, 1000: 3.0})
        with pytest.raises(InsufficientPoints):
            bounds.fit_regret_slope({100: 1.0, 200: 2.0, 300: 3.0, 400: 4.0})
        with pytest.raises(InsufficientPoints):
            bounds.fit_regret_slope({10: 1.0, 100: -2.0, 1000: 3.0, 10**4: 4.0})


class TestConfig:
    def test_defaults_and_sorting(self):
        cfg = parse_config('[experiment]\nhorizons = [400, 100, 100]\nagents = ["dts", "random"]\n')
        assert cfg.horizons == (100, 400) and cfg.agents == ("dts", "random")

    @pytest.mark.parametrize("text,line", [
        ('[experiment]\nagents = []\n', 2),
        ('[experiment]\nseeds = 3\nbogus = 1\n', 3),
        ('[experiment]\nagents = ["ucrl"]\n', 2),
        ('[model]\ndiscount = 1.5\n', 2),
        ('[weird]\n', 1),
        ('[experiment]\nworkers = "two"\n', 2),
    ])
    def test_errors_name_line(self, text, line):
        with pytest.raises(ConfigError, match=f":{line}:"):
            parse_config(text, "cfg.toml")

    def test_malformed_toml(self):
        with pytest.raises(ConfigError):
            parse_config("[experiment\n")

    def test_seed_streams_independent(self):
        cfg = parse_config("[experiment]\nseed_base = 4\n")
        a, b = seeds_for(cfg, 0), seeds_for(cfg, 1)
        assert len({a["env"], a["agent"], b["env"], b["agent"]}) == 4
        assert a["instance"] == b["instance"] == 0


SMALL = """
[experiment]
env = "riverswim:4"
agents = ["dts", "random"]
horizons = [64, 128, 256, 2048]
seeds = 2
"""


class TestRunAndCli:
    def test_trace_csv_columns_and_round_trip(self, tmp_path):
        rec = dts_record(300)
        path = tmp_path / "t.csv"
        path.write_text(trace_csv(rec))
        assert path.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
        cols = read_trace_csv(path)
        np.testing.assert_array_equal(cols["a"], rec.a)
        np.testing.assert_array_equal(cols["r"], rec.r)

    def test_run_experiment_outputs(self, tmp_path):
        agg = run_experiment(parse_config(SMALL), str(tmp_path))
        assert {"dts", "random"} == set(agg["agents"])
        for name in ("aggregate.json", "bounds.json", "regret_curves.svg"):
            assert (tmp_path / name).exists()
        assert len(list((tmp_path / "traces").glob("*.csv"))) == 4

    def test_cli_end_to_end(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL)
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--seed-base", "3"]) == 0
        trace = sorted((out / "traces").glob("dts*.csv"))[0]
        capsys.readouterr()
        assert main(["check-bounds", "--trace", str(trace)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["episode_bounds"]["ok"] and report["T"] == 2048
        svg = tmp_path / "again.svg"
        assert main(["plot", "--agg", str(out / "aggregate.json"), "--out", str(svg)]) == 0
        assert svg.read_text().lstrip().startswith("<?xml")

    def test_cli_bad_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text('[experiment]\nagents = []\n')
        assert main(["run", "--config", str(cfg)]) == 2
        assert "bad.toml:2" in capsys.readouterr().err

    def test_workers_match_serial(self, tmp_path):
        serial = run_experiment(parse_config(SMALL), str(tmp_path / "a"))
        par = run_experiment(parse_config(SMALL + "workers = 2\n"), str(tmp_path / "b"))
        for name in ("dts", "random"):
            assert serial["agents"][name]["horizons"] == par["agents"][name]["horizons"]
        for f in sorted((tmp_path / "a" / "traces").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / "traces" / f.name).read_bytes()


class TestSpecExamples:
    def test_linear_regret_slope_one(self):
        fit = bounds.fit_regret_slope({T: 0.3 * T for T in (10, 100, 1000, 10_000)})
        assert fit.slope == pytest.approx(1.0, abs=1e-12)

    def test_short_horizon_trivial_bound(self):
        rep = bounds.check_episode_bounds([0, 1, 2], [0, 1, 0], [1, 2, 3], 6, 2)
        assert rep.m_bound == 1.0 and rep.m_observed == 1 and rep.m_ok

    def test_perfect_knowledge_segment_has_zero_model_terms(self):
        from dtslab.mdp_core import StochasticPolicy
        from dtslab.ppi import solve_optimal_policy
        env = make_random_mdp(3, 2, seed=6)
        pi = StochasticPolicy.one_hot(solve_optimal_policy(env.mdp).action_of, 2).probs
        seg = [Segment(t_start=0, epoch=1, mu=pi, theta=env.mdp.transition.copy())]
        rng_env = make_random_mdp(3, 2, seed=6)
        rng_env.reset(seed=1)
        rec = simulate(rng_env, make_agent("oracle", env.mdp), 20_000, "oracle")
        tr = compute_decomposition(rec.r, seg, env.mdp.transition, pi, env.mdp)
        np.testing.assert_allclose(tr.reg1, 0.0, atol=1e-12)
        np.testing.assert_allclose(tr.reg2, 0.0, atol=1e-12)
        assert abs(tr.reg3[-1]) / len(tr) < 5e-3  # realisation noise only

    def test_identity_with_straight_line_evaluator_3_states(self):
        env = make_random_mdp(3, 2, seed=2)
        env.reset(seed=2)
        rec = simulate(env, make_agent("dts", env.mdp, seed=2), 1500, "dts", 2)
        m = rec.mdp
        theta_hat = rec.posterior_mean()
        seg_of_t = np.searchsorted([sg.t_start for sg in rec.segments], np.arange(rec.horizon), side="right") - 1
        j_star, _ = oracles.enumerate_best_gain(m.transition, m.reward, m.discount)
        j_term = oracles.straight_gain(theta_hat, m.reward, m.discount, rec.segments[-1].mu)
        jh = np.array([oracles.straight_gain(theta_hat, m.reward, m.discount, sg.mu) for sg in rec.segments])
        js = np.array([oracles.straight_gain(sg.theta, m.reward, m.discount, sg.mu) for sg in rec.segments])
        scaled = m.discount * rec.r
        reg1 = np.cumsum(j_term - jh[seg_of_t])
        reg2 = np.cumsum(jh[seg_of_t] - js[seg_of_t])
        reg3 = np.cumsum(js[seg_of_t] - scaled)
        t = np.arange(1, rec.horizon + 1)
        reg_total = np.cumsum(j_star - scaled)
        assert np.all(np.abs(reg_total - (reg1 + reg2 + reg3 + t * (j_star - j_term))) <= 1e-6 * t)
        tr = rec.decomposition()
        np.testing.assert_allclose(tr.reg1, reg1, atol=1e-6)
        np.testing.assert_allclose(tr.reg2, reg2, atol=1e-6)
        np.testing.assert_allclose(tr.reg3, reg3, atol=1e-6)

    def test_two_state_symmetric_martingale_clt(self):
        from dtslab.envs import Environment
        from dtslab.mdp_core import TabularMdp
        theta = np.full((2, 2, 2), 0.5)
        theta[:, 1] = [[0.8, 0.2], [0.2, 0.8]]
        # symmetric dynamics; unequal rewards so the bias, and hence Y, is not identically zero
        mdp = TabularMdp(np.array([[0.2, 0.6], [0.9, 0.3]]), theta, 0.95)
        env = Environment(mdp, 0, np.random.default_rng(3), "sym2")
        rec = simulate(env, make_agent("random", mdp, seed=3), 10**5, "random")
        seg = np.zeros(rec.horizon, np.int64)
        y, diam, _ = bounds.martingale_increments(rec.s, rec.a, rec.s_next, seg, rec.segments, mdp)
        rep = bounds.check_martingale(y, float(diam[0]))
        assert rep.ci_contains_zero and rep.azuma_ok and np.abs(y).max() > 0

    def test_per_epoch_diagnostic_on_most_seeds(self):
        ok = []
        for seed in range(20):
            rec = dts_record(2**12, seed=seed)
            tr = rec.decomposition()
            ok.append(bounds.per_epoch_regret(rec.r, rec.epoch, tr.j_star, rec.mdp.discount, 6)["ok"])
        assert np.mean(ok) >= 0.95

    @pytest.mark.parametrize("seed", range(10))
    def test_epsilon_policy_shortfall_bound(self, seed):
        rng = np.random.default_rng(seed)
        env = make_random_mdp(4, 3, seed=seed)
        rep = bounds.epsilon_policy_shortfall(env.mdp, rng.dirichlet(np.ones(3), size=4))
        assert rep["ok"] and rep["shortfall"] <= rep["bound"]

    def test_pair_frequency_envelope_helper(self):
        P = np.array([[0.5, 0.5], [0.5, 0.5]])
        h = np.array([[25.0, 25.0], [25.0, 25.0]])
        rep = bounds.transition_envelope(h, 100, np.array([0.5, 0.5]), P)
        assert rep["gap"] == 0.0 and rep["ok"]
        assert rep["envelope"] == pytest.approx(bounds.rho(100) / 10)

    def test_rho_floor(self):
        assert bounds.rho(1) == bounds.rho(3) == pytest.approx(math.sqrt(math.log(math.log(3))))

    def test_aggregate_reports_bound_forms(self, tmp_path):
        agg = run_experiment(parse_config(SMALL), str(tmp_path))
        h = agg["agents"]["dts"]["horizons"]["2048"]["bound_forms"]
        assert set(h) == {"d_sqrt_sat", "sqrt_t_over_s2"}
        assert h["sqrt_t_over_s2"]["value"] == pytest.approx(math.sqrt(2048) / 16)
        assert "eps_policy" in agg["agents"]["dts"] and "assumptions" in agg["agents"]["dts"]
