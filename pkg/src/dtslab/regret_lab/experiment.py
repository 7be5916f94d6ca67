"""Experiment grid: config parsing, per-run evaluation, aggregation and output files.

Agents never see their horizon, so each (agent, seed) pair is simulated once
at the largest configured horizon and every shorter horizon is evaluated on
the matching prefix.
"""
from __future__ import annotations

import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..agents import AGENT_NAMES, make_agent
from ..envs import R_MIN, make_env
from ..errors import ConfigError, InsufficientPoints
from ..ppi import PpiConfig, solve_optimal_policy
from . import bounds
from .runner import RunRecord, simulate, trace_csv

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

LEARNING_AGENTS = ("dts", "tsde")
CURVE_POINTS = 120


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "riverswim:6"
    agents: tuple = ("dts",)
    horizons: tuple = (1024,)
    seeds: int = 1
    seed_base: int = 0
    output_dir: str = "dtslab_out"
    workers: int = 1
    strict_per_step: bool = False
    write_traces: bool = True
    env_instance_seed: int = 0
    instance_per_seed: bool = False
    discount: float = 0.95
    r_min: float = R_MIN
    prior_alpha: float = 1.0
    epsilon: float = 1e-3
    kl_tolerance: float = 1e-6
    max_iterations: int = 1000
    delta: float = 0.05

    @property
    def ppi(self) -> PpiConfig:
        return PpiConfig(epsilon=self.epsilon, max_iterations=self.max_iterations,
                         kl_tolerance=self.kl_tolerance, gamma_big=self.discount)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agents"] = list(self.agents)
        d["horizons"] = list(self.horizons)
        return d


_SECTIONS = {
    "experiment": {"env", "agents", "horizons", "seeds", "seed_base", "output_dir", "workers",
                   "strict_per_step", "write_traces", "env_instance_seed", "instance_per_seed"},
    "model": {"discount", "r_min", "prior_alpha"},
    "ppi": {"epsilon", "kl_tolerance", "max_iterations"},
    "bounds": {"delta"},
}


def _line_of(text: str, key: str) -> int:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    pat = re.compile(rf"^\s*\[{re.escape(key)}\]")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return 0


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate TOML config text; errors name the offending line."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def fail(key: str, msg: str):
        ln = _line_of(text, key)
        raise ConfigError(f"{source}:{ln}: {msg}" if ln else f"{source}: {msg}")

    flat: dict[str, Any] = {}
    for sec, body in doc.items():
        if sec not in _SECTIONS:
            fail(sec, f"unknown section [{sec}]")
        if not isinstance(body, dict):
            fail(sec, f"[{sec}] must be a table")
        for key, val in body.items():
            if key not in _SECTIONS[sec]:
                fail(key, f"unknown key {key!r} in [{sec}]")
            flat[key] = val

    cfg = ExperimentConfig()
    kw: dict[str, Any] = {}
    for key, val in flat.items():
        default = getattr(cfg, key)
        if key in ("agents", "horizons"):
            if not isinstance(val, list):
                fail(key, f"{key} must be a list")
            val = tuple(val)
        elif isinstance(default, bool):
            if not isinstance(val, bool):
                fail(key, f"{key} must be true or false")
        elif isinstance(default, int):
            if isinstance(val, bool) or not isinstance(val, int):
                fail(key, f"{key} must be an integer")
        elif isinstance(default, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                fail(key, f"{key} must be a number")
            val = float(val)
        elif isinstance(default, str) and not isinstance(val, str):
            fail(key, f"{key} must be a string")
        kw[key] = val
    cfg = replace(cfg, **kw)

    if not cfg.agents:
        fail("agents", "agent list is empty")
    for name in cfg.agents:
        if name not in AGENT_NAMES:
            fail("agents", f"unknown agent {name!r}; choose from {', '.join(AGENT_NAMES)}")
    if len(set(cfg.agents)) != len(cfg.agents):
        fail("agents", "agent list has duplicates")
    if not cfg.horizons or any(not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in cfg.horizons):
        fail("horizons", "horizons must be a nonempty list of positive integers")
    if cfg.seeds < 1:
        fail("seeds", "seeds must be at least 1")
    if cfg.workers < 1:
        fail("workers", "workers must be at least 1")
    if not 0.0 < cfg.discount < 1.0:
        fail("discount", "discount must lie in (0, 1)")
    if not 0.0 < cfg.r_min < 1.0:
        fail("r_min", "r_min must lie in (0, 1)")
    if cfg.prior_alpha <= 0:
        fail("prior_alpha", "prior_alpha must be positive")
    if cfg.epsilon <= 0 or cfg.kl_tolerance <= 0:
        fail("epsilon" if cfg.epsilon <= 0 else "kl_tolerance", "tolerances must be positive")
    if cfg.max_iterations < 1:
        fail("max_iterations", "max_iterations must be at least 1")
    if not 0.0 < cfg.delta < 1.0:
        fail("delta", "delta must lie in (0, 1)")
    return replace(cfg, horizons=tuple(sorted(set(cfg.horizons))))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def seeds_for(cfg: ExperimentConfig, index: int) -> dict:
    """Independent integer seeds for the environment noise, the agent and the model instance."""
    def draw(stream: int) -> int:
        return int(np.random.SeedSequence([cfg.seed_base, index, stream]).generate_state(1, np.uint64)[0] >> 1)
    inst = draw(2) if cfg.instance_per_seed else cfg.env_instance_seed
    return {"env": draw(0), "agent": draw(1), "instance": inst}


def build_env(cfg: ExperimentConfig, index: int):
    sd = seeds_for(cfg, index)
    return make_env(cfg.env, seed=sd["env"], instance_seed=sd["instance"], r_min=cfg.r_min, discount=cfg.discount)


def run_single(cfg: ExperimentConfig, agent_name: str, index: int) -> RunRecord:
    """Simulate one (agent, seed) pair to the largest horizon."""
    env = build_env(cfg, index)
    sd = seeds_for(cfg, index)
    agent = make_agent(agent_name, env.mdp, seed=sd["agent"], cfg=cfg.ppi, prior_alpha=cfg.prior_alpha,
                       strict_per_step=cfg.strict_per_step)
    return simulate(env, agent, max(cfg.horizons), agent_name, index, cfg.prior_alpha)


def _curve_points(T: int) -> np.ndarray:
    return np.unique(np.geomspace(1, T, CURVE_POINTS).astype(np.int64))


def evaluate_record(rec: RunRecord, cfg: ExperimentConfig) -> dict:
    """Regret, bound and diagnostic numbers for every configured horizon of one run."""
    S, A = rec.mdp.n_states, rec.mdp.n_actions
    T_max = rec.horizon
    full = rec.decomposition(T_max)
    y, seg_diam, seg_span = bounds.martingale_increments(rec.s, rec.a, rec.s_next, full.segment_of_t,
                                                         rec.segments, rec.mdp)
    per_T = {}
    for T in cfg.horizons:
        tr = full if T == T_max else rec.decomposition(T)
        ep = bounds.check_episode_bounds(rec.s, rec.a, rec.epoch, S, A, T)
        viol, checked = bounds.confidence_violation_rate(rec.s, rec.a, rec.s_next, rec.epoch, rec.mdp, T,
                                                         rec.prior_alpha)
        used = np.unique(tr.segment_of_t)
        mart = bounds.check_martingale(y[:T], float(seg_diam[used].max()), cfg.delta, float(seg_span[used].max()))
        per_T[str(T)] = {
            "reg_total": float(tr.reg_total[-1]),
            "reg1": float(tr.reg1[-1]),
            "reg2": float(tr.reg2[-1]),
            "reg3": float(tr.reg3[-1]),
            "terminal_correction": float(tr.terminal_correction[-1]),
            "reg_eq2": float(tr.reg_eq2[-1]),
            "identity_residual": float(tr.identity_residual().max()),
            "j_terminal": tr.j_terminal,
            "episode_bounds": ep.to_dict(),
            "confidence": {"violations": viol, "checked": checked},
            "martingale": mart.to_dict(),
            "per_epoch": bounds.per_epoch_regret(rec.r[:T], rec.epoch[:T], tr.j_star, rec.mdp.discount, S, cfg.delta),
        }
    # one PPI run per epoch; later segments of the same epoch are mid-epoch remixes
    first = {}
    for sg in rec.segments:
        if sg.theta is not None and sg.status:
            first.setdefault(sg.epoch, sg)
    segs = list(first.values())
    ppi_stats = {
        "n_runs": len(segs),
        "converged": int(sum(sg.converged for sg in segs)),
        "statuses": {k: int(sum(sg.status == k for sg in segs)) for k in sorted({sg.status for sg in segs})},
    }
    pi_star = solve_optimal_policy(rec.mdp).action_of
    pts = _curve_points(T_max)
    return {
        "agent": rec.agent,
        "seed_index": rec.seed,
        "env": rec.env_name,
        "j_star": full.j_star,
        "horizons": per_T,
        "curve_t": pts.tolist(),
        "curve_reg": full.reg_total[pts - 1].tolist(),
        "ppi": ppi_stats,
        "n_segments": len(rec.segments),
        "shape": [S, A],
        "all_ppi_converged": bool(segs) and ppi_stats["converged"] == len(segs),
        "eps_policy": bounds.epsilon_policy_shortfall(rec.mdp, rec.terminal_mixture(T_max)),
        "assumptions": bounds.assumption_checks(rec.mdp, pi_star, cfg.discount),
    }


def trace_name(agent: str, index: int, T: int) -> str:
    return f"{agent}_seed{index:03d}_T{T}"


def _task(args) -> dict:
    cfg, agent, index, out_dir = args
    rec = run_single(cfg, agent, index)
    result = evaluate_record(rec, cfg)
    if cfg.write_traces and out_dir is not None:
        tdir = Path(out_dir) / "traces"
        tdir.mkdir(parents=True, exist_ok=True)
        name = trace_name(agent, index, rec.horizon)
        (tdir / f"{name}.csv").write_text(trace_csv(rec))
        meta = {"env": cfg.env, "agent": agent, "seed_index": index, "seeds": seeds_for(cfg, index),
                "horizon": rec.horizon, "prior_alpha": cfg.prior_alpha, "delta": cfg.delta,
                "mdp": rec.mdp.to_dict()}
        (tdir / f"{name}.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return result


def run_grid(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> list[dict]:
    """Evaluate every (agent, seed) pair, in parallel when ``cfg.workers > 1``; results in grid order."""
    tasks = [(cfg, agent, i, out_dir) for agent in cfg.agents for i in range(cfg.seeds)]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    return results


def _mean_se(xs) -> tuple[float, float]:
    x = np.asarray(xs, float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def aggregate(results: list[dict], cfg: ExperimentConfig) -> dict:
    """Per-agent means and standard errors, slope fits, and pass/fail for every bound check."""
    out: dict[str, Any] = {"config": cfg.to_dict(), "agents": {}}
    failures: list[str] = []
    for agent in cfg.agents:
        runs = [r for r in results if r["agent"] == agent]
        per_T: dict[str, Any] = {}
        for T in cfg.horizons:
            key = str(T)
            rows = [r["horizons"][key] for r in runs]
            m, se = _mean_se([x["reg_total"] for x in rows])
            parts = {p: _mean_se([x[p] for x in rows])[0] for p in ("reg1", "reg2", "reg3", "terminal_correction", "reg_eq2")}
            ep_fail = [r["seed_index"] for r, x in zip(runs, rows) if not x["episode_bounds"]["ok"]]
            viol = sum(x["confidence"]["violations"] for x in rows)
            checked = sum(x["confidence"]["checked"] for x in rows)
            az_fail = sum(not x["martingale"]["azuma_ok"] for x in rows)
            per_T[key] = {
                "mean_regret": m,
                "stderr_regret": se,
                **{f"mean_{p}": v for p, v in parts.items()},
                "max_identity_residual": max(x["identity_residual"] for x in rows),
                "episode_bound_failures": ep_fail,
                "m_observed_max": max(x["episode_bounds"]["m_observed"] for x in rows),
                "m_bound": rows[0]["episode_bounds"]["m_bound"],
                "k_observed_max": max(x["episode_bounds"]["k_observed"] for x in rows),
                "k_bound": rows[0]["episode_bounds"]["k_bound"],
                "confidence_violation_rate": viol / checked if checked else 0.0,
                "azuma_failure_rate": az_fail / len(rows),
                "martingale_ci_contains_zero": float(np.mean([x["martingale"]["ci_contains_zero"] for x in rows])),
                "per_epoch_ok_rate": float(np.mean([x["per_epoch"]["ok"] for x in rows])),
            }
            # the two candidate overall rates, as regret over each bound form at this horizon
            D = runs[0]["assumptions"]["diameter_optimal"]
            S, A = runs[0]["shape"]
            forms = {"d_sqrt_sat": D * math.sqrt(S * A * T), "sqrt_t_over_s2": math.sqrt(T) / S**2}
            per_T[key]["bound_forms"] = {k: {"value": v, "regret_ratio": m / v} for k, v in forms.items()}
            if agent in LEARNING_AGENTS and ep_fail:
                failures.append(f"{agent} T={T}: episode bounds violated on seeds {ep_fail}")
            if per_T[key]["confidence_violation_rate"] > cfg.delta:
                failures.append(f"{agent} T={T}: confidence-set violation rate above delta")
            if agent in LEARNING_AGENTS and len(rows) >= 20 and per_T[key]["per_epoch_ok_rate"] < 1.0 - cfg.delta:
                failures.append(f"{agent} T={T}: per-epoch regret bound held on fewer than 1 - delta of seeds")
            if len(rows) >= 20 and per_T[key]["azuma_failure_rate"] >= cfg.delta:
                failures.append(f"{agent} T={T}: Azuma tail failure rate at or above delta")
        curve_t = runs[0]["curve_t"]
        curves = np.array([r["curve_reg"] for r in runs])
        entry = {
            "horizons": per_T,
            "curve": {
                "t": curve_t,
                "mean": curves.mean(axis=0).tolist(),
                "stderr": (curves.std(axis=0, ddof=1) / math.sqrt(len(runs))).tolist() if len(runs) > 1
                else [0.0] * len(curve_t),
            },
            "ppi": {
                "n_runs": int(sum(r["ppi"]["n_runs"] for r in runs)),
                "converged": int(sum(r["ppi"]["converged"] for r in runs)),
            },
            "j_star": runs[0]["j_star"],
        }
        conv = [r for r in runs if r["all_ppi_converged"]]
        entry["eps_policy"] = {
            "runs_all_converged": len(conv),
            "violations": int(sum(not r["eps_policy"]["ok"] for r in conv)),
        }
        if entry["eps_policy"]["violations"]:
            failures.append(f"{agent}: epsilon-policy shortfall above its bound on fully converged runs")
        entry["assumptions"] = runs[0]["assumptions"]
        try:
            fit = bounds.fit_regret_slope({T: per_T[str(T)]["mean_regret"] for T in cfg.horizons})
            entry["slope_fit"] = fit.to_dict()
        except InsufficientPoints as exc:
            entry["slope_fit"] = {"error": str(exc)}
        out["agents"][agent] = entry
    out["failures"] = failures
    out["ok"] = not failures
    return out


def bounds_summary(agg: dict) -> dict:
    """The check-only slice of ``aggregate``."""
    keys = ("episode_bound_failures", "m_observed_max", "m_bound", "k_observed_max", "k_bound",
            "confidence_violation_rate", "azuma_failure_rate", "martingale_ci_contains_zero",
            "per_epoch_ok_rate", "max_identity_residual", "bound_forms")
    rep = {"ok": agg["ok"], "failures": agg["failures"], "agents": {}}
    for agent, entry in agg["agents"].items():
        rep["agents"][agent] = {
            "slope_fit": entry["slope_fit"],
            "eps_policy": entry["eps_policy"],
            "assumptions": entry["assumptions"],
            "horizons": {T: {k: v[k] for k in keys} for T, v in entry["horizons"].items()},
        }
    return rep


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> dict:
    """Run the grid and write traces, ``aggregate.json``, ``bounds.json`` and ``regret_curves.svg``."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_grid(cfg, str(out))
    agg = aggregate(results, cfg)
    (out / "aggregate.json").write_text(json.dumps(agg, indent=1, sort_keys=True))
    (out / "bounds.json").write_text(json.dumps(bounds_summary(agg), indent=1, sort_keys=True))
    from .plotting import plot_aggregate
    plot_aggregate(agg, out / "regret_curves.svg")
    return agg
