"""Command line: ``dtslab run | check-bounds | plot``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import DtsLabError


def _cmd_run(args) -> int:
    from .regret_lab.experiment import load_config, run_experiment

    cfg = load_config(args.config)
    over = {}
    if args.workers is not None:
        over["workers"] = args.workers
    if args.seed_base is not None:
        over["seed_base"] = args.seed_base
    if args.strict_per_step:
        over["strict_per_step"] = True
    if args.no_traces:
        over["write_traces"] = False
    cfg = replace(cfg, **over)
    out = args.out or cfg.output_dir
    agg = run_experiment(cfg, out)
    for agent, entry in agg["agents"].items():
        T = max(int(k) for k in entry["horizons"])
        h = entry["horizons"][str(T)]
        fit = entry["slope_fit"]
        slope = f"{fit['slope']:.3f}±{fit['stderr']:.3f}" if "slope" in fit else "n/a"
        print(f"{agent:8s} T={T:<7d} regret={h['mean_regret']:10.2f} ±{h['stderr_regret']:.2f}  slope={slope}")
    for msg in agg["failures"]:
        print(f"FAIL {msg}", file=sys.stderr)
    print(f"outputs in {out}")
    return 0 if agg["ok"] else 1


def _cmd_check(args) -> int:
    import numpy as np

    from .mdp_core import TabularMdp
    from .regret_lab import bounds
    from .regret_lab.runner import read_trace_csv

    trace = Path(args.trace)
    cols = read_trace_csv(trace)
    meta_path = trace.with_name(trace.stem + ".meta.json")
    if not meta_path.exists():
        print(f"missing sidecar {meta_path}", file=sys.stderr)
        return 2
    meta = json.loads(meta_path.read_text())
    mdp = TabularMdp.from_dict(meta["mdp"])
    S, A = mdp.n_states, mdp.n_actions
    T = cols["t"].size
    ep = bounds.check_episode_bounds(cols["s"], cols["a"], cols["epoch"], S, A, T)
    viol, checked = bounds.confidence_violation_rate(cols["s"], cols["a"], cols["s_next"], cols["epoch"], mdp, T,
                                                     meta.get("prior_alpha", 1.0))
    delta = meta.get("delta", 0.05)
    resid = np.abs(cols["reg_total"] - cols["reg1"] - cols["reg2"] - cols["reg3"])
    report = {
        "trace": str(trace),
        "T": T,
        "episode_bounds": ep.to_dict(),
        "confidence": {"violations": viol, "checked": checked, "rate": viol / checked if checked else 0.0},
        "final": {k: float(cols[k][-1]) for k in ("reg_total", "reg1", "reg2", "reg3")},
        "terminal_correction_final": float(resid[-1]),
    }
    ok = ep.ok and report["confidence"]["rate"] <= delta
    report["ok"] = ok
    print(json.dumps(report, indent=1))
    return 0 if ok else 1


def _cmd_plot(args) -> int:
    from .regret_lab.plotting import plot_file

    print(plot_file(args.agg, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtslab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an experiment grid from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--workers", type=int)
    r.add_argument("--seed-base", type=int)
    r.add_argument("--strict-per-step", action="store_true", help="rerun full PPI after every step")
    r.add_argument("--no-traces", action="store_true", help="skip per-run trace CSVs")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check-bounds", help="audit one trace CSV against the episode and confidence bounds")
    c.add_argument("--trace", required=True)
    c.set_defaults(func=_cmd_check)

    q = sub.add_parser("plot", help="render regret curves from aggregate.json")
    q.add_argument("--agg", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DtsLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
