"""SVG regret curves from an aggregate document."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_aggregate(agg: dict, out_path) -> Path:
    """Mean cumulative regret with a one-stderr band per agent, log-log axes."""
    # fixed hash salt keeps the SVG byte-stable across runs
    plt.rcParams["svg.hashsalt"] = "dtslab"
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for name, entry in agg["agents"].items():
        c = entry["curve"]
        t = np.asarray(c["t"], float)
        m = np.asarray(c["mean"], float)
        se = np.asarray(c["stderr"], float)
        keep = m > 0
        if not keep.any():
            continue
        line, = ax.plot(t[keep], m[keep], label=name)
        ax.fill_between(t[keep], np.maximum(m - se, 1e-12)[keep], (m + se)[keep], color=line.get_color(), alpha=0.2)
        T = sorted(int(k) for k in entry["horizons"])
        ax.plot(T, [entry["horizons"][str(k)]["mean_regret"] for k in T], "o", color=line.get_color(), ms=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("T")
    ax.set_ylabel("cumulative regret")
    ax.set_title(str(agg.get("config", {}).get("env", "")))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def plot_file(agg_path, out_path) -> Path:
    return plot_aggregate(json.loads(Path(agg_path).read_text()), out_path)
