"""Single-run simulation loop and the record it produces."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..envs import Environment
from ..mdp_core import TabularMdp
from .decomposition import RegretTrace, compute_decomposition

TRACE_COLUMNS = ("t", "epoch", "s", "a", "r", "s_next", "w", "reg_total", "reg1", "reg2", "reg3")


@dataclass
class RunRecord:
    """Everything a finished run leaves behind; prefixes of it are valid shorter runs."""

    env_name: str
    agent: str
    seed: int
    mdp: TabularMdp
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    w: np.ndarray
    epoch: np.ndarray
    segments: list
    epoch_history: list = field(default_factory=list)
    prior_alpha: float = 1.0

    @property
    def horizon(self) -> int:
        return int(self.r.size)

    def counts(self, T: Optional[int] = None) -> np.ndarray:
        """Transition-occurrence counts ``n[s, a, s']`` over the first ``T`` steps."""
        T = self.horizon if T is None else T
        S, A = self.mdp.n_states, self.mdp.n_actions
        n = np.zeros((S, A, S), dtype=np.int64)
        np.add.at(n, (self.s[:T], self.a[:T], self.s_next[:T]), 1)
        return n

    def posterior_mean(self, T: Optional[int] = None) -> np.ndarray:
        alpha = self.prior_alpha + self.counts(T)
        return alpha / alpha.sum(axis=2, keepdims=True)

    def epoch_lengths(self, T: Optional[int] = None) -> np.ndarray:
        """Lengths of the epochs that start before ``T``, the last one cut at ``T``."""
        T = self.horizon if T is None else T
        ep = self.epoch[:T]
        _, first = np.unique(ep, return_index=True)
        starts = np.sort(first)
        return np.diff(np.append(starts, T))

    def terminal_mixture(self, T: Optional[int] = None) -> np.ndarray:
        T = self.horizon if T is None else T
        live = [sg for sg in self.segments if sg.t_start < T]
        return live[-1].mu

    def decomposition(self, T: Optional[int] = None) -> RegretTrace:
        T = self.horizon if T is None else T
        return compute_decomposition(self.r, self.segments, self.posterior_mean(T), self.terminal_mixture(T),
                                     self.mdp, states=self.s, horizon=T)


def simulate(env: Environment, agent, T: int, agent_name: str = "", seed: int = 0, prior_alpha: float = 1.0) -> RunRecord:
    """Play ``T`` steps of ``agent`` in ``env`` from its start state."""
    s_arr = np.empty(T, np.int64)
    a_arr = np.empty(T, np.int64)
    n_arr = np.empty(T, np.int64)
    e_arr = np.empty(T, np.int64)
    r_arr = np.empty(T)
    w_arr = np.empty(T)
    s = env.reset()
    for t in range(T):
        agent.begin_epoch_if_needed(t)
        a = agent.act(s)
        s_next, r = env.step(a)
        s_arr[t], a_arr[t], n_arr[t], r_arr[t] = s, a, s_next, r
        e_arr[t] = agent.epoch
        w_arr[t] = agent.w
        agent.observe(s, a, r, s_next, t)
        s = s_next
    history = list(agent.state.schedule.history) if hasattr(agent, "state") else []
    return RunRecord(env.name, agent_name or getattr(agent, "name", ""), seed, env.mdp, s_arr, a_arr, r_arr,
                     n_arr, w_arr, e_arr, list(agent.segments), history, prior_alpha)


def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else "nan"


def trace_csv(record: RunRecord, T: Optional[int] = None, trace: Optional[RegretTrace] = None) -> str:
    """CSV text of the first ``T`` steps with the regret series alongside."""
    T = record.horizon if T is None else T
    trace = record.decomposition(T) if trace is None else trace
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(TRACE_COLUMNS)
    for t in range(T):
        out.writerow((t, int(record.epoch[t]), int(record.s[t]), int(record.a[t]), _fmt(record.r[t]),
                      int(record.s_next[t]), _fmt(record.w[t]), _fmt(trace.reg_total[t]),
                      _fmt(trace.reg1[t]), _fmt(trace.reg2[t]), _fmt(trace.reg3[t])))
    return buf.getvalue()


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as numpy arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace header {header}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    cols = {name: data[:, i] for i, name in enumerate(header)}
    for name in ("t", "epoch", "s", "a", "s_next"):
        cols[name] = cols[name].astype(np.int64)
    return cols
