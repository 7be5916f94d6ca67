"""Three-way regret accounting over the segments an agent played."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import SingularChain
from ..mdp_core import StochasticPolicy, TabularMdp, gain
from ..ppi import solve_optimal_policy


@dataclass
class RegretTrace:
    """Per-step cumulative regret series, all in discounted-average reward units.

    ``reg_total = reg1 + reg2 + reg3 + terminal_correction`` holds step by step;
    the correction is ``t * (J_star - J_terminal)`` since ``reg1`` is anchored on
    the terminal gain rather than the true optimum.
    """

    rewards: np.ndarray
    reg_total: np.ndarray
    reg1: np.ndarray
    reg2: np.ndarray
    reg3: np.ndarray
    terminal_correction: np.ndarray
    reg_eq2: np.ndarray
    j_star: float
    j_terminal: float
    j_hat: np.ndarray       # J of the played mixture under the terminal model, per step
    j_sampled: np.ndarray   # J of the played mixture under the model it was computed for, per step
    segment_of_t: np.ndarray
    gaps: np.ndarray
    epochs: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.rewards.size

    def identity_residual(self) -> np.ndarray:
        """``|reg_total - (reg1 + reg2 + reg3 + correction)|`` per step."""
        return np.abs(self.reg_total - (self.reg1 + self.reg2 + self.reg3 + self.terminal_correction))


def _segment_index(t_starts: Sequence[int], T: int) -> np.ndarray:
    starts = np.asarray(t_starts, dtype=np.int64)
    if starts.size == 0 or starts[0] != 0:
        raise ValueError("segments must start at t = 0")
    if np.any(np.diff(starts) < 0):
        raise ValueError("segment start times must be nondecreasing")
    return np.searchsorted(starts, np.arange(T), side="right") - 1


def _safe_gain(mdp: TabularMdp, mu: np.ndarray) -> float:
    try:
        return gain(mdp, StochasticPolicy(mu))
    except SingularChain:
        return float("nan")


def compute_decomposition(rewards, segments, theta_hat: np.ndarray, pi_hat, true_mdp: TabularMdp,
                          states=None, horizon: Optional[int] = None) -> RegretTrace:
    """Split cumulative regret into terminal-policy, model-mismatch and realisation parts.

    ``segments`` carry ``t_start``, ``mu`` and ``theta`` (``None`` means the
    agent acts on the truth, as model-free baselines do). ``theta_hat`` is the
    terminal model and ``pi_hat`` the terminal mixture. Steps whose segment
    induces a multichain under either model are skipped in ``reg1``-``reg3``
    and flagged in ``gaps``.
    """
    r = np.asarray(rewards, float)
    T = r.size if horizon is None else int(horizon)
    r = r[:T]
    segments = [sg for sg in segments if sg.t_start < T]
    gam = true_mdp.discount
    hat_mdp = true_mdp.with_transition(theta_hat)
    pi_hat = pi_hat.probs if isinstance(pi_hat, StochasticPolicy) else np.asarray(pi_hat, float)

    j_star = gain(true_mdp, solve_optimal_policy(true_mdp))
    j_term = _safe_gain(hat_mdp, pi_hat)
    seg_idx = _segment_index([sg.t_start for sg in segments], T)
    jh = np.empty(len(segments))
    js = np.empty(len(segments))
    for i, sg in enumerate(segments):
        jh[i] = _safe_gain(hat_mdp, sg.mu)
        model = true_mdp if sg.theta is None else true_mdp.with_transition(sg.theta)
        js[i] = _safe_gain(model, sg.mu)

    j_hat = jh[seg_idx]
    j_samp = js[seg_idx]
    gaps = ~np.isfinite(j_hat) | ~np.isfinite(j_samp) | (not np.isfinite(j_term))
    ok = ~gaps
    scaled = gam * r
    reg_total = np.cumsum(j_star - scaled)
    reg1 = np.cumsum(np.where(ok, j_term - j_hat, 0.0))
    reg2 = np.cumsum(np.where(ok, j_hat - j_samp, 0.0))
    reg3 = np.cumsum(np.where(ok, j_samp - scaled, 0.0))
    # skipped steps move their whole increment into the correction so the identity still closes
    skipped = np.cumsum(np.where(ok, 0.0, j_star - scaled))
    correction = np.cumsum(np.where(ok, j_star - j_term, 0.0)) + skipped
    if states is not None:
        best_r = true_mdp.reward.max(axis=1)[np.asarray(states, np.int64)[:T]]
        reg_eq2 = np.cumsum(best_r - r)
    else:
        reg_eq2 = np.full(T, np.nan)

    epochs = []
    for i, sg in enumerate(segments):
        end = segments[i + 1].t_start if i + 1 < len(segments) else T
        if epochs and epochs[-1][2] == sg.epoch:
            epochs[-1] = (epochs[-1][0], end - epochs[-1][0], sg.epoch)
        else:
            epochs.append((sg.t_start, end - sg.t_start, sg.epoch))
    diagnostics = {
        "w": [float(getattr(sg, "w", np.nan)) for sg in segments],
        "ppi_iterations": [int(getattr(sg, "ppi_iterations", 0)) for sg in segments],
        "kl": [float(getattr(sg, "kl", np.nan)) for sg in segments],
        "n_gap_steps": int(gaps.sum()),
        "terminal_gap": float(j_star - j_term) if np.isfinite(j_term) else float("nan"),
    }
    return RegretTrace(r, reg_total, reg1, reg2, reg3, correction, reg_eq2, float(j_star), float(j_term),
                       j_hat, j_samp, seg_idx, gaps, epochs, diagnostics)
