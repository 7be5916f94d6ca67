"""Checkers for the episode-count, concentration and martingale bounds, plus slope fits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import kernels
from ..errors import InsufficientPoints, SingularChain, Unreachable
from ..mdp_core import StochasticPolicy, TabularMdp, _stationary_from_chain, diameter_estimate, span

Z95 = 1.959963984540054
MIN_SLOPE_DECADES = 1.5


# -- episode counts ---------------------------------------------------------

def epoch_start_counts(s, a, epoch, n_states: int, n_actions: int) -> np.ndarray:
    """``N_{t_k}(s, a)`` at every epoch start plus the final count, shape ``(K + 1, S, A)``."""
    s = np.asarray(s, np.int64)
    a = np.asarray(a, np.int64)
    epoch = np.asarray(epoch)
    T = s.size
    starts = np.flatnonzero(np.r_[True, epoch[1:] != epoch[:-1]]) if T else np.zeros(0, np.int64)
    flat = s * n_actions + a
    onehot_cum = np.zeros((T + 1, n_states * n_actions), np.int64)
    if T:
        np.add.at(onehot_cum[1:], (np.arange(T), flat), 1)
        np.cumsum(onehot_cum, axis=0, out=onehot_cum)
    idx = np.r_[starts, T]
    return onehot_cum[idx].reshape(-1, n_states, n_actions)


def macro_episode_count(start_counts: np.ndarray) -> int:
    """``1 + sum_(s,a) |{k : N_{t_{k-1}} >= 1, N_{t_k} > 2 N_{t_{k-1}}}|`` over consecutive epoch starts."""
    n = np.asarray(start_counts)
    if n.shape[0] < 2:
        return 1
    prev, cur = n[:-1], n[1:]
    return 1 + int(np.sum((prev >= 1) & (cur > 2 * prev)))


def early_epoch_count(lengths: Sequence[int]) -> int:
    """Completed epochs shorter than the length rule allows (``T_k < T_{k-1} + 1``)."""
    prev = 0
    early = 0
    for T_k in list(lengths)[:-1]:
        if T_k < prev + 1:
            early += 1
        prev = T_k
    return early


def m_bound(S: int, A: int, T: int) -> float:
    """``1 + SA log(T / SA)`` with the log clamped at 0."""
    return 1.0 + S * A * max(0.0, math.log(T / (S * A)))


def k_bound(S: int, A: int, T: int) -> float:
    """``sqrt(2 SA T log T)``; the ``SA log T`` factor is clamped at 1 so ``T = 1`` admits its one epoch."""
    return math.sqrt(2.0 * T * max(1.0, S * A * math.log(T))) if T >= 1 else 0.0


@dataclass
class EpisodeBoundReport:
    T: int
    m_observed: int
    m_bound: float
    k_observed: int
    k_bound: float
    early_epochs: int
    max_length_slack: int  # max over epochs of T_k - (T_{k-1} + 1); must be <= 0
    m_ok: bool
    k_ok: bool
    k_clamped: bool

    @property
    def ok(self) -> bool:
        return self.m_ok and self.k_ok and self.max_length_slack <= 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def check_episode_bounds(s, a, epoch, S: int, A: int, T: Optional[int] = None) -> EpisodeBoundReport:
    """Compare observed macro-episode and epoch counts over the first ``T`` steps to their bounds."""
    T = len(s) if T is None else int(T)
    s, a, epoch = np.asarray(s)[:T], np.asarray(a)[:T], np.asarray(epoch)[:T]
    counts = epoch_start_counts(s, a, epoch, S, A)
    m = macro_episode_count(counts[:-1])
    starts = np.flatnonzero(np.r_[True, epoch[1:] != epoch[:-1]]) if T else np.zeros(0, np.int64)
    lengths = np.diff(np.r_[starts, T])
    k = int(lengths.size)
    prev = np.r_[0, lengths[:-1]]
    slack = int(np.max(lengths - (prev + 1))) if k else 0
    mb, kb = m_bound(S, A, T), k_bound(S, A, T)
    return EpisodeBoundReport(
        T=T, m_observed=m, m_bound=mb, k_observed=k, k_bound=kb,
        early_epochs=early_epoch_count(lengths.tolist()), max_length_slack=slack,
        m_ok=m <= mb + 1e-9, k_ok=k <= kb + 1e-9, k_clamped=S * A * math.log(max(T, 1)) < 1.0)


# -- confidence set ---------------------------------------------------------

def confidence_radius(n_tk: np.ndarray, S: int, A: int, t: int, T: int) -> np.ndarray:
    """``sqrt(14 S log(2 A t T) / max(1, N_{t_k}))``."""
    return np.sqrt(14.0 * S * math.log(2.0 * A * max(t, 1) * T) / np.maximum(1, n_tk))


def check_confidence_set(theta_hat: np.ndarray, true_mdp: TabularMdp, t: int, T: int,
                         n_tk: np.ndarray, delta: float = 0.05) -> int:
    """Number of ``(s, a)`` where the L1 gap between ``theta_hat`` and the truth exceeds the radius.

    ``delta`` enters only through the caller's pass/fail threshold on the
    violation frequency; the radius itself does not depend on it.
    """
    S, A = true_mdp.n_states, true_mdp.n_actions
    l1 = np.abs(np.asarray(theta_hat) - true_mdp.transition).sum(axis=2)
    return int(np.sum(l1 > confidence_radius(np.asarray(n_tk), S, A, t, T)))


def confidence_violation_rate(s, a, s_next, epoch, true_mdp: TabularMdp, T: Optional[int] = None,
                              prior_alpha: float = 1.0) -> tuple[int, int]:
    """Violations and checked triples over every epoch start, posterior mean as center."""
    T = len(s) if T is None else int(T)
    S, A = true_mdp.n_states, true_mdp.n_actions
    s, a, s_next, epoch = (np.asarray(x)[:T] for x in (s, a, s_next, epoch))
    starts = np.flatnonzero(np.r_[True, epoch[1:] != epoch[:-1]])
    viol = checked = 0
    n = np.zeros((S, A, S), np.int64)
    done = 0
    for t_k in starts:
        np.add.at(n, (s[done:t_k], a[done:t_k], s_next[done:t_k]), 1)
        done = t_k
        alpha = prior_alpha + n
        viol += check_confidence_set(alpha / alpha.sum(axis=2, keepdims=True), true_mdp,
                                     int(t_k) + 1, T, n.sum(axis=2))
        checked += S * A
    return viol, checked


# -- martingale -------------------------------------------------------------

@dataclass
class MartingaleReport:
    n: int
    mean: float
    ci_low: float
    ci_high: float
    total: float
    azuma_bound: float
    diameter: float
    max_abs_increment: float
    max_span: float
    ci_contains_zero: bool
    azuma_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def martingale_increments(s, a, s_next, segment_of_t, segments, true_mdp: TabularMdp):
    """``Y_t = sum_s' theta*(s'|s_t, pi_t) b(s') - b(s_{t+1})`` with ``b`` the bias of the played segment.

    Returns ``(y, seg_diameter, seg_span)``: the increments plus, per segment,
    the diameter of the model the bias came from and the bias span. Where that
    chain is not irreducible the span stands in for the diameter, since
    ``|Y_t| <= sp(b)`` is what the tail bound actually needs.
    """
    s, s_next = np.asarray(s, np.int64), np.asarray(s_next, np.int64)
    seg = np.asarray(segment_of_t, np.int64)
    gam = true_mdp.discount
    n_seg = len(segments)
    expect = np.zeros((n_seg, true_mdp.n_states))
    bias = np.zeros((n_seg, true_mdp.n_states))
    seg_diam = np.zeros(n_seg)
    seg_span = np.zeros(n_seg)
    for i in np.unique(seg):
        sg = segments[i]
        theta = true_mdp.transition if sg.theta is None else np.ascontiguousarray(sg.theta)
        mu = np.ascontiguousarray(sg.mu, float)
        P, r = kernels.induced(theta, gam * true_mdp.reward, mu)
        _, b = kernels.gain_bias(P, r)
        P_true, _ = kernels.induced(true_mdp.transition, true_mdp.reward, mu)
        bias[i] = b
        expect[i] = P_true @ b
        seg_span[i] = span(b)
        try:
            seg_diam[i] = diameter_estimate(true_mdp.with_transition(theta), StochasticPolicy(mu))
        except Unreachable:
            seg_diam[i] = seg_span[i]
    y = expect[seg, s] - bias[seg, s_next]
    return y, seg_diam, seg_span


def check_martingale(y: np.ndarray, diameter: float, delta: float = 0.05, max_span: float = float("nan")) -> MartingaleReport:
    """Mean-with-CI test of zero drift and the Azuma tail ``|sum Y| <= D sqrt(2 T log(2/delta))``."""
    y = np.asarray(y, float)
    n = y.size
    mean = float(y.mean()) if n else 0.0
    se = float(y.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    lo, hi = mean - Z95 * se, mean + Z95 * se
    total = float(y.sum())
    bound = diameter * math.sqrt(2.0 * n * math.log(2.0 / delta))
    return MartingaleReport(n, mean, lo, hi, total, bound, float(diameter),
                            float(np.max(np.abs(y))) if n else 0.0, float(max_span),
                            bool(lo - 1e-12 <= 0.0 <= hi + 1e-12), bool(abs(total) <= bound + 1e-9))


# -- growth exponent --------------------------------------------------------

@dataclass
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_regret_slope(reg_totals: Mapping[int, float], min_decades: float = MIN_SLOPE_DECADES) -> SlopeFit:
    """Least-squares slope of ``log(mean regret)`` against ``log T``."""
    if len(reg_totals) < 4:
        raise InsufficientPoints(f"need at least 4 horizons, got {len(reg_totals)}")
    T = np.array(sorted(reg_totals), float)
    R = np.array([reg_totals[int(t)] for t in T], float)
    if np.log10(T[-1] / T[0]) < min_decades - 1e-12:
        raise InsufficientPoints(f"horizons span {np.log10(T[-1] / T[0]):.2f} decades, need {min_decades}")
    if np.any(R <= 0):
        raise InsufficientPoints("log-log fit needs strictly positive regret at every horizon")
    x, yv = np.log(T), np.log(R)
    X = np.vstack([x, np.ones_like(x)]).T
    coef, res, _, _ = np.linalg.lstsq(X, yv, rcond=None)
    resid = yv - X @ coef
    dof = x.size - 2
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se = math.sqrt(sigma2 / float(np.sum((x - x.mean()) ** 2)))
    return SlopeFit(float(coef[0]), se, float(coef[1]), int(x.size))


# -- per-epoch and epsilon-policy diagnostics ------------------------------

def per_epoch_regret(rewards, epoch, j_star: float, discount: float, S: int, delta: float = 0.05) -> dict:
    """``sum_k (J* - gamma * mean reward in epoch k)`` against ``beta sqrt(2 K log(2S/delta))``."""
    r = np.asarray(rewards, float)
    ep = np.asarray(epoch)
    _, inv = np.unique(ep, return_inverse=True)
    means = np.bincount(inv, weights=r) / np.bincount(inv)
    K = means.size
    beta = 1.0 / (1.0 - discount)
    stat = float(np.sum(j_star - discount * means))
    bound = beta * math.sqrt(2.0 * K * math.log(2.0 * S / delta))
    return {"K": K, "regret": stat, "bound": bound, "ok": bool(stat <= bound)}


def discounted_values(mdp: TabularMdp, policy: Optional[np.ndarray] = None, tol: float = 1e-12):
    """Discounted state values of ``policy`` (row matrix), or optimal values and a greedy policy."""
    g, R, P = mdp.discount, mdp.reward, mdp.transition
    S = mdp.n_states
    if policy is not None:
        Pp, rp = kernels.induced(P, R, np.ascontiguousarray(policy, float))
        return np.linalg.solve(np.eye(S) - g * Pp, rp)
    V = np.zeros(S)
    for _ in range(100_000):
        Q = R + g * P @ V
        nxt = Q.max(axis=1)
        if np.max(np.abs(nxt - V)) < tol * (1 - g):
            V = nxt
            break
        V = nxt
    return V, np.argmax(R + g * P @ V, axis=1)


def epsilon_policy_shortfall(mdp: TabularMdp, mu: np.ndarray) -> dict:
    """Shortfall of the policy greedy in ``V_mu`` against ``2 gamma beta ||V_mu - V*||``."""
    g = mdp.discount
    V_star, _ = discounted_values(mdp)
    V_mu = discounted_values(mdp, mu)
    eps = float(np.max(np.abs(V_mu - V_star)))
    greedy = np.argmax(mdp.reward + g * mdp.transition @ V_mu, axis=1)
    V_g = discounted_values(mdp, StochasticPolicy.one_hot(greedy, mdp.n_actions).probs)
    shortfall = float(np.max(V_star - V_g))
    bound = 2.0 * g * eps / (1.0 - g)
    return {"epsilon": eps, "shortfall": shortfall, "bound": bound, "ok": bool(shortfall <= bound + 1e-9)}


def rho(x: float) -> float:
    """``sqrt(log log max(x, 3))``, the iterated-log envelope with unit constant."""
    return math.sqrt(math.log(math.log(max(x, 3.0))))


def weight_bound_rhs(epsilon: float, gamma_big: float, S: int, k_pi: int, tau: float) -> float:
    """``(eps / Gamma) S^2 (rho(k) sqrt(k) + k tau)`` for the negative log-weight."""
    return epsilon / gamma_big * S * S * (rho(k_pi) * math.sqrt(k_pi) + k_pi * tau)


def max_return_time(mdp: TabularMdp, mu: np.ndarray) -> float:
    """``max_s 1 / d(s)``: the longest mean return time of the chain under ``mu``."""
    P, _ = kernels.induced(mdp.transition, mdp.reward, np.ascontiguousarray(mu, float))
    d = _stationary_from_chain(P)
    return float(1.0 / d.min()) if d.min() > 0 else float("inf")


def transition_envelope(h: np.ndarray, k: int, d: np.ndarray, P: np.ndarray) -> dict:
    """Compare ``H(s1,s2)/k`` with ``d(s1) P(s1,s2)`` against ``sqrt(log log k / k)``."""
    gap = float(np.max(np.abs(np.asarray(h) / k - d[:, None] * P)))
    env = rho(k) / math.sqrt(k)
    return {"gap": gap, "envelope": env, "ok": bool(gap <= env)}


def assumption_checks(mdp: TabularMdp, pi_star: np.ndarray, gamma_big: float) -> dict:
    """Constructive checks on the true model: diameter ordering and the gain ceiling."""
    S, A = mdp.n_states, mdp.n_actions
    out = {}
    try:
        d_star = diameter_estimate(mdp, StochasticPolicy.one_hot(pi_star, A))
        d_unif = diameter_estimate(mdp, StochasticPolicy.uniform(S, A))
        out["diameter_optimal"] = d_star
        out["diameter_uniform"] = d_unif
        out["diameter_ordering_ok"] = bool(d_star <= d_unif * (1 + 1e-9))
    except (Unreachable, SingularChain) as exc:
        out["diameter_optimal"] = float("inf")
        out["diameter_uniform"] = float("nan")
        out["diameter_ordering_ok"] = False
        out["diameter_error"] = str(exc)
    from ..mdp_core import gain
    j_star = gain(mdp, StochasticPolicy.one_hot(pi_star, A))
    out["j_star"] = j_star
    out["gain_ceiling"] = gamma_big
    out["gain_ceiling_ok"] = bool(j_star <= gamma_big + 1e-12)
    return out
