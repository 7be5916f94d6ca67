"""Posterior policy iteration: greedy improvement blended into the policy posterior.

Each iteration mixes the current policy mixture ``mu`` toward the sampled
model's optimal deterministic policy with weight ``W`` (the count-based
posterior weight) and stops once the stationary-weighted KL from the greedy
one-hot policy to ``mu`` falls under tolerance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import NoConvergence, ShapeMismatch, SingularChain, SupportViolation
from .mdp_core import (
    DeterministicPolicy,
    PolicyLike,
    StochasticPolicy,
    TabularMdp,
    _stationary_from_chain,
    as_stochastic,
    policy_key,
)
from .posterior import W_MIN, PosteriorWeight, VisitCounters

MAX_PI_ROUNDS = 10_000
STATUS_NAMES = {
    kernels.STATUS_MAX_ITER: "max_iterations",
    kernels.STATUS_CONVERGED: "converged",
    kernels.STATUS_STALLED: "stalled",
    kernels.STATUS_KEY_CHANGED: "key_changed",
}


@dataclass(frozen=True)
class PpiConfig:
    epsilon: float = 1e-3
    max_iterations: int = 1000
    kl_tolerance: float = 1e-6
    gamma_big: Optional[float] = None
    w_min: float = W_MIN

    def __post_init__(self):
        if self.epsilon <= 0 or self.kl_tolerance <= 0:
            raise ValueError("epsilon and kl_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.gamma_big is not None and self.gamma_big <= 0:
            raise ValueError("gamma_big must be positive")
        if not 0.0 < self.w_min < 1.0:
            raise ValueError("w_min must lie in (0, 1)")


@dataclass
class PpiResult:
    policy: StochasticPolicy
    greedy: DeterministicPolicy
    iterations: int
    j_trace: np.ndarray
    converged: bool
    j_init: float = float("nan")
    j_star: float = float("nan")
    w_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kl_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    status: str = "max_iterations"
    n_fallback: int = 0
    epsilon_optimal: bool = False

    @property
    def j_final(self) -> float:
        return float(self.j_trace[-1]) if len(self.j_trace) else self.j_init

    def log_ratio_gap(self) -> float:
        """``J_final * log(J_star / J_final)``, the quantity bounded by epsilon at convergence."""
        return self.j_final * math.log(self.j_star / self.j_final)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.probs.tolist(),
            "greedy": self.greedy.action_of.tolist(),
            "iterations": int(self.iterations),
            "j_trace": [float(x) for x in self.j_trace],
            "converged": bool(self.converged),
            "j_init": float(self.j_init),
            "j_star": float(self.j_star),
            "w_trace": [float(x) for x in self.w_trace],
            "kl_trace": [float(x) for x in self.kl_trace],
            "status": self.status,
            "n_fallback": int(self.n_fallback),
            "epsilon_optimal": bool(self.epsilon_optimal),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "PpiResult":
        return cls(
            policy=StochasticPolicy(np.asarray(doc["policy"], float)),
            greedy=DeterministicPolicy(np.asarray(doc["greedy"], np.int64)),
            iterations=int(doc["iterations"]),
            j_trace=np.asarray(doc["j_trace"], float),
            converged=bool(doc["converged"]),
            j_init=float(doc.get("j_init", "nan")),
            j_star=float(doc.get("j_star", "nan")),
            w_trace=np.asarray(doc.get("w_trace", []), float),
            kl_trace=np.asarray(doc.get("kl_trace", []), float),
            status=doc.get("status", "max_iterations"),
            n_fallback=int(doc.get("n_fallback", 0)),
            epsilon_optimal=bool(doc.get("epsilon_optimal", False)),
        )


def _evaluate(theta, reward, actions) -> tuple[float, np.ndarray]:
    S = actions.size
    rows = np.arange(S)
    P = np.ascontiguousarray(theta[rows, actions])
    r = np.ascontiguousarray(reward[rows, actions])
    try:
        return kernels.gain_bias(P, r)
    except Exception as exc:
        raise SingularChain(f"policy {policy_key(actions)} induces a multichain") from exc


def solve_optimal_policy(mdp: TabularMdp, start: Optional[DeterministicPolicy] = None) -> DeterministicPolicy:
    """Howard policy iteration for the gain; keeps incumbents on ties, else lowest index."""
    theta = mdp.transition
    reward = mdp.discount * mdp.reward
    S = mdp.n_states
    rows = np.arange(S)
    actions = np.zeros(S, np.int64) if start is None else start.action_of.copy()
    for _ in range(MAX_PI_ROUNDS):
        _, b = _evaluate(theta, reward, actions)
        Q = reward + theta @ b
        best = Q.max(axis=1)
        tol = 1e-12 * max(1.0, float(np.abs(best).max()))
        keep = Q[rows, actions] >= best - tol
        if keep.all():
            return DeterministicPolicy(actions)
        # lowest index among the near-maximal actions
        cand = np.argmax(Q >= (best - tol)[:, None], axis=1)
        actions = np.where(keep, actions, cand)
    raise NoConvergence(f"policy iteration did not settle within {MAX_PI_ROUNDS} rounds")


def _weight_value(w) -> float:
    return float(w.w) if isinstance(w, PosteriorWeight) else float(w)


def ppi_step(mu_prev: StochasticPolicy, greedy: DeterministicPolicy, w) -> StochasticPolicy:
    """Rowwise ``w * mu_prev + (1 - w) * onehot(greedy)``."""
    w = _weight_value(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"mixing weight {w} outside [0, 1]")
    if greedy.n_states != mu_prev.n_states or np.any(greedy.action_of >= mu_prev.n_actions):
        raise ShapeMismatch("greedy policy does not fit the policy matrix")
    S = mu_prev.n_states
    out = w * mu_prev.probs
    rows = np.arange(S)
    out[rows, greedy.action_of] = 0.0
    # the target entry absorbs the rounding so each row sums to one
    out[rows, greedy.action_of] = 1.0 - out.sum(axis=1)
    return StochasticPolicy(out)


def marginal_kl(mdp_sampled: TabularMdp, p: PolicyLike, q: PolicyLike) -> float:
    """``sum_s d_p(s) KL(p(.|s) || q(.|s))`` with ``d_p`` stationary under ``p``."""
    A = mdp_sampled.n_actions
    p = as_stochastic(p, A)
    q = as_stochastic(q, A)
    if p.probs.shape != q.probs.shape or p.probs.shape != mdp_sampled.reward.shape:
        raise ShapeMismatch("policies and model disagree in shape")
    P, _ = kernels.induced(mdp_sampled.transition, mdp_sampled.reward, p.probs)
    d = _stationary_from_chain(P)
    pp, qq = p.probs, q.probs
    bad = (pp > 0) & (qq <= 0) & (d[:, None] > 0)
    if bad.any():
        raise SupportViolation("q is zero where p has mass on the stationary support")
    on = pp > 0
    terms = np.zeros_like(pp)
    terms[on] = pp[on] * np.log(pp[on] / np.where(on, qq, 1.0)[on])
    return float(max(0.0, d @ terms.sum(axis=1)))


def run_ppi(mdp_sampled: TabularMdp, mu_init: StochasticPolicy, counters: VisitCounters,
            cfg: PpiConfig = PpiConfig(), greedy: Optional[DeterministicPolicy] = None,
            force_weight: Optional[float] = None) -> PpiResult:
    """Iterate mixing steps until the marginal KL to the greedy policy is below tolerance.

    The weight is recomputed every iteration from the pair counts of the
    mixture's current argmax policy and the sampled-model gains. When a
    rowwise mix toward the greedy policy would lower the gain, the step mixes
    toward the one-step improvement of ``mu`` instead (counted in
    ``n_fallback``), which keeps the gain trace nondecreasing.
    """
    theta = np.ascontiguousarray(mdp_sampled.transition)
    reward = np.ascontiguousarray(mdp_sampled.discount * mdp_sampled.reward)
    if mu_init.probs.shape != reward.shape:
        raise ShapeMismatch("initial mixture does not match the model")
    if greedy is None:
        greedy = solve_optimal_policy(mdp_sampled)
    star = np.ascontiguousarray(greedy.action_of)
    S = mdp_sampled.n_states
    rows = np.arange(S)
    j_star, _ = _evaluate(theta, reward, star)
    d_star = _stationary_from_chain(np.ascontiguousarray(theta[rows, star]))
    mu = np.ascontiguousarray(mu_init.probs, dtype=float)
    P0, r0 = kernels.induced(theta, reward, mu)
    try:
        j_init, _ = kernels.gain_bias(P0, r0)
    except Exception as exc:
        raise SingularChain("initial mixture induces a multichain") from exc
    w_forced = -1.0 if force_weight is None else float(force_weight)

    j_parts, w_parts, kl_parts = [], [], []
    done = 0
    n_fb = 0
    status = kernels.STATUS_MAX_ITER
    while done < cfg.max_iterations:
        key = np.argmax(mu, axis=1).astype(np.int64)
        count = float(counters.pair_total(policy_key(key))) if counters is not None else 0.0
        try:
            mu, n, jt, wt, kt, status, fb = kernels.ppi_iterate(
                theta, reward, mu, star, float(j_star), d_star, count, key,
                int(cfg.max_iterations - done), float(cfg.kl_tolerance), float(cfg.w_min), w_forced)
        except Exception as exc:
            raise SingularChain("a mixing step produced a multichain policy") from exc
        j_parts.append(jt)
        w_parts.append(wt)
        kl_parts.append(kt)
        done += int(n)
        n_fb += int(fb)
        if status != kernels.STATUS_KEY_CHANGED:
            break

    j_trace = np.concatenate(j_parts) if j_parts else np.zeros(0)
    j_final = float(j_trace[-1]) if j_trace.size else float(j_init)
    converged = status == kernels.STATUS_CONVERGED
    if status == kernels.STATUS_KEY_CHANGED:
        status = kernels.STATUS_MAX_ITER
    return PpiResult(
        policy=StochasticPolicy(mu),
        greedy=greedy,
        iterations=done,
        j_trace=j_trace,
        converged=converged,
        j_init=float(j_init),
        j_star=float(j_star),
        w_trace=np.concatenate(w_parts) if w_parts else np.zeros(0),
        kl_trace=np.concatenate(kl_parts) if kl_parts else np.zeros(0),
        status=STATUS_NAMES[status],
        n_fallback=n_fb,
        epsilon_optimal=bool(j_star - j_final <= cfg.epsilon),
    )
