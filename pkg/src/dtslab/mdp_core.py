"""Finite MDPs and exact evaluators: gain, bias, stationary law, hitting times.

Gains follow the discounted-average convention used throughout the package:
``J = gamma * (long-run average reward)``. The bias is solved against the
same scaled reward, so ``J + b = gamma * r_pi + P_pi b`` with ``b[0] = 0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .errors import IndexOutOfRange, NoConvergence, ShapeMismatch, SingularChain, Unreachable

ROW_TOL = 1e-12
RANK_TOL = 1e-10
RESIDUAL_TOL = 1e-8
DENSE_LIMIT = 200
MAX_SWEEPS = 100_000


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Reward table ``reward[s, a]``, transitions ``transition[s, a, s']`` and discount."""

    reward: np.ndarray
    transition: np.ndarray
    discount: float = 0.95

    def __post_init__(self):
        r = _frozen(self.reward)
        p = _frozen(self.transition)
        if r.ndim != 2 or p.ndim != 3:
            raise ShapeMismatch(f"reward must be S×A and transition S×A×S, got {r.shape}, {p.shape}")
        S, A = r.shape
        if S < 1 or A < 1 or p.shape != (S, A, S):
            raise ShapeMismatch(f"transition shape {p.shape} does not match reward shape {r.shape}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("every transition row must be a probability vector (tolerance 1e-12)")
        if np.any(r < 0.0) or np.any(r > 1.0) or not np.all(np.isfinite(r)):
            raise ValueError("rewards must lie in [0, 1]")
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def with_transition(self, transition: np.ndarray) -> "TabularMdp":
        """Same rewards and discount, different dynamics."""
        return TabularMdp(self.reward, transition, self.discount)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        mdp = cls(np.asarray(doc["reward"], float), np.asarray(doc["transition"], float),
                  float(doc.get("discount", 0.95)))
        for name, got in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
            if name in doc and int(doc[name]) != got:
                raise ShapeMismatch(f"{name}={doc[name]} disagrees with table shape ({got})")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """One action index per state."""

    action_of: np.ndarray

    def __post_init__(self):
        a = _frozen(self.action_of, dtype=np.int64)
        if a.ndim != 1 or a.size == 0 or np.any(a < 0):
            raise ValueError("action_of must be a nonempty vector of nonnegative action indices")
        object.__setattr__(self, "action_of", a)

    @property
    def n_states(self) -> int:
        return self.action_of.size

    def key(self) -> str:
        """Canonical identity used to index per-policy counters."""
        return policy_key(self.action_of)

    def to_stochastic(self, n_actions: int) -> "StochasticPolicy":
        return StochasticPolicy.one_hot(self.action_of, n_actions)

    def __eq__(self, other):
        return isinstance(other, DeterministicPolicy) and np.array_equal(self.action_of, other.action_of)

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class StochasticPolicy:
    """Row-stochastic ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2 or min(p.shape) < 1:
            raise ShapeMismatch(f"policy must be a nonempty S×A matrix, got shape {p.shape}")
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("policy rows must be probability vectors (tolerance 1e-12)")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StochasticPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def one_hot(cls, actions, n_actions: int) -> "StochasticPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        if np.any(actions >= n_actions):
            raise IndexOutOfRange(f"action index out of range for A={n_actions}")
        m = np.zeros((actions.size, n_actions))
        m[np.arange(actions.size), actions] = 1.0
        return cls(m)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy(self) -> DeterministicPolicy:
        """Argmax row actions, lowest index on ties."""
        return DeterministicPolicy(np.argmax(self.probs, axis=1))

    def key(self) -> str:
        return policy_key(np.argmax(self.probs, axis=1))


PolicyLike = Union[StochasticPolicy, DeterministicPolicy]


def policy_key(actions) -> str:
    return "-".join(str(int(a)) for a in actions)


def as_stochastic(policy: PolicyLike, n_actions: int) -> StochasticPolicy:
    if isinstance(policy, DeterministicPolicy):
        return policy.to_stochastic(n_actions)
    if isinstance(policy, StochasticPolicy):
        return policy
    return StochasticPolicy(np.asarray(policy, float))


@dataclass(frozen=True)
class GainBiasSolution:
    gain: float
    bias: np.ndarray
    residual: float


def _check_shapes(mdp: TabularMdp, pol: StochasticPolicy):
    if pol.probs.shape != mdp.reward.shape:
        raise ShapeMismatch(f"policy shape {pol.probs.shape} != mdp shape {mdp.reward.shape}")


def induced_chain(mdp: TabularMdp, policy: PolicyLike) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_pi, r_pi)`` for the Markov chain the policy induces (raw reward)."""
    pol = as_stochastic(policy, mdp.n_actions)
    _check_shapes(mdp, pol)
    return kernels.induced(mdp.transition, mdp.reward, pol.probs)


def _stationary_from_chain(P: np.ndarray) -> np.ndarray:
    S = P.shape[0]
    A = np.vstack([P.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    d, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=RANK_TOL)
    if rank < S:
        raise SingularChain(f"stationary system has rank {rank} < {S}; chain has several recurrent classes")
    if np.any(d < -1e-9):
        raise SingularChain("stationary solve produced negative mass")
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def stationary_distribution(mdp: TabularMdp, policy: PolicyLike) -> np.ndarray:
    """Stationary law ``d`` of the induced chain (``d P = d``, ``sum(d) = 1``)."""
    P, _ = induced_chain(mdp, policy)
    return _stationary_from_chain(P)


def gain(mdp: TabularMdp, policy: PolicyLike) -> float:
    """Discounted average reward ``gamma * sum_s d(s) r(s, pi)``."""
    P, r = induced_chain(mdp, policy)
    d = _stationary_from_chain(P)
    return float(mdp.discount * d @ r)


def bellman_residual(P: np.ndarray, r: np.ndarray, J: float, b: np.ndarray) -> float:
    return float(np.max(np.abs(J + b - r - P @ b)))


def _relative_value_iteration(P: np.ndarray, r: np.ndarray) -> tuple[float, np.ndarray]:
    # the lazy chain 0.5(I + P) has the same gain and twice the bias, and is aperiodic
    S = P.shape[0]
    Q = 0.5 * (np.eye(S) + P)
    h = np.zeros(S)
    for _ in range(MAX_SWEEPS):
        nxt = r + Q @ h
        nxt -= nxt[0]
        if np.max(np.abs(nxt - h)) < 1e-13:
            h = nxt
            break
        h = nxt
    else:
        raise NoConvergence(f"relative value iteration exceeded {MAX_SWEEPS} sweeps")
    J = float(np.mean(r + Q @ h - h))
    return J, 0.5 * h


def solve_gain_bias(mdp: TabularMdp, policy: PolicyLike) -> GainBiasSolution:
    """Solve ``J + b = gamma r_pi + P_pi b`` with ``b[0] = 0``."""
    P, r = induced_chain(mdp, policy)
    _stationary_from_chain(P)  # raises SingularChain on a multichain policy
    r = mdp.discount * r
    J = b = None
    if P.shape[0] <= DENSE_LIMIT:
        try:
            J, b = kernels.gain_bias(P, r)
        except Exception:  # LinAlgError from either backend
            J = None
    if J is None or bellman_residual(P, r, J, b) > RESIDUAL_TOL:
        J, b = _relative_value_iteration(P, r)
    res = bellman_residual(P, r, J, b)
    if res > RESIDUAL_TOL:
        raise NoConvergence(f"gain/bias residual {res:.3e} exceeds {RESIDUAL_TOL}")
    b = np.array(b, dtype=float)
    b[0] = 0.0
    return GainBiasSolution(float(J), b, res)


def span(bias) -> float:
    b = np.asarray(bias, float)
    if b.size == 0:
        raise ValueError("span of an empty vector")
    return float(b.max() - b.min())


def _reach(adj: np.ndarray, start: int, blocked: int | None = None) -> np.ndarray:
    seen = np.zeros(adj.shape[0], bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        s = frontier.pop()
        if s == blocked:
            continue
        for t in np.flatnonzero(adj[s] & ~seen):
            seen[t] = True
            frontier.append(int(t))
    return seen


def _check_index(mdp: TabularMdp, *states: int):
    for s in states:
        if not 0 <= s < mdp.n_states:
            raise IndexOutOfRange(f"state {s} not in [0, {mdp.n_states})")


def expected_hitting_time(mdp: TabularMdp, policy: PolicyLike, source: int, target: int) -> float:
    """Mean number of steps from ``source`` until the chain first enters ``target``."""
    _check_index(mdp, source, target)
    if source == target:
        return 0.0
    P, _ = induced_chain(mdp, policy)
    adj = P > 0.0
    live = _reach(adj, source, blocked=target)
    live[target] = False
    idx = np.flatnonzero(live)
    for s in idx:
        if not _reach(adj, int(s))[target]:
            raise Unreachable(f"state {target} is not reached almost surely from {source}")
    M = np.eye(idx.size) - P[np.ix_(idx, idx)]
    try:
        h = np.linalg.solve(M, np.ones(idx.size))
    except np.linalg.LinAlgError as exc:
        raise Unreachable(f"hitting-time system for {source}->{target} is singular") from exc
    return float(h[np.searchsorted(idx, source)])


def diameter_estimate(mdp: TabularMdp, policy: PolicyLike) -> float:
    """Largest expected hitting time over all ordered state pairs."""
    P, _ = induced_chain(mdp, policy)
    S = P.shape[0]
    if S == 1:
        return 0.0
    adj = P > 0.0
    if not _reach(adj, 0).all() or not _reach(adj.T.copy(), 0).all():
        raise Unreachable("induced chain is not irreducible; some pair has infinite hitting time")
    try:
        return float(kernels.all_pairs_max_hitting(np.ascontiguousarray(P)))
    except Exception as exc:
        raise Unreachable("hitting-time system is singular") from exc
