"""Dirichlet beliefs over transition rows, visit counters, and the posterior weight."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import IndexOutOfRange, NonMonotoneTime, NonPositiveReturn

W_MIN = 1e-6


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class DirichletPosterior:
    """Pseudo-counts ``alpha[s, a, s']``; one independent Dirichlet per row."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=float)
        if self.alpha.ndim != 3 or self.alpha.shape[0] != self.alpha.shape[2]:
            raise ValueError(f"alpha must be S×A×S, got {self.alpha.shape}")
        if not np.all(self.alpha > 0.0):
            raise ValueError("Dirichlet pseudo-counts must be positive")

    @classmethod
    def prior(cls, n_states: int, n_actions: int, alpha0: float = 1.0) -> "DirichletPosterior":
        return cls(np.full((n_states, n_actions, n_states), float(alpha0)))

    @property
    def n_states(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_actions(self) -> int:
        return self.alpha.shape[1]

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum(axis=2, keepdims=True)

    def _check(self, s, a, s_next):
        S, A, _ = self.alpha.shape
        if not (0 <= s < S and 0 <= a < A and 0 <= s_next < S):
            raise IndexOutOfRange(f"(s={s}, a={a}, s'={s_next}) outside S={S}, A={A}")

    def observe(self, s: int, a: int, s_next: int) -> None:
        """In-place conjugate update; the agents' hot path."""
        self._check(s, a, s_next)
        self.alpha[s, a, s_next] += 1.0

    def copy(self) -> "DirichletPosterior":
        return DirichletPosterior(self.alpha.copy())


def bayes_update(post: DirichletPosterior, s: int, a: int, s_next: int) -> DirichletPosterior:
    """Posterior after observing ``s --a--> s_next``; the input is left untouched."""
    out = post.copy()
    out.observe(s, a, s_next)
    return out


def sample_transition_model(post: DirichletPosterior, rng=None) -> np.ndarray:
    """Draw a transition tensor with each row ~ Dirichlet(alpha[s, a, :])."""
    g = _as_rng(rng).standard_gamma(post.alpha)
    tot = g.sum(axis=2, keepdims=True)
    dead = tot[..., 0] <= 0.0
    if np.any(dead):
        # every gamma draw underflowed: fall back to the row's largest pseudo-count
        s_idx, a_idx = np.nonzero(dead)
        g[s_idx, a_idx] = 0.0
        g[s_idx, a_idx, np.argmax(post.alpha[s_idx, a_idx], axis=-1)] = 1.0
        tot = g.sum(axis=2, keepdims=True)
    theta = g / tot
    # push the rounding residue into each row's largest entry so rows sum to 1
    resid = 1.0 - theta.sum(axis=2)
    big = np.argmax(theta, axis=2)
    S, A = big.shape
    ii, jj = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
    theta[ii, jj, big] += resid
    return theta


@dataclass
class VisitCounters:
    """Every count the agents and diagnostics need, updated one step at a time."""

    n_states: int
    n_actions: int
    n_sa: np.ndarray = None
    n_sas: np.ndarray = None
    h_pair: dict = field(default_factory=dict)
    n_pi_t: dict = field(default_factory=dict)
    n_pi_k: dict = field(default_factory=dict)
    epoch_of_t: dict = field(default_factory=dict)
    last_t: int = -1
    last_epoch: Optional[int] = None

    def __post_init__(self):
        S, A = self.n_states, self.n_actions
        if self.n_sa is None:
            self.n_sa = np.zeros((S, A), dtype=np.int64)
        if self.n_sas is None:
            self.n_sas = np.zeros((S, A, S), dtype=np.int64)

    def pair_total(self, key: str) -> int:
        """Total recorded transition mass attributed to policy ``key``."""
        h = self.h_pair.get(key)
        return 0 if h is None else int(h.sum())

    def completed_epochs(self) -> int:
        return int(sum(self.n_pi_k.values()))

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_sa": self.n_sa.tolist(),
            "n_sas": self.n_sas.tolist(),
            "h_pair": {k: v.tolist() for k, v in self.h_pair.items()},
            "n_pi_t": dict(self.n_pi_t),
            "n_pi_k": dict(self.n_pi_k),
            "epoch_of_t": {str(k): v for k, v in self.epoch_of_t.items()},
            "last_t": self.last_t,
            "last_epoch": self.last_epoch,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VisitCounters":
        return cls(
            n_states=int(doc["n_states"]),
            n_actions=int(doc["n_actions"]),
            n_sa=np.asarray(doc["n_sa"], dtype=np.int64),
            n_sas=np.asarray(doc["n_sas"], dtype=np.int64),
            h_pair={k: np.asarray(v, dtype=np.int64) for k, v in doc["h_pair"].items()},
            n_pi_t={k: int(v) for k, v in doc["n_pi_t"].items()},
            n_pi_k={k: int(v) for k, v in doc["n_pi_k"].items()},
            epoch_of_t={int(k): int(v) for k, v in doc["epoch_of_t"].items()},
            last_t=int(doc["last_t"]),
            last_epoch=doc["last_epoch"],
        )


def record_step(counters: VisitCounters, t: int, epoch: int, policy_key: str,
                s: int, a: int, s_next: int) -> VisitCounters:
    """Fold one transition into ``counters`` (mutated and returned)."""
    if t <= counters.last_t:
        raise NonMonotoneTime(f"t={t} does not follow t={counters.last_t}")
    S, A = counters.n_states, counters.n_actions
    if not (0 <= s < S and 0 <= a < A and 0 <= s_next < S):
        raise IndexOutOfRange(f"(s={s}, a={a}, s'={s_next}) outside S={S}, A={A}")
    counters.n_sa[s, a] += 1
    counters.n_sas[s, a, s_next] += 1
    h = counters.h_pair.get(policy_key)
    if h is None:
        h = counters.h_pair[policy_key] = np.zeros((S, S), dtype=np.int64)
    h[s, s_next] += 1
    counters.n_pi_t[policy_key] = counters.n_pi_t.get(policy_key, 0) + 1
    if epoch != counters.last_epoch:
        counters.n_pi_k[policy_key] = counters.n_pi_k.get(policy_key, 0) + 1
        counters.last_epoch = epoch
    counters.epoch_of_t[t] = epoch
    counters.last_t = t
    return counters


@dataclass(frozen=True)
class PosteriorWeight:
    """``w = exp(-neg_log_w)``; ``raw_neg_log_w`` is the exponent before the ``w_min`` clamp."""

    w: float
    neg_log_w: float
    raw_neg_log_w: float = 0.0
    clamped: bool = False


def weight_from_mass(mass: float, j_current: float, j_star: float, w_min: float = W_MIN) -> PosteriorWeight:
    """Weight for a given pair-count total; see :func:`posterior_weight`."""
    if j_current <= 0.0:
        raise NonPositiveReturn(f"gain {j_current} is not positive")
    if j_star <= 0.0:
        raise NonPositiveReturn(f"optimal gain {j_star} is not positive")
    ratio = max(0.0, math.log(j_star / j_current))
    raw = float(mass) * ratio
    cap = -math.log(w_min)
    if raw > cap:
        return PosteriorWeight(w_min, cap, raw, True)
    return PosteriorWeight(math.exp(-raw), raw, raw, False)


def posterior_weight(counters: VisitCounters, policy_key: str, j_current: float,
                     j_star: float, w_min: float = W_MIN) -> PosteriorWeight:
    """Count-weighted log return ratio, exponentiated and clamped to ``[w_min, 1]``."""
    return weight_from_mass(counters.pair_total(policy_key), j_current, j_star, w_min)


def snapshot_to_json(post: DirichletPosterior, counters: VisitCounters, t: int) -> str:
    return json.dumps({"alpha": post.alpha.tolist(), "t": int(t), "counters": counters.to_dict()})


def snapshot_from_json(text: str) -> tuple[DirichletPosterior, VisitCounters, int]:
    doc = json.loads(text)
    return DirichletPosterior(np.asarray(doc["alpha"], float)), VisitCounters.from_dict(doc["counters"]), int(doc["t"])
