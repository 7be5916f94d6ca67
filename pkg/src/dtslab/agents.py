"""Online agents: the double Thompson sampling learner and four baselines.

All agents share one loop protocol::

    agent.begin_epoch_if_needed(t)
    a = agent.act(s)
    s_next, r = env.step(a)
    agent.observe(s, a, r, s_next, t)

and expose ``segments``: the (start time, model, mixture) pieces over which
their behaviour was stationary, which the regret accounting consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import NonMonotoneTime
from .mdp_core import DeterministicPolicy, StochasticPolicy, TabularMdp, policy_key
from .posterior import DirichletPosterior, VisitCounters, record_step, sample_transition_model, weight_from_mass
from .ppi import PpiConfig, PpiResult, run_ppi, solve_optimal_policy

REMIX_THRESHOLD = 1e-4
AGENT_NAMES = ("dts", "tsde", "egreedy", "random", "oracle")


@dataclass
class Segment:
    """A stretch of steps played with one mixture ``mu`` on one model ``theta``.

    ``theta is None`` means the agent holds no model; accounting then uses the truth.
    """

    t_start: int
    epoch: int
    mu: np.ndarray
    theta: Optional[np.ndarray] = None
    w: float = 1.0
    ppi_iterations: int = 0
    kl: float = float("nan")
    converged: bool = False
    status: str = ""


@dataclass
class EpisodeSchedule:
    t_k: int = 0
    T_prev: int = 0
    n_at_start: Optional[np.ndarray] = None
    k: int = 0
    terminate: bool = True
    history: list = field(default_factory=list)  # (t_k, T_k, ended_by_doubling) per finished epoch

    def lengths(self, horizon: Optional[int] = None) -> list[int]:
        out = [T for _, T, _ in self.history]
        if horizon is not None and self.k > 0:
            out.append(horizon - self.t_k)
        return out


@dataclass
class AgentState:
    posterior: DirichletPosterior
    counters: VisitCounters
    mu_policy: np.ndarray
    schedule: EpisodeSchedule
    rng: np.random.Generator
    reward: np.ndarray
    discount: float
    cfg: PpiConfig = PpiConfig()
    force_weight: Optional[float] = None
    strict_per_step: bool = False
    theta_k: Optional[np.ndarray] = None
    greedy: Optional[DeterministicPolicy] = None
    j_star_k: float = float("nan")
    j_mu_k: float = float("nan")
    w_applied: float = 1.0
    last_t: int = -1
    policy_version: int = 0
    last_ppi: Optional[PpiResult] = None


def new_state(reward: np.ndarray, discount: float, seed=0, cfg: PpiConfig = PpiConfig(),
              prior_alpha: float = 1.0, force_weight: Optional[float] = None,
              strict_per_step: bool = False) -> AgentState:
    S, A = reward.shape
    return AgentState(
        posterior=DirichletPosterior.prior(S, A, prior_alpha),
        counters=VisitCounters(S, A),
        mu_policy=np.full((S, A), 1.0 / A),
        schedule=EpisodeSchedule(n_at_start=np.zeros((S, A), np.int64)),
        rng=np.random.default_rng(seed),
        reward=np.asarray(reward, float),
        discount=float(discount),
        cfg=cfg,
        force_weight=force_weight,
        strict_per_step=strict_per_step,
    )


def _sample_row(rng: np.random.Generator, row: np.ndarray) -> int:
    a = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    return min(a, row.size - 1)


def dts_act(state: AgentState, s: int) -> int:
    """Draw ``a ~ mu(.|s)`` from the agent's own generator."""
    return _sample_row(state.rng, state.mu_policy[s])


def _mixture_gain(state: AgentState, mu: np.ndarray) -> float:
    P, r = kernels.induced(state.theta_k, state.discount * state.reward, mu)
    return float(kernels.gain_bias(P, r)[0])


def _apply_ppi(state: AgentState, res: PpiResult) -> None:
    state.mu_policy = np.array(res.policy.probs)
    state.j_mu_k = res.j_final
    state.w_applied = float(res.w_trace[-1]) if len(res.w_trace) else 1.0
    state.last_ppi = res
    state.policy_version += 1


def dts_begin_epoch_if_needed(state: AgentState, t: int) -> AgentState:
    """Close the running epoch if a stopping rule fired and resample model and mixture."""
    sch = state.schedule
    if not sch.terminate:
        return state
    if sch.k > 0:
        T_k = t - sch.t_k
        # the length rule ends an epoch at exactly T_prev + 1 steps; anything shorter was a doubling
        sch.history.append((sch.t_k, T_k, T_k < sch.T_prev + 1))
        sch.T_prev = T_k
    sch.t_k = t
    sch.k += 1
    sch.n_at_start = state.counters.n_sa.copy()
    sch.terminate = False

    state.theta_k = sample_transition_model(state.posterior, state.rng)
    model = TabularMdp(state.reward, state.theta_k, state.discount)
    state.greedy = solve_optimal_policy(model, start=state.greedy)
    res = run_ppi(model, StochasticPolicy(state.mu_policy), state.counters, state.cfg,
                  greedy=state.greedy, force_weight=state.force_weight)
    state.j_star_k = res.j_star
    _apply_ppi(state, res)
    return state


def _remix_once(state: AgentState) -> None:
    """One safeguarded mixing iteration with the current weight, J refreshed after."""
    S = state.mu_policy.shape[0]
    key = np.argmax(state.mu_policy, axis=1).astype(np.int64)
    theta = state.theta_k
    reward = state.discount * state.reward
    star = state.greedy.action_of
    d_star = _stationary(theta[np.arange(S), star])
    count = float(state.counters.pair_total(policy_key(key)))
    mu, n, jt, wt, kt, status, fb = kernels.ppi_iterate(
        theta, reward, np.ascontiguousarray(state.mu_policy), np.ascontiguousarray(star),
        state.j_star_k, d_star, count, key, 1, state.cfg.kl_tolerance, state.cfg.w_min, -1.0)
    state.mu_policy = mu
    state.j_mu_k = float(jt[-1])
    state.w_applied = float(wt[-1])
    state.policy_version += 1


def _stationary(P: np.ndarray) -> np.ndarray:
    from .mdp_core import _stationary_from_chain
    return _stationary_from_chain(np.ascontiguousarray(P))


def dts_observe(state: AgentState, s: int, a: int, r: float, s_next: int, t: int) -> AgentState:
    """Fold in one transition, refresh the mixture, and evaluate the epoch stopping rules."""
    if t <= state.last_t:
        raise NonMonotoneTime(f"t={t} does not follow t={state.last_t}")
    sch = state.schedule
    key = policy_key(np.argmax(state.mu_policy, axis=1))
    state.posterior.observe(s, a, s_next)
    record_step(state.counters, t, sch.k, key, s, a, s_next)
    state.last_t = t

    if state.force_weight is None and state.theta_k is not None:
        if state.strict_per_step:
            model = TabularMdp(state.reward, state.theta_k, state.discount)
            res = run_ppi(model, StochasticPolicy(state.mu_policy), state.counters, state.cfg, greedy=state.greedy)
            if res.iterations and not np.array_equal(res.policy.probs, state.mu_policy):
                _apply_ppi(state, res)
        elif state.j_mu_k < state.j_star_k:
            key_now = policy_key(np.argmax(state.mu_policy, axis=1))
            w_now = weight_from_mass(state.counters.pair_total(key_now), state.j_mu_k,
                                     state.j_star_k, state.cfg.w_min).w
            if abs(w_now - state.w_applied) > REMIX_THRESHOLD:
                _remix_once(state)

    n = state.counters.n_sa[s, a]
    if t + 1 > sch.t_k + sch.T_prev or n > 2 * sch.n_at_start[s, a]:
        sch.terminate = True
    return state


class DTSAgent:
    """Posterior sampling over models plus posterior-weighted mixing over policies."""

    name = "dts"
    force_weight: Optional[float] = None

    def __init__(self, reward, discount, seed=0, cfg: PpiConfig = PpiConfig(), prior_alpha: float = 1.0,
                 strict_per_step: bool = False, force_weight: Optional[float] = None):
        if force_weight is None:
            force_weight = self.force_weight
        self.state = new_state(reward, discount, seed, cfg, prior_alpha, force_weight, strict_per_step)
        self.segments: list[Segment] = []
        self._version_seen = -1

    @property
    def epoch(self) -> int:
        return self.state.schedule.k

    @property
    def w(self) -> float:
        return self.state.w_applied

    def _note_segment(self, t: int) -> None:
        st = self.state
        if st.policy_version == self._version_seen:
            return
        self._version_seen = st.policy_version
        res = st.last_ppi
        if self.segments and self.segments[-1].t_start == t:
            # superseded before it was ever played
            self.segments.pop()
        self.segments.append(Segment(
            t_start=t, epoch=st.schedule.k, mu=st.mu_policy.copy(), theta=st.theta_k, w=st.w_applied,
            ppi_iterations=res.iterations if res else 0,
            kl=float(res.kl_trace[-1]) if res is not None and len(res.kl_trace) else float("nan"),
            converged=bool(res.converged) if res else False, status=res.status if res else ""))

    def begin_epoch_if_needed(self, t: int) -> None:
        dts_begin_epoch_if_needed(self.state, t)
        self._note_segment(t)

    def act(self, s: int) -> int:
        return dts_act(self.state, s)

    def observe(self, s, a, r, s_next, t) -> None:
        dts_observe(self.state, s, a, r, s_next, t)
        # a mid-epoch remix takes effect from the next step on
        self._note_segment(t + 1)

    def epoch_lengths(self, horizon: int) -> list[int]:
        return self.state.schedule.lengths(horizon)


class TSDEAgent(DTSAgent):
    """Thompson sampling with dynamic episodes: the mixture is the sampled greedy policy."""

    name = "tsde"
    force_weight = 0.0


class _ModelFreeAgent:
    """Shared plumbing for baselines that never sample a model."""

    name = "base"

    def __init__(self, reward, discount, seed=0):
        self.reward = np.asarray(reward, float)
        self.discount = float(discount)
        self.rng = np.random.default_rng(seed)
        self.segments: list[Segment] = []
        self.epoch = 1
        self.w = float("nan")
        self._last_t = -1

    def _policy(self) -> np.ndarray:
        raise NotImplementedError

    def begin_epoch_if_needed(self, t: int) -> None:
        mu = self._policy()
        if not self.segments or not np.array_equal(self.segments[-1].mu, mu):
            self.segments.append(Segment(t_start=t, epoch=self.epoch, mu=mu.copy()))

    def observe(self, s, a, r, s_next, t) -> None:
        if t <= self._last_t:
            raise NonMonotoneTime(f"t={t} does not follow t={self._last_t}")
        self._last_t = t

    def epoch_lengths(self, horizon: int) -> list[int]:
        return [horizon]


class EpsilonGreedyAgent(_ModelFreeAgent):
    """Tabular Q-learning with fixed epsilon-greedy exploration."""

    name = "egreedy"

    def __init__(self, reward, discount, seed=0, epsilon: float = 0.1, learning_rate: float = 0.1):
        super().__init__(reward, discount, seed)
        self.epsilon = epsilon
        self.learning_rate = learning_rate
        self.q = np.zeros_like(self.reward)

    def _policy(self) -> np.ndarray:
        S, A = self.q.shape
        mu = np.full((S, A), self.epsilon / A)
        mu[np.arange(S), np.argmax(self.q, axis=1)] += 1.0 - self.epsilon
        return mu

    def act(self, s: int) -> int:
        if self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.q.shape[1]))
        return int(np.argmax(self.q[s]))

    def observe(self, s, a, r, s_next, t) -> None:
        super().observe(s, a, r, s_next, t)
        target = r + self.discount * self.q[s_next].max()
        self.q[s, a] += self.learning_rate * (target - self.q[s, a])


class RandomAgent(_ModelFreeAgent):
    name = "random"

    def _policy(self) -> np.ndarray:
        S, A = self.reward.shape
        return np.full((S, A), 1.0 / A)

    def act(self, s: int) -> int:
        return int(self.rng.integers(self.reward.shape[1]))


class OracleAgent(_ModelFreeAgent):
    """Plays the optimal policy of the true model; only the simulator can build one."""

    name = "oracle"

    def __init__(self, reward, discount, seed=0, true_mdp: Optional[TabularMdp] = None):
        super().__init__(reward, discount, seed)
        if true_mdp is None:
            raise ValueError("the oracle needs the true model")
        self.pi_star = solve_optimal_policy(true_mdp)

    def _policy(self) -> np.ndarray:
        return StochasticPolicy.one_hot(self.pi_star.action_of, self.reward.shape[1]).probs.copy()

    def act(self, s: int) -> int:
        return int(self.pi_star.action_of[s])


def make_agent(name: str, mdp: TabularMdp, seed=0, cfg: PpiConfig = PpiConfig(),
               prior_alpha: float = 1.0, strict_per_step: bool = False):
    """Agent by CLI name; the true model is handed over only to the oracle."""
    if name == "dts":
        return DTSAgent(mdp.reward, mdp.discount, seed, cfg, prior_alpha, strict_per_step)
    if name == "tsde":
        return TSDEAgent(mdp.reward, mdp.discount, seed, cfg, prior_alpha, strict_per_step)
    if name == "egreedy":
        return EpsilonGreedyAgent(mdp.reward, mdp.discount, seed)
    if name == "random":
        return RandomAgent(mdp.reward, mdp.discount, seed)
    if name == "oracle":
        return OracleAgent(mdp.reward, mdp.discount, seed, true_mdp=mdp)
    raise ValueError(f"unknown agent {name!r}; choose from {', '.join(AGENT_NAMES)}")
