"""Ground-truth environments and named presets."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ConstructionFailed, IndexOutOfRange
from .mdp_core import StochasticPolicy, TabularMdp, _reach, induced_chain

R_MIN = 1e-3
MAX_ATTEMPTS = 100


def is_irreducible(mdp: TabularMdp) -> bool:
    """Every state reaches every other under the uniform policy."""
    P, _ = induced_chain(mdp, StochasticPolicy.uniform(mdp.n_states, mdp.n_actions))
    adj = P > 0.0
    return bool(_reach(adj, 0).all() and _reach(adj.T.copy(), 0).all())


@dataclass
class Environment:
    """Simulator around a hidden ``TabularMdp``; rewards are deterministic in ``(s, a)``."""

    mdp: TabularMdp
    state: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    name: str = "custom"
    r_min: float = R_MIN

    def __post_init__(self):
        if not is_irreducible(self.mdp):
            raise ConstructionFailed(f"environment {self.name!r} is not irreducible under the uniform policy")
        if np.any(self.mdp.reward < self.r_min - 1e-15):
            raise ConstructionFailed(f"rewards below r_min={self.r_min}")
        self.start_state = int(self.state)
        self._cum = np.cumsum(self.mdp.transition, axis=2)

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def reset(self, seed=None, state: Optional[int] = None) -> int:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self.start_state if state is None else int(state)
        return self.state

    def step(self, a: int) -> tuple[int, float]:
        if not 0 <= a < self.n_actions:
            raise IndexOutOfRange(f"action {a} not in [0, {self.n_actions})")
        s = self.state
        row = self._cum[s, a]
        nxt = int(np.searchsorted(row, self.rng.random(), side="right"))
        nxt = min(nxt, self.n_states - 1)
        self.state = nxt
        return nxt, float(self.mdp.reward[s, a])


def make_random_mdp(S: int, A: int, seed=0, r_min: float = R_MIN, discount: float = 0.95) -> Environment:
    """Dirichlet(1) rows and uniform rewards on ``[r_min, 1]``, resampled until irreducible."""
    if S < 1 or A < 1:
        raise ValueError("S and A must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        theta = rng.dirichlet(np.ones(S), size=(S, A))
        reward = rng.uniform(r_min, 1.0, size=(S, A))
        mdp = TabularMdp(reward, theta, discount)
        if is_irreducible(mdp):
            return Environment(mdp, 0, np.random.default_rng(rng.integers(2**63)), f"random:{S}x{A}", r_min)
    raise ConstructionFailed(f"no irreducible {S}x{A} model within {MAX_ATTEMPTS} draws")


def riverswim_mdp(n: int, r_min: float = R_MIN, discount: float = 0.95) -> TabularMdp:
    """Action 0 swims left (deterministic), action 1 swims right against the current."""
    if n < 2:
        raise ValueError("RiverSwim needs at least 2 states")
    theta = np.zeros((n, 2, n))
    for s in range(n):
        theta[s, 0, max(s - 1, 0)] = 1.0
    theta[0, 1, 0] = 0.4
    theta[0, 1, 1] = 0.6
    for s in range(1, n - 1):
        theta[s, 1, s - 1] = 0.05
        theta[s, 1, s] = 0.6
        theta[s, 1, s + 1] = 0.35
    theta[n - 1, 1, n - 2] = 0.4
    theta[n - 1, 1, n - 1] = 0.6
    reward = np.full((n, 2), r_min)
    reward[0, 0] = 0.005 + r_min
    reward[n - 1, 1] = 1.0
    return TabularMdp(reward, theta, discount)


def chain_mdp(n: int, r_min: float = R_MIN, discount: float = 0.95) -> TabularMdp:
    """Deterministic ring: action 1 steps forward (paying 1 on the wrap), action 0 resets to 0."""
    if n < 2:
        raise ValueError("chain needs at least 2 states")
    theta = np.zeros((n, 2, n))
    reward = np.full((n, 2), r_min)
    for s in range(n):
        theta[s, 0, 0] = 1.0
        theta[s, 1, (s + 1) % n] = 1.0
    reward[n - 1, 1] = 1.0
    return TabularMdp(reward, theta, discount)


def make_riverswim(n: int, seed=0, r_min: float = R_MIN, discount: float = 0.95) -> Environment:
    return Environment(riverswim_mdp(n, r_min, discount), 0, np.random.default_rng(seed), f"riverswim:{n}", r_min)


def make_chain(n: int, seed=0, r_min: float = R_MIN, discount: float = 0.95) -> Environment:
    return Environment(chain_mdp(n, r_min, discount), 0, np.random.default_rng(seed), f"chain:{n}", r_min)


def load_mdp(path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1))


_PRESET = re.compile(r"^(riverswim|chain|random):(\d+)(?:x(\d+))?$")


def make_env(env_id: str, seed=0, instance_seed=0, r_min: float = R_MIN, discount: float = 0.95) -> Environment:
    """Build an environment from a preset string or a model JSON path.

    ``riverswim:6``, ``chain:5`` and ``random:6x2`` are presets; ``random`` uses
    ``instance_seed`` to pick the model and ``seed`` for the transition noise.
    """
    m = _PRESET.match(env_id.strip())
    if m:
        kind, n, a = m.group(1), int(m.group(2)), m.group(3)
        if kind == "random":
            env = make_random_mdp(n, int(a or 2), instance_seed, r_min, discount)
            env.reset(seed=seed)
            return env
        if a is not None:
            raise ConfigError(f"preset {env_id!r} takes no action count")
        maker = make_riverswim if kind == "riverswim" else make_chain
        return maker(n, seed, r_min, discount)
    path = Path(env_id)
    if path.suffix == ".json" and path.exists():
        mdp = load_mdp(path)
        return Environment(mdp, 0, np.random.default_rng(seed), path.stem, r_min)
    raise ConfigError(f"unknown environment {env_id!r}; use riverswim:N, chain:N, random:SxA or a .json model")
