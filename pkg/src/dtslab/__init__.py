"""Tabular MDP lab: exact solvers, Dirichlet beliefs, posterior policy iteration, agents and regret accounting."""
from .kernels import BACKEND
from .mdp_core import (
    DeterministicPolicy,
    GainBiasSolution,
    StochasticPolicy,
    TabularMdp,
    diameter_estimate,
    expected_hitting_time,
    gain,
    solve_gain_bias,
    span,
    stationary_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DeterministicPolicy",
    "GainBiasSolution",
    "StochasticPolicy",
    "TabularMdp",
    "diameter_estimate",
    "expected_hitting_time",
    "gain",
    "solve_gain_bias",
    "span",
    "stationary_distribution",
]
