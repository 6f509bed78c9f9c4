"""Exact dynamic programming on tabular MDPs, plus a Monte Carlo occupancy oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envlab import TabularMDP


@dataclass(frozen=True)
class OccupancyTable:
    d: np.ndarray

    def __post_init__(self):
        if np.any(self.d < -1e-12) or abs(self.d.sum() - 1.0) > 1e-9:
            raise ValueError("occupancy must be a distribution over (s, a)")


def _check_policy(mdp: TabularMDP, policy):
    pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {pi.shape} != {(mdp.n_states, mdp.n_actions)}")
    if np.any(pi < -1e-12) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("policy rows must be distributions")
    return pi


def state_transition(mdp: TabularMDP, pi):
    return np.einsum("sa,sat->st", pi, mdp.transition)


def discounted_occupancy(mdp: TabularMDP, policy) -> OccupancyTable:
    """(1 - gamma) * sum_t gamma^t Pr(s_t = s, a_t = a), solved as a linear system."""
    pi = _check_policy(mdp, policy)
    P_pi = state_transition(mdp, pi)
    n = mdp.n_states
    d_s = np.linalg.solve(np.eye(n) - mdp.gamma * P_pi.T, (1.0 - mdp.gamma) * mdp.initial)
    return OccupancyTable(d_s[:, None] * pi)


def exact_return(mdp: TabularMDP, policy, reward=None) -> float:
    """Normalized return sum_{s,a} d_pi(s, a) R(s, a)."""
    R = mdp.reward if reward is None else reward
    return float(np.sum(discounted_occupancy(mdp, policy).d * R))


def policy_values(mdp: TabularMDP, policy):
    """Unnormalized V^pi(s) and Q^pi(s, a)."""
    pi = _check_policy(mdp, policy)
    P_pi = state_transition(mdp, pi)
    r_pi = np.sum(pi * mdp.reward, axis=1)
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)
    Q = mdp.reward + mdp.gamma * mdp.transition @ V
    return V, Q


def start_value(mdp: TabularMDP, policy) -> float:
    V, _ = policy_values(mdp, policy)
    return float(mdp.initial @ V)


def value_iteration(mdp: TabularMDP, tol=1e-12, max_iter=100_000):
    """Optimal Q* and a deterministic greedy policy table."""
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        Q_new = mdp.reward + mdp.gamma * mdp.transition @ Q.max(axis=1)
        if np.max(np.abs(Q_new - Q)) < tol:
            Q = Q_new
            break
        Q = Q_new
    pi = np.zeros_like(Q)
    pi[np.arange(mdp.n_states), Q.argmax(axis=1)] = 1.0
    return Q, pi


def monte_carlo_occupancy(mdp: TabularMDP, policy, n_samples, rng) -> np.ndarray:
    """Sample t ~ Geometric(1 - gamma) and record (s_t, a_t); returns empirical d."""
    pi = _check_policy(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    t_stop = rng.geometric(1.0 - mdp.gamma, size=n_samples) - 1 if mdp.gamma > 0 else np.zeros(
        n_samples, dtype=int
    )
    cdf_rho = np.cumsum(mdp.initial)
    cdf_pi = np.cumsum(pi, axis=1)
    cdf_P = np.cumsum(mdp.transition, axis=2)
    s = np.minimum(np.searchsorted(cdf_rho, rng.random(n_samples), side="right"), S - 1)
    a = _draw(cdf_pi[s], rng)
    active = t_stop > 0
    t = 0
    while np.any(active):
        idx = np.flatnonzero(active)
        s[idx] = _draw(cdf_P[s[idx], a[idx]], rng)
        a[idx] = _draw(cdf_pi[s[idx]], rng)
        t += 1
        active = t_stop > t
    counts = np.zeros((S, A))
    np.add.at(counts, (s, a), 1.0)
    return counts / n_samples


def _draw(cdf_rows, rng):
    u = rng.random(len(cdf_rows))
    return np.minimum((cdf_rows < u[:, None]).sum(axis=1), cdf_rows.shape[1] - 1)


def monte_carlo_return(mdp: TabularMDP, policy, n_samples, rng) -> float:
    return float(np.sum(monte_carlo_occupancy(mdp, policy, n_samples, rng) * mdp.reward))
