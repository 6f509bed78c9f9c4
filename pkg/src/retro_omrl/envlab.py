"""Toy task families, scripted behavior policies and offline dataset generation.

Two families are provided:

* ``PointGoal2D``: a point starting at the origin moves with bounded velocity
  towards a goal on the upper unit semicircle; reward is minus the distance to
  the goal after the move.
* ``GridChainDir``: a five-state chain with actions left/right; the task
  decides which direction is rewarded.  States and actions are one-hot vectors
  so both families go through the same encoder code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import OfflineTaskDataset

POINT_GOAL = "PointGoal2D"
GRID_CHAIN = "GridChainDir"
FAMILIES = (POINT_GOAL, GRID_CHAIN)

# PointGoal2D constants
DT = 0.1
A_MAX = 1.0
POINT_HORIZON = 20
GOAL_RADIUS = 1.0
POINT_GAMMA = 0.9

# GridChainDir constants
CHAIN_STATES = 5
CHAIN_ACTIONS = 2
CHAIN_HORIZON = 10
CHAIN_GAMMA = 0.9
CHAIN_REWARD = 1.0
CHAIN_PENALTY = -0.1
LEFT, RIGHT = 0, 1


class UnknownFamilyError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    family: str
    task_id: int
    goal_or_direction: np.ndarray
    horizon: int
    gamma: float
    slip: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnknownFamilyError(self.family)
        g = np.array(self.goal_or_direction, dtype=np.float64, ndmin=1)
        g.flags.writeable = False
        object.__setattr__(self, "goal_or_direction", g)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def state_dim(self):
        return 2 if self.family == POINT_GOAL else CHAIN_STATES

    @property
    def action_dim(self):
        return 2 if self.family == POINT_GOAL else CHAIN_ACTIONS

    @property
    def direction(self):
        """+1 for a right task, -1 for a left task (GridChainDir only)."""
        return int(np.sign(self.goal_or_direction[0]))

    def initial_state(self):
        if self.family == POINT_GOAL:
            return np.zeros(2)
        return one_hot(CHAIN_STATES // 2, CHAIN_STATES)


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # R[s, a]
    initial: np.ndarray  # rho0[s]
    gamma: float
    r_max: float = field(default=None)

    def __post_init__(self):
        P = np.array(self.transition, dtype=np.float64)
        R = np.array(self.reward, dtype=np.float64)
        rho = np.array(self.initial, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError(f"inconsistent shapes P{P.shape} R{R.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be distributions")
        if rho.shape != (P.shape[0],) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        r_max = float(np.max(np.abs(R))) if self.r_max is None else float(self.r_max)
        if np.max(np.abs(R)) > r_max + 1e-12:
            raise ValueError("rewards exceed r_max")
        for name, a in (("transition", P), ("reward", R), ("initial", rho)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]


@dataclass(frozen=True)
class BehaviorPolicySpec:
    kind: str = "noisy_expert"
    noise_scale: float = 0.0
    mixture_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("noisy_expert", "uniform_random", "mixture"):
            raise ValueError(f"unknown behavior policy kind {self.kind!r}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0.0 <= self.mixture_weight <= 1.0:
            raise ValueError("mixture_weight must be in [0, 1]")


def one_hot(i, n):
    v = np.zeros(n)
    v[i] = 1.0
    return v


def make_task_family(family, n_train, n_test, seed=0, slip=0.0):
    """Sample ``n_train + n_test`` tasks; the first ``n_train`` are the training tasks."""
    if family not in FAMILIES:
        raise UnknownFamilyError(family)
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one training and one test task")
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    if family == POINT_GOAL:
        angles = rng.uniform(0.0, np.pi, size=n)
        return [
            TaskSpec(POINT_GOAL, i, GOAL_RADIUS * np.array([np.cos(t), np.sin(t)]),
                     POINT_HORIZON, POINT_GAMMA)
            for i, t in enumerate(angles)
        ]
    directions = rng.choice([-1.0, 1.0], size=n)
    return [
        TaskSpec(GRID_CHAIN, i, [d], CHAIN_HORIZON, CHAIN_GAMMA, slip)
        for i, d in enumerate(directions)
    ]


def tabular_mdp_for(task: TaskSpec) -> TabularMDP:
    if task.family != GRID_CHAIN:
        raise UnknownFamilyError(f"{task.family} has no tabular form")
    return _chain_mdp(task.direction, float(task.slip), float(task.gamma))


@lru_cache(maxsize=64)
def _chain_mdp(direction, slip, gamma):
    n = CHAIN_STATES
    P = np.zeros((n, CHAIN_ACTIONS, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        # slip sends the agent the other way
        P[s, LEFT, left] += 1.0 - slip
        P[s, LEFT, right] += slip
        P[s, RIGHT, right] += 1.0 - slip
        P[s, RIGHT, left] += slip
    rewarded = RIGHT if direction > 0 else LEFT
    R = np.full((n, CHAIN_ACTIONS), CHAIN_PENALTY)
    R[:, rewarded] = CHAIN_REWARD
    return TabularMDP(P, R, one_hot(n // 2, n), gamma, r_max=CHAIN_REWARD)


def env_step(task: TaskSpec, state, action, t=0, rng=None):
    """Advance one step; ``t`` is the index of the step being taken."""
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape != (task.state_dim,) or action.shape != (task.action_dim,):
        raise ValueError(
            f"expected state {task.state_dim} / action {task.action_dim}, "
            f"got {state.shape} / {action.shape}"
        )
    done = t + 1 >= task.horizon
    if task.family == POINT_GOAL:
        nxt = state + np.clip(action, -A_MAX, A_MAX) * DT
        reward = -float(np.linalg.norm(nxt - task.goal_or_direction))
        return nxt, reward, done
    mdp = tabular_mdp_for(task)
    s, a = int(np.argmax(state)), int(np.argmax(action))
    row = mdp.transition[s, a]
    if rng is None:
        if np.count_nonzero(row) != 1:
            raise ValueError("stochastic transition needs an rng")
        s2 = int(np.argmax(row))
    else:
        s2 = int(rng.choice(CHAIN_STATES, p=row))
    return one_hot(s2, CHAIN_STATES), float(mdp.reward[s, a]), done


def expert_action(task: TaskSpec, state):
    if task.family == POINT_GOAL:
        return np.clip((task.goal_or_direction - state) / DT, -A_MAX, A_MAX)
    return one_hot(RIGHT if task.direction > 0 else LEFT, CHAIN_ACTIONS)


def behavior_action(task: TaskSpec, policy: BehaviorPolicySpec, state, rng):
    kind = policy.kind
    if kind == "mixture":
        kind = "uniform_random" if rng.random() < policy.mixture_weight else "noisy_expert"
    if task.family == POINT_GOAL:
        if kind == "uniform_random":
            return rng.uniform(-A_MAX, A_MAX, size=2)
        a = expert_action(task, state)
        if policy.noise_scale > 0:
            a = a + policy.noise_scale * rng.standard_normal(2)
        return np.clip(a, -A_MAX, A_MAX)
    if kind == "uniform_random":
        return one_hot(int(rng.integers(CHAIN_ACTIONS)), CHAIN_ACTIONS)
    a = expert_action(task, state)
    if policy.noise_scale > 0:
        a = a + policy.noise_scale * rng.standard_normal(CHAIN_ACTIONS)
    return one_hot(int(np.argmax(a)), CHAIN_ACTIONS)


def rollout_behavior(task: TaskSpec, policy: BehaviorPolicySpec, n_transitions, seed=0):
    """Collect ``n_transitions`` transitions as whole episodes of the task horizon."""
    if n_transitions < task.horizon:
        raise ValueError(f"n_transitions={n_transitions} is shorter than one episode")
    if n_transitions % task.horizon:
        raise ValueError(
            f"n_transitions={n_transitions} is not a whole number of {task.horizon}-step episodes"
        )
    rng = np.random.default_rng([int(seed), task.task_id])
    S, A, R, S2, D = [], [], [], [], []
    for _ in range(n_transitions // task.horizon):
        s = task.initial_state()
        for t in range(task.horizon):
            a = behavior_action(task, policy, s, rng)
            s2, r, done = env_step(task, s, a, t, rng if task.slip > 0 else None)
            S.append(s)
            A.append(a)
            R.append(r)
            S2.append(s2)
            D.append(done)
            s = s2
    return OfflineTaskDataset(task.task_id, S, A, R, S2, D)
