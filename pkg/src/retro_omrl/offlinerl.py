"""Behavior-regularized actor-critic (value-penalty variant) on latent-augmented states.

Every network sees the augmented state ``[s, z]`` where ``z`` is a task code
that arrives as a plain array, so no gradient can reach the encoder.
Policies are tanh-squashed diagonal Gaussians. The KL penalty is computed in
pre-squash space, which is exact because tanh is a bijection.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diffcompute import (
    ApproximatorSpec,
    NonFiniteError,
    OptimizerState,
    ParameterVector,
    Tensor,
    adam_step,
    concat,
    grad,
    init_params,
    minimum,
    mlp,
)
from . import envlab
from .taskenc import encode


@dataclass(frozen=True)
class BRACConfig:
    gamma: float = 0.9
    alpha_kl: float = 1.0
    tau: float = 0.005
    learning_rate: float = 3e-4
    hidden: tuple = (64, 64)
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    var_floor: float = 1e-3
    action_clip: float = 0.999


@dataclass(frozen=True)
class RLBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("states", "actions", "next_states", "z"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if isinstance(self.z, Tensor):
            raise TypeError("batch latents must be detached arrays")

    def __len__(self):
        return len(self.rewards)


@dataclass(frozen=True)
class PolicyParams:
    params: ParameterVector
    opt: OptimizerState


ActorParams = PolicyParams
BehaviorParams = PolicyParams


@dataclass(frozen=True)
class CriticParams:
    q1: ParameterVector
    q2: ParameterVector
    q1_target: ParameterVector
    q2_target: ParameterVector
    opt1: OptimizerState
    opt2: OptimizerState


def _opt(pv, cfg):
    return OptimizerState.zeros(pv.spec.n_params, learning_rate=cfg.learning_rate)


def init_actor(state_dim, action_dim, d_z, cfg: BRACConfig, rng) -> ActorParams:
    spec = ApproximatorSpec((state_dim + d_z, *cfg.hidden, 2 * action_dim), "relu", "identity")
    pv = init_params(spec, rng, final_scale=0.1)
    return PolicyParams(pv, _opt(pv, cfg))


init_behavior = init_actor


def init_critics(state_dim, action_dim, d_z, cfg: BRACConfig, rng) -> CriticParams:
    spec = ApproximatorSpec((state_dim + d_z + action_dim, *cfg.hidden, 1), "relu", "identity")
    q1, q2 = init_params(spec, rng), init_params(spec, rng)
    return CriticParams(q1, q2, q1, q2, _opt(q1, cfg), _opt(q2, cfg))


# -- network heads ---------------------------------------------------------
def _split_head(out: Tensor, action_dim):
    return out[:, :action_dim], out[:, action_dim:]


def actor_gaussian(spec, flat, states, z, cfg: BRACConfig):
    """(mean, log_std) of the pre-squash actor Gaussian."""
    out = mlp(spec, flat, np.concatenate([states, z], axis=1))
    mu, raw = _split_head(out, spec.output_dim // 2)
    half = 0.5 * (cfg.log_std_max - cfg.log_std_min)
    log_std = (raw.tanh() + 1.0) * half + cfg.log_std_min
    return mu, log_std


def behavior_gaussian(spec, flat, states, z, cfg: BRACConfig):
    """(mean, log_std) of the behavior clone; variance never drops below the floor."""
    out = mlp(spec, flat, np.concatenate([states, z], axis=1))
    mu, raw = _split_head(out, spec.output_dim // 2)
    var = raw.softplus() + cfg.var_floor
    return mu, var.log() * 0.5


def q_values(spec, flat, states, z, actions):
    x = concat([Tensor(np.concatenate([states, z], axis=1)), actions], axis=1)
    return mlp(spec, flat, x).reshape(-1)


def gaussian_kl(mu_p, log_std_p, mu_q, log_std_q) -> Tensor:
    """Per-row KL(p || q) between diagonal Gaussians, summed over dimensions."""
    var_p = (log_std_p * 2.0).exp()
    var_q = (log_std_q * 2.0).exp()
    diff = mu_p - mu_q
    kl = log_std_q - log_std_p + (var_p + diff * diff) / (var_q * 2.0) - 0.5
    return kl.sum(axis=1)


def pre_squash(actions, clip):
    return np.arctanh(np.clip(actions, -clip, clip))


# -- objectives ------------------------------------------------------------
def behavior_objective(batch: RLBatch, spec, cfg: BRACConfig):
    """Mean negative log-likelihood of dataset actions (pre-squash, constants dropped)."""
    u = pre_squash(batch.actions, cfg.action_clip)

    def objective(flat):
        mu, log_std = behavior_gaussian(spec, flat, batch.states, batch.z, cfg)
        diff = mu - u
        nll = diff * diff / ((log_std * 2.0).exp() * 2.0) + log_std
        return nll.sum(axis=1).mean()

    return objective


def td_targets(batch: RLBatch, critics: CriticParams, next_actions, next_penalty, gamma):
    """r + gamma * (1 - done) * (min of target critics - penalty) at s'."""
    spec = critics.q1.spec
    q1 = q_values(spec, Tensor(critics.q1_target.values), batch.next_states, batch.z,
                  Tensor(next_actions)).data
    q2 = q_values(spec, Tensor(critics.q2_target.values), batch.next_states, batch.z,
                  Tensor(next_actions)).data
    y = batch.rewards + gamma * (1.0 - batch.dones.astype(float)) * (np.minimum(q1, q2) - next_penalty)
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("non-finite TD targets")
    return y


def critic_objective(batch: RLBatch, spec, targets):
    a = Tensor(batch.actions)

    def objective(q1_flat, q2_flat):
        e1 = q_values(spec, q1_flat, batch.states, batch.z, a) - targets
        e2 = q_values(spec, q2_flat, batch.states, batch.z, a) - targets
        return (e1 * e1).mean() + (e2 * e2).mean()

    return objective


def actor_objective(batch: RLBatch, spec, critics: CriticParams, behavior: BehaviorParams,
                    alpha_kl, noise, cfg: BRACConfig):
    """mean(alpha * KL(pi || pi_b) - min(Q1, Q2)(s, tanh(mu + std * noise)))."""
    b_mu, b_log_std = behavior_gaussian(
        behavior.params.spec, Tensor(behavior.params.values), batch.states, batch.z, cfg
    )
    q1_flat, q2_flat = Tensor(critics.q1.values), Tensor(critics.q2.values)
    qspec = critics.q1.spec

    def objective(flat):
        mu, log_std = actor_gaussian(spec, flat, batch.states, batch.z, cfg)
        a = (mu + log_std.exp() * noise).tanh()
        q = minimum(q_values(qspec, q1_flat, batch.states, batch.z, a),
                    q_values(qspec, q2_flat, batch.states, batch.z, a))
        loss = -q.mean()
        if alpha_kl:
            loss = loss + gaussian_kl(mu, log_std, b_mu, b_log_std).mean() * alpha_kl
        return loss

    return objective


# -- updates ---------------------------------------------------------------
def behavior_step(batch: RLBatch, behavior: BehaviorParams, cfg: BRACConfig):
    value, (g,) = grad(behavior_objective(batch, behavior.params.spec, cfg), behavior.params)
    params, opt = adam_step(behavior.params, g, behavior.opt)
    return PolicyParams(params, opt), value


def behavior_clone(batches, behavior: BehaviorParams, cfg: BRACConfig, n_steps):
    """Fit the behavior Gaussian for ``n_steps`` Adam steps over an iterable of batches.

    ``batches`` is either one RLBatch (reused every step) or a callable
    ``step -> RLBatch``.
    """
    losses = []
    for step in range(n_steps):
        batch = batches(step) if callable(batches) else batches
        behavior, value = behavior_step(batch, behavior, cfg)
        losses.append(value)
    return behavior, losses


def sample_policy_actions(actor: ActorParams, states, z, rng, cfg: BRACConfig):
    spec = actor.params.spec
    mu, log_std = actor_gaussian(spec, Tensor(actor.params.values), states, z, cfg)
    noise = rng.standard_normal(mu.shape)
    u = mu.data + np.exp(log_std.data) * noise
    return np.tanh(u), mu, log_std


def polyak(target: ParameterVector, online: ParameterVector, tau):
    return target.replace((1.0 - tau) * target.values + tau * online.values)


def critic_update(batch: RLBatch, critics: CriticParams, actor: ActorParams,
                  behavior: BehaviorParams, cfg: BRACConfig, rng, alpha_kl=None):
    """One TD step on both critics with the KL value penalty, then a Polyak target update."""
    alpha = cfg.alpha_kl if alpha_kl is None else alpha_kl
    next_a, mu, log_std = sample_policy_actions(actor, batch.next_states, batch.z, rng, cfg)
    penalty = 0.0
    if alpha:
        b_mu, b_log_std = behavior_gaussian(
            behavior.params.spec, Tensor(behavior.params.values), batch.next_states, batch.z, cfg
        )
        penalty = alpha * gaussian_kl(mu, log_std, b_mu, b_log_std).data
    y = td_targets(batch, critics, next_a, penalty, cfg.gamma)
    return regress_critics(batch, critics, y, cfg)


def regress_critics(batch: RLBatch, critics: CriticParams, targets, cfg: BRACConfig):
    value, (g1, g2) = grad(critic_objective(batch, critics.q1.spec, targets), critics.q1, critics.q2)
    q1, opt1 = adam_step(critics.q1, g1, critics.opt1)
    q2, opt2 = adam_step(critics.q2, g2, critics.opt2)
    return CriticParams(
        q1, q2, polyak(critics.q1_target, q1, cfg.tau), polyak(critics.q2_target, q2, cfg.tau),
        opt1, opt2,
    ), value


def actor_update(batch: RLBatch, actor: ActorParams, critics: CriticParams,
                 behavior: BehaviorParams, alpha_kl, cfg: BRACConfig, rng):
    noise = rng.standard_normal((len(batch), actor.params.spec.output_dim // 2))
    objective = actor_objective(batch, actor.params.spec, critics, behavior, alpha_kl, noise, cfg)
    value, (g,) = grad(objective, actor.params)
    params, opt = adam_step(actor.params, g, actor.opt)
    return PolicyParams(params, opt), value


def mean_action(actor: ActorParams, states, z, cfg: BRACConfig):
    mu, _ = actor_gaussian(actor.params.spec, Tensor(actor.params.values),
                           np.atleast_2d(states), np.atleast_2d(z), cfg)
    return np.tanh(mu.data)


def greedy_discrete_action(critics: CriticParams, states, z, n_actions):
    """argmax over one-hot actions of min(Q1, Q2)."""
    states, z = np.atleast_2d(states), np.atleast_2d(z)
    scores = []
    for a in range(n_actions):
        acts = Tensor(np.tile(envlab.one_hot(a, n_actions), (len(states), 1)))
        q1 = q_values(critics.q1.spec, Tensor(critics.q1.values), states, z, acts).data
        q2 = q_values(critics.q2.spec, Tensor(critics.q2.values), states, z, acts).data
        scores.append(np.minimum(q1, q2))
    return np.argmax(np.stack(scores, axis=1), axis=1)


# -- evaluation ------------------------------------------------------------
class ContextTaskMismatch(ValueError):
    pass


def rollout_return(task, policy_fn, rng=None):
    """Undiscounted return of one episode under ``policy_fn(state) -> action``."""
    s = task.initial_state()
    total = 0.0
    for t in range(task.horizon):
        s, r, done = envlab.env_step(task, s, policy_fn(s), t, rng if task.slip > 0 else None)
        total += r
        if done:
            break
    return total


def evaluate_policy(task, encoder_params, actor: ActorParams, context, n_episodes, seed,
                    cfg: BRACConfig = BRACConfig()):
    """Encode ``context`` once, then roll out the mean action for ``n_episodes``.

    ``actor`` is either trained ActorParams or a callable ``(state, z) -> action``.
    Returns (mean_return, std_return).
    """
    if getattr(context, "task_id", task.task_id) not in (task.task_id, -1):
        raise ContextTaskMismatch(
            f"context from task {context.task_id} used to evaluate task {task.task_id}"
        )
    if hasattr(context, "as_context"):
        context = context.as_context()
    z = encode(encoder_params, context).values[None, :]
    rng = np.random.default_rng(seed)
    if callable(actor):
        policy = lambda s: actor(s, z[0])  # noqa: E731
    else:
        policy = lambda s: mean_action(actor, s[None, :], z, cfg)[0]  # noqa: E731
    returns = [rollout_return(task, policy, rng) for _ in range(n_episodes)]
    return float(np.mean(returns)), float(np.std(returns))
