"""Randomized exact checks of the return bound, the performance-difference bound
and the two-model return-gap lemma on small tabular meta-MDPs.

Task representations live on the probability simplex over a small latent
alphabet, and distances between them are L1. A policy conditioned on a
representation ``z`` is the mixture ``sum_k z[k] * softmax(W[s, k])``, which
is linear in ``z``; its L1 Lipschitz constant is certified by enumeration
before any sweep uses it.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from ..envlab import TabularMDP
from .mdp import exact_return, policy_values, discounted_occupancy

MARGIN_TOL = 1e-9
HIST_EDGES = (-np.inf, -1e-9, 0.0, 1e-6, 1e-3, 1e-2, 1e-1, 1.0, 10.0, np.inf)

# sweep sizes, kept small so exact DP stays fast
MAX_STATES = 6
MAX_ACTIONS = 3
MAX_TASKS = 4
MAX_CONTEXTS = 3
LATENT_SIZE = 3
R_MAX = 1.0


@dataclass
class BoundReport:
    name: str
    n_configs: int
    n_violations: int
    min_margin: float
    runtime: float
    margins: np.ndarray = field(repr=False, default=None)
    digest: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.n_violations == 0 and all(
            v for k, v in self.extra.items() if k.startswith("ok_")
        )

    def histogram(self):
        counts, _ = np.histogram(np.clip(self.margins, -1e300, 1e300), bins=np.array(HIST_EDGES))
        labels = [f"[{lo:g},{hi:g})" for lo, hi in zip(HIST_EDGES[:-1], HIST_EDGES[1:])]
        return dict(zip(labels, counts.tolist()))

    def to_dict(self):
        return {
            "name": self.name,
            "n_configs": self.n_configs,
            "n_violations": self.n_violations,
            "min_margin": self.min_margin,
            "runtime_seconds": self.runtime,
            "config_digest": self.digest,
            "margin_histogram": self.histogram() if self.margins is not None else {},
            "extra": self.extra,
            "passed": self.passed,
        }


def _digest(h, *arrays):
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=np.float64)).tobytes())


# -- policy family ------------------------------------------------------------
def _softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class LipschitzPolicyFamily:
    """pi(.|s, z) = sum_k z[k] softmax(W[s, k]) for z on the latent simplex."""

    weights: np.ndarray  # W[s, k, a] logits

    @property
    def base(self):
        return _softmax(self.weights, axis=2)

    @property
    def lipschitz_bound(self):
        # for sum(dz) = 0, |sum_k dz_k p_k|_1 <= |dz|_1 / 2 * max_{k,l} |p_k - p_l|_1
        p = self.base
        spread = np.abs(p[:, :, None, :] - p[:, None, :, :]).sum(axis=3)
        return float(spread.max() / 2.0)

    def policy(self, z):
        return np.einsum("k,ska->sa", np.asarray(z, dtype=np.float64), self.base)

    def certify(self, latent_space, lipschitz=None, tol=1e-12):
        """Check |pi(.|s,z1) - pi(.|s,z2)|_1 <= L |z1 - z2|_1 for every pair in ``latent_space``."""
        L = self.lipschitz_bound if lipschitz is None else lipschitz
        zs = np.asarray(latent_space, dtype=np.float64)
        pis = np.einsum("nk,ska->nsa", zs, self.base)
        lhs = np.abs(pis[:, None] - pis[None, :]).sum(axis=3).max(axis=2)
        rhs = L * np.abs(zs[:, None] - zs[None, :]).sum(axis=2)
        return bool(np.all(lhs <= rhs + tol))


# -- random meta-MDP ----------------------------------------------------------
@dataclass(frozen=True)
class MetaMDP:
    tasks: tuple  # TabularMDP per task, shared S, A, gamma
    weights: np.ndarray  # p(m, x), shape (n_tasks, n_contexts)
    r_max: float

    @property
    def gamma(self):
        return self.tasks[0].gamma

    @property
    def kappa(self):
        return 2.0 * self.r_max / (1.0 - self.gamma) ** 2


def random_mdp(rng, n_states, n_actions, gamma, r_max=R_MAX, initial=None):
    P = rng.dirichlet(np.full(n_states, 0.5), size=(n_states, n_actions))
    R = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    rho = rng.dirichlet(np.ones(n_states)) if initial is None else initial
    return TabularMDP(P, R, rho, gamma, r_max=r_max)


def random_meta_mdp(rng, gamma=None):
    S = int(rng.integers(2, MAX_STATES + 1))
    A = int(rng.integers(2, MAX_ACTIONS + 1))
    M = int(rng.integers(1, MAX_TASKS + 1))
    X = int(rng.integers(1, MAX_CONTEXTS + 1))
    if gamma is None:
        gamma = float(rng.uniform(0.0, 0.95))
    tasks = tuple(random_mdp(rng, S, A, gamma) for _ in range(M))
    weights = rng.dirichlet(np.ones(M * X)).reshape(M, X)
    return MetaMDP(tasks, weights, R_MAX)


def random_family(rng, meta: MetaMDP, scale=None):
    S, A = meta.tasks[0].n_states, meta.tasks[0].n_actions
    if scale is None:
        scale = float(np.exp(rng.uniform(np.log(0.1), np.log(5.0))))
    return LipschitzPolicyFamily(scale * rng.standard_normal((S, LATENT_SIZE, A)))


def near(rng, center, scale):
    """Convex move from ``center`` towards a random simplex point; keeps full support."""
    return (1.0 - scale) * center + scale * rng.dirichlet(np.ones(len(center)))


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def expected_return(meta: MetaMDP, family: LipschitzPolicyFamily, reps):
    """E_{m,x} J_m(pi(.|., reps[m, x])) with normalized returns."""
    total = 0.0
    for m, mdp in enumerate(meta.tasks):
        for x in range(meta.weights.shape[1]):
            total += meta.weights[m, x] * exact_return(mdp, family.policy(reps[m, x]))
    return total


def expected_l1(meta: MetaMDP, a, b):
    return float(np.sum(meta.weights * np.abs(a - b).sum(axis=2)))


# -- return bound ----------------------------------------------------------------
@dataclass(frozen=True)
class ReturnBoundInstance:
    meta: MetaMDP
    family: LipschitzPolicyFamily
    z: np.ndarray  # learned representation per (m, x), shape (M, X, K)
    z_mutual: np.ndarray
    z_star: np.ndarray


def return_bound_terms(inst: ReturnBoundInstance, lipschitz=None):
    """(lhs, rhs) of |J* - J| <= kappa L E(|Z - Zmut| + |Zmut - Z*|)."""
    L = inst.family.lipschitz_bound if lipschitz is None else lipschitz
    j = expected_return(inst.meta, inst.family, inst.z)
    j_star = expected_return(inst.meta, inst.family, inst.z_star)
    lhs = abs(j_star - j)
    rhs = inst.meta.kappa * L * (
        expected_l1(inst.meta, inst.z, inst.z_mutual)
        + expected_l1(inst.meta, inst.z_mutual, inst.z_star)
    )
    return lhs, rhs


def _best_representation(rng, mdp, family, n_candidates=8):
    """Highest-return representation among the simplex vertices and random points."""
    cands = np.concatenate(
        [np.eye(LATENT_SIZE), rng.dirichlet(np.ones(LATENT_SIZE), size=n_candidates)]
    )
    returns = [exact_return(mdp, family.policy(c)) for c in cands]
    return cands[int(np.argmax(returns))]


def random_return_bound_instance(rng) -> ReturnBoundInstance:
    meta = random_meta_mdp(rng)
    family = random_family(rng, meta)
    M, X = meta.weights.shape
    z_mutual = rng.dirichlet(np.ones(LATENT_SIZE), size=(M, X))
    z_star = np.stack(
        [np.stack([_best_representation(rng, meta.tasks[m], family) for _ in range(X)])
         for m in range(M)]
    )
    scale = _log_uniform(rng, 1e-3, 1.0)
    z = np.stack([[near(rng, z_mutual[m, x], scale) for x in range(X)] for m in range(M)])
    return ReturnBoundInstance(meta, family, z, z_mutual, z_star)


def _certified(family, *reps):
    space = np.concatenate([r.reshape(-1, LATENT_SIZE) for r in reps])
    if not family.certify(space):
        raise AssertionError("Lipschitz certificate failed")


def verify_return_bound(n_configs=1000, seed=0) -> BoundReport:
    rng = np.random.default_rng(seed)
    h = hashlib.sha256()
    margins = np.empty(n_configs)
    t0 = time.perf_counter()
    for i in range(n_configs):
        inst = random_return_bound_instance(rng)
        _certified(inst.family, inst.z, inst.z_mutual, inst.z_star)
        lhs, rhs = return_bound_terms(inst)
        margins[i] = rhs - lhs
        _digest(h, inst.family.weights, inst.z, inst.z_mutual, inst.z_star, inst.meta.weights,
                [inst.meta.gamma])
    runtime = time.perf_counter() - t0
    return BoundReport(
        "return-bound", n_configs, int(np.sum(margins < -MARGIN_TOL)),
        float(margins.min(initial=np.inf)), runtime, margins, h.hexdigest(),
    )


# -- performance-difference bound ------------------------------------------------
@dataclass(frozen=True)
class PerfDiffInstance:
    meta: MetaMDP
    family1: LipschitzPolicyFamily  # theta_1
    family2: LipschitzPolicyFamily  # theta_2
    z1: np.ndarray
    z2: np.ndarray
    z_mutual: np.ndarray

    @property
    def lipschitz(self):
        return max(self.family1.lipschitz_bound, self.family2.lipschitz_bound)


@dataclass(frozen=True)
class PerfDiffTerms:
    improvement: float  # J^2(theta_2) - J^1(theta_1)
    eps_mutual: float
    bound: float  # right-hand side
    condition_holds: bool  # per-context monotonicity requirement

    @property
    def margin(self):
        return self.improvement - self.bound


def perf_diff_terms(inst: PerfDiffInstance, lipschitz=None) -> PerfDiffTerms:
    meta = inst.meta
    L = inst.lipschitz if lipschitz is None else lipschitz
    j2 = expected_return(meta, inst.family2, inst.z2)
    j1 = expected_return(meta, inst.family1, inst.z1)
    eps = expected_return(meta, inst.family2, inst.z_mutual) - expected_return(
        meta, inst.family1, inst.z_mutual
    )
    bound = eps - meta.kappa * L * (
        2.0 * expected_l1(meta, inst.z2, inst.z_mutual) + expected_l1(meta, inst.z2, inst.z1)
    )
    condition = monotonicity_condition(meta, inst.z1, inst.z2, inst.z_mutual, eps, L)
    return PerfDiffTerms(j2 - j1, eps, bound, condition)


def monotonicity_condition(meta: MetaMDP, z1, z2, z_mutual, eps_mutual, lipschitz):
    """|Z2 - Zmut| <= (1-g)^2 eps / (4 Rmax L) - |Z2 - Z1| / 2 on every weighted context."""
    if lipschitz == 0:
        return eps_mutual > 0
    budget = (1.0 - meta.gamma) ** 2 * eps_mutual / (4.0 * meta.r_max * lipschitz)
    lhs = np.abs(z2 - z_mutual).sum(axis=2)
    rhs = budget - 0.5 * np.abs(z2 - z1).sum(axis=2)
    live = meta.weights > 0
    return bool(np.all(lhs[live] <= rhs[live]))


def random_perf_diff_instance(rng, max_tries=100) -> PerfDiffInstance:
    """Rejection-sample until the policy update improves the return under Zmut."""
    for _ in range(max_tries):
        meta = random_meta_mdp(rng, gamma=float(rng.uniform(0.0, 0.9)))
        M, X = meta.weights.shape
        fam1 = random_family(rng, meta)
        # theta_2 = theta_1 plus a perturbation of random size
        step = _log_uniform(rng, 1e-2, 3.0)
        fam2 = LipschitzPolicyFamily(fam1.weights + step * rng.standard_normal(fam1.weights.shape))
        z_mutual = rng.dirichlet(np.ones(LATENT_SIZE), size=(M, X))
        s2, s12 = _log_uniform(rng, 1e-5, 1.0), _log_uniform(rng, 1e-5, 1.0)
        z2 = np.stack([[near(rng, z_mutual[m, x], s2) for x in range(X)] for m in range(M)])
        z1 = np.stack([[near(rng, z2[m, x], s12) for x in range(X)] for m in range(M)])
        eps = expected_return(meta, fam2, z_mutual) - expected_return(meta, fam1, z_mutual)
        if eps < 0:
            fam1, fam2, eps = fam2, fam1, -eps
        if eps > 0:
            return PerfDiffInstance(meta, fam1, fam2, z1, z2, z_mutual)
    raise RuntimeError("could not sample an instance with positive eps_mutual")


def verify_perf_diff_bound(n_configs=1000, seed=0) -> BoundReport:
    rng = np.random.default_rng(seed)
    h = hashlib.sha256()
    margins = np.empty(n_configs)
    n_cond = n_cond_improved = 0
    t0 = time.perf_counter()
    for i in range(n_configs):
        inst = random_perf_diff_instance(rng)
        _certified(inst.family1, inst.z1, inst.z2, inst.z_mutual)
        _certified(inst.family2, inst.z1, inst.z2, inst.z_mutual)
        terms = perf_diff_terms(inst)
        margins[i] = terms.margin
        if terms.condition_holds:
            n_cond += 1
            n_cond_improved += terms.improvement > 0
        _digest(h, inst.family1.weights, inst.family2.weights, inst.z1, inst.z2, inst.z_mutual,
                inst.meta.weights, [inst.meta.gamma])
    runtime = time.perf_counter() - t0
    extra = {
        "n_condition_holds": n_cond,
        "n_condition_and_improved": int(n_cond_improved),
        "ok_condition_implies_improvement": bool(n_cond_improved == n_cond),
    }
    return BoundReport(
        "perf-diff", n_configs, int(np.sum(margins < -MARGIN_TOL)),
        float(margins.min(initial=np.inf)), runtime, margins, h.hexdigest(), extra,
    )


# -- two-model return gap --------------------------------------------------------
def tv(p, q, axis=-1):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=axis)


def return_gap_terms(mdp1: TabularMDP, pi1, mdp2: TabularMDP, pi2):
    """(lhs, rhs) of |V^{pi2}_{M2} - V^{pi1}_{M1}| <= 2 Rmax (eps_pi + gamma eps_M) / (1-g)^2.

    Values are unnormalized start-state values; rewards and initial
    distributions are taken from ``mdp1`` (the models differ in dynamics).
    """
    gamma = mdp1.gamma
    r_max = max(mdp1.r_max, mdp2.r_max)
    v1 = float(mdp1.initial @ policy_values(mdp1, pi1)[0])
    v2 = float(mdp2.initial @ policy_values(mdp2, pi2)[0])
    eps_pi = float(tv(pi1, pi2).max())
    d1 = discounted_occupancy(mdp1, pi1).d
    eps_m = float(np.sum(d1 * tv(mdp1.transition, mdp2.transition)))
    rhs = 2.0 * r_max * (eps_pi / (1.0 - gamma) ** 2 + gamma * eps_m / (1.0 - gamma) ** 2)
    return abs(v2 - v1), rhs


def random_lemma_instance(rng):
    S = int(rng.integers(2, MAX_STATES + 1))
    A = int(rng.integers(2, MAX_ACTIONS + 1))
    gamma = float(rng.uniform(0.0, 0.95))
    m1 = random_mdp(rng, S, A, gamma)
    scale_m = _log_uniform(rng, 1e-4, 1.0)
    P2 = (1.0 - scale_m) * m1.transition + scale_m * rng.dirichlet(np.ones(S), size=(S, A))
    m2 = TabularMDP(P2, m1.reward, m1.initial, gamma, r_max=m1.r_max)
    pi1 = rng.dirichlet(np.ones(A), size=S)
    scale_p = _log_uniform(rng, 1e-4, 1.0)
    pi2 = (1.0 - scale_p) * pi1 + scale_p * rng.dirichlet(np.ones(A), size=S)
    return m1, pi1, m2, pi2


def lemma_a1_check(n_configs=1000, seed=0) -> BoundReport:
    rng = np.random.default_rng(seed)
    h = hashlib.sha256()
    margins = np.empty(n_configs)
    t0 = time.perf_counter()
    for i in range(n_configs):
        m1, pi1, m2, pi2 = random_lemma_instance(rng)
        lhs, rhs = return_gap_terms(m1, pi1, m2, pi2)
        margins[i] = rhs - lhs
        _digest(h, m1.transition, m2.transition, m1.reward, pi1, pi2, [m1.gamma])
    runtime = time.perf_counter() - t0
    return BoundReport(
        "lemma-a1", n_configs, int(np.sum(margins < -MARGIN_TOL)),
        float(margins.min(initial=np.inf)), runtime, margins, h.hexdigest(),
    )
