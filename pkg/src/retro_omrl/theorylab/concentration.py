"""Empirical-distribution L1 deviation and the sample-count corollary built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# deviations within this of eps count as "at least eps" (conservative)
TIE_TOL = 1e-12


def weissman_bound(alphabet_size, m, eps):
    """(2^|A| - 2) exp(-m eps^2 / 2)."""
    return (2.0**alphabet_size - 2.0) * math.exp(-m * eps * eps / 2.0)


@dataclass(frozen=True)
class WeissmanCell:
    alphabet_size: int
    m: int
    eps: float
    n_trials: int
    empirical_rate: float
    analytic_bound: float

    @property
    def sigma(self):
        p = self.empirical_rate
        return math.sqrt(p * (1.0 - p) / self.n_trials)

    @property
    def passed(self):
        return self.empirical_rate <= self.analytic_bound + 3.0 * self.sigma


def l1_deviations(p, m, n_trials, rng):
    counts = rng.multinomial(m, p, size=n_trials)
    return np.abs(counts / m - p).sum(axis=1)


def verify_weissman(alphabet_size, m, eps, n_trials, seed=0, p=None):
    """Monte Carlo estimate of Pr(|P - P_hat|_1 >= eps) next to the analytic bound.

    ``p`` defaults to the uniform distribution. Returns
    ``(empirical_rate, analytic_bound)``; use ``weissman_cell`` for the full record.
    """
    cell = weissman_cell(alphabet_size, m, eps, n_trials, seed, p)
    return cell.empirical_rate, cell.analytic_bound


def weissman_cell(alphabet_size, m, eps, n_trials, seed=0, p=None) -> WeissmanCell:
    if alphabet_size < 2 or m < 1:
        raise ValueError("need alphabet_size >= 2 and m >= 1")
    p = np.full(alphabet_size, 1.0 / alphabet_size) if p is None else np.asarray(p, float)
    rng = np.random.default_rng([int(seed), alphabet_size, m, int(round(eps * 1e6))])
    dev = l1_deviations(p, m, n_trials, rng)
    rate = float(np.mean(dev >= eps - TIE_TOL))
    return WeissmanCell(alphabet_size, m, eps, n_trials, rate, weissman_bound(alphabet_size, m, eps))


def weissman_grid(alphabet_sizes=(2, 4, 8), ms=(10, 100, 1000), epss=(0.1, 0.3, 0.5),
                  n_trials=10_000, seed=0):
    return [
        weissman_cell(a, m, e, n_trials, seed)
        for a in alphabet_sizes
        for m in ms
        for e in epss
    ]


# -- corollary ------------------------------------------------------------------
class InfeasibleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorollaryConfig:
    r_max: float
    gamma: float
    lipschitz: float
    eps_mutual: float
    beta: float
    vol_z: int
    xi: float
    n_prior: int = 0

    @property
    def kappa(self):
        return 2.0 * self.r_max / (1.0 - self.gamma) ** 2

    def check(self):
        if not 0.0 < self.xi < 1.0:
            raise InfeasibleConfigError("xi must lie in (0, 1)")
        if self.vol_z < 2:
            raise InfeasibleConfigError("latent alphabet needs at least two symbols")
        if self.eps_mutual <= self.kappa * self.lipschitz * self.beta:
            raise InfeasibleConfigError(
                f"eps_mutual={self.eps_mutual} must exceed kappa*L*beta="
                f"{self.kappa * self.lipschitz * self.beta}"
            )

    @property
    def deviation_budget(self):
        """Allowed |Z2 - Zmut|_1 once the shift is bounded by beta."""
        return (1.0 - self.gamma) ** 2 * self.eps_mutual / (
            4.0 * self.r_max * self.lipschitz
        ) - self.beta / 2.0


@dataclass(frozen=True)
class CorollaryK:
    k: float

    @property
    def ceil(self):
        return math.ceil(self.k)

    @property
    def extra_samples(self):
        """Additional samples needed; zero when the prior samples already suffice."""
        return max(self.ceil, 0)

    @property
    def clipped(self):
        return max(self.k, 0.0)


def corollary_k(config: CorollaryConfig) -> CorollaryK:
    """k = 8 kappa^2 L^2 / (eps - kappa L beta)^2 * log((2^vol - 2) / xi) - N."""
    config.check()
    kl = config.kappa * config.lipschitz
    gap = config.eps_mutual - kl * config.beta
    log_term = math.log((2.0**config.vol_z - 2.0) / config.xi)
    return CorollaryK(8.0 * kl * kl / (gap * gap) * log_term - config.n_prior)


def verify_corollary(config: CorollaryConfig, n_trials, seed=0, z_mutual=None,
                     k_scale=1.0, extra_samples=None):
    """Fraction of trials whose empirical Z2 from N + k samples lands within the budget.

    ``z_mutual`` defaults to uniform over ``vol_z`` symbols.
    """
    config.check()
    budget = config.deviation_budget
    if budget <= 0:
        raise InfeasibleConfigError("deviation budget is not positive")
    if extra_samples is None:
        extra_samples = max(math.ceil(k_scale * corollary_k(config).k), 0)
    n = config.n_prior + int(extra_samples)
    if n <= 0:
        raise InfeasibleConfigError("need at least one sample in total")
    p = np.full(config.vol_z, 1.0 / config.vol_z) if z_mutual is None else np.asarray(z_mutual)
    rng = np.random.default_rng(seed)
    dev = l1_deviations(p, n, n_trials, rng)
    return float(np.mean(dev <= budget))
