import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retro_omrl.envlab import TabularMDP, make_task_family, one_hot, tabular_mdp_for
from retro_omrl import theorylab as th
from retro_omrl.theorylab import bounds


def _three_state_chain(gamma=0.8):
    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 0, max(s - 1, 0)] += 0.8
        P[s, 0, min(s + 1, 2)] += 0.2
        P[s, 1, min(s + 1, 2)] += 0.7
        P[s, 1, s] += 0.3
    R = np.array([[0.0, 0.5], [-0.2, 0.1], [1.0, -1.0]])
    return TabularMDP(P, R, np.array([0.5, 0.3, 0.2]), gamma)


# -- occupancy and returns ----------------------------------------------------------
def test_absorbing_single_pair():
    mdp = TabularMDP(np.ones((1, 1, 1)), np.array([[0.4]]), np.ones(1), 0.9)
    np.testing.assert_allclose(th.discounted_occupancy(mdp, np.ones((1, 1))).d, [[1.0]])
    assert th.exact_return(mdp, np.ones((1, 1))) == pytest.approx(0.4)


def test_gamma_zero_occupancy_is_initial_times_policy():
    mdp = _three_state_chain(gamma=0.0)
    pi = np.array([[0.3, 0.7], [1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(th.discounted_occupancy(mdp, pi).d, mdp.initial[:, None] * pi)


def test_occupancy_matches_monte_carlo():
    mdp = _three_state_chain()
    pi = np.array([[0.3, 0.7], [0.6, 0.4], [0.5, 0.5]])
    exact = th.discounted_occupancy(mdp, pi).d
    mc = th.monte_carlo_occupancy(mdp, pi, 1_000_000, np.random.default_rng(0))
    assert np.max(np.abs(mc - exact)) < 1e-3


def test_constant_and_half_reward_returns():
    mdp = _three_state_chain()
    pi = np.full((3, 2), 0.5)
    const = TabularMDP(mdp.transition, np.full((3, 2), -0.7), mdp.initial, mdp.gamma)
    assert th.exact_return(const, pi) == pytest.approx(-0.7, abs=1e-12)
    a0 = TabularMDP(mdp.transition, np.tile([1.0, 0.0], (3, 1)), mdp.initial, mdp.gamma)
    assert th.exact_return(a0, pi) == pytest.approx(0.5, abs=1e-12)


def test_chain_expert_return_matches_monte_carlo():
    task = next(t for t in make_task_family("GridChainDir", 4, 4, 0, slip=0.1) if t.direction > 0)
    mdp = tabular_mdp_for(task)
    pi = np.tile(one_hot(1, 2), (mdp.n_states, 1))
    exact = th.exact_return(mdp, pi)
    mc = th.monte_carlo_return(mdp, pi, 1_000_000, np.random.default_rng(1))
    assert abs(mc - exact) < 1e-3


def test_return_normalization_and_occupancy_sum():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mdp = bounds.random_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(2, 4)),
                                float(rng.uniform(0, 0.99)))
        pi = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
        d = th.discounted_occupancy(mdp, pi).d
        assert abs(d.sum() - 1.0) <= 1e-9 and np.all(d >= -1e-12)
        assert abs(th.exact_return(mdp, pi)) <= mdp.r_max + 1e-12


def test_policy_rows_validated():
    mdp = _three_state_chain()
    with pytest.raises(ValueError):
        th.discounted_occupancy(mdp, np.full((3, 2), 0.4))
    with pytest.raises(ValueError):
        th.discounted_occupancy(mdp, np.full((2, 2), 0.5))


def test_value_iteration_greedy_is_optimal():
    mdp = _three_state_chain()
    q, greedy = th.value_iteration(mdp)
    _, q_greedy = th.policy_values(mdp, greedy)
    np.testing.assert_allclose(q_greedy, q, atol=1e-9)


# -- Lipschitz family ----------------------------------------------------------------
def test_lipschitz_certificate_on_random_families():
    rng = np.random.default_rng(3)
    for _ in range(50):
        fam = bounds.LipschitzPolicyFamily(3.0 * rng.standard_normal((4, bounds.LATENT_SIZE, 3)))
        space = np.concatenate([np.eye(bounds.LATENT_SIZE),
                                rng.dirichlet(np.ones(bounds.LATENT_SIZE), size=30)])
        assert fam.certify(space)
        assert not fam.certify(space, lipschitz=0.5 * fam.lipschitz_bound)


# -- return bound --------------------------------------------------------------------
def _instance(seed):
    return bounds.random_return_bound_instance(np.random.default_rng(seed))


def test_return_bound_identical_representations_tight():
    inst = _instance(0)
    same = bounds.ReturnBoundInstance(inst.meta, inst.family, inst.z_star, inst.z_star, inst.z_star)
    assert bounds.return_bound_terms(same) == (0.0, 0.0)


def test_return_bound_mutual_equals_learned():
    for seed in range(20):
        inst = _instance(seed)
        spec = bounds.ReturnBoundInstance(inst.meta, inst.family, inst.z_mutual, inst.z_mutual,
                                          inst.z_star)
        lhs, rhs = bounds.return_bound_terms(spec)
        expected = inst.meta.kappa * inst.family.lipschitz_bound * bounds.expected_l1(
            inst.meta, inst.z_mutual, inst.z_star)
        assert rhs == pytest.approx(expected, rel=1e-12)
        assert lhs <= rhs + 1e-9


def test_return_bound_sweep_and_report():
    report = th.verify_return_bound(200, seed=1)
    assert report.n_violations == 0 and report.passed
    assert report.min_margin >= -1e-9
    assert sum(report.histogram().values()) == 200
    assert th.verify_return_bound(20, seed=1).digest == th.verify_return_bound(20, seed=1).digest
    d = report.to_dict()
    assert d["passed"] and d["n_configs"] == 200


# -- performance-difference bound -----------------------------------------------------
def test_perf_diff_identical_update_is_tight():
    inst = bounds.random_perf_diff_instance(np.random.default_rng(0))
    same = bounds.PerfDiffInstance(inst.meta, inst.family1, inst.family1, inst.z_mutual,
                                   inst.z_mutual, inst.z_mutual)
    terms = bounds.perf_diff_terms(same)
    assert terms.improvement == 0.0 and terms.eps_mutual == 0.0 and terms.bound == 0.0


def test_perf_diff_with_z2_at_mutual():
    rng = np.random.default_rng(2)
    for _ in range(20):
        inst = bounds.random_perf_diff_instance(rng)
        sub = bounds.PerfDiffInstance(inst.meta, inst.family1, inst.family2, inst.z1,
                                      inst.z_mutual, inst.z_mutual)
        terms = bounds.perf_diff_terms(sub)
        expected = terms.eps_mutual - inst.meta.kappa * sub.lipschitz * bounds.expected_l1(
            inst.meta, inst.z_mutual, inst.z1)
        assert terms.bound == pytest.approx(expected, rel=1e-12, abs=1e-15)
        assert terms.margin >= -1e-9


def test_perf_diff_sweep():
    report = th.verify_perf_diff_bound(200, seed=3)
    assert report.n_violations == 0
    assert report.extra["ok_condition_implies_improvement"]
    assert report.passed


# -- return-gap lemma ---------------------------------------------------------------------
def test_return_gap_identical_pairs():
    mdp = _three_state_chain()
    pi = np.full((3, 2), 0.5)
    assert th.return_gap_terms(mdp, pi, mdp, pi) == (0.0, 0.0)


def test_return_gap_one_state_policy_change():
    mdp = _three_state_chain()
    pi1 = np.full((3, 2), 0.5)
    pi2 = pi1.copy()
    pi2[1] = [0.9, 0.1]
    lhs, rhs = th.return_gap_terms(mdp, pi1, mdp, pi2)
    assert 0.0 < lhs <= rhs


def test_return_gap_sweep():
    report = th.lemma_a1_check(300, seed=4)
    assert report.n_violations == 0 and report.min_margin >= -1e-9


# -- concentration ------------------------------------------------------------------------
def test_weissman_worked_example():
    assert th.weissman_bound(2, 100, 0.3) == pytest.approx(2 * math.exp(-4.5))
    assert th.weissman_bound(2, 100, 0.3) == pytest.approx(0.02222, abs=1e-5)


def test_weissman_eps_zero_trivial():
    rate, bound = th.verify_weissman(4, 10, 0.0, 200)
    assert bound >= 1.0 and rate <= bound


def test_weissman_input_errors():
    with pytest.raises(ValueError):
        th.verify_weissman(1, 10, 0.1, 10)
    with pytest.raises(ValueError):
        th.verify_weissman(2, 0, 0.1, 10)


def test_weissman_grid_small():
    cells = th.weissman_grid(n_trials=1000, seed=2)
    assert len(cells) == 27 and all(c.passed for c in cells)


def test_corollary_worked_example():
    cfg = th.CorollaryConfig(1.0, 0.0, 1.0, 1.0, 0.1, 2, 0.5, 0)
    assert cfg.kappa == 2.0
    k = th.corollary_k(cfg)
    assert k.k == pytest.approx(32 / 0.64 * math.log(4))
    assert abs(k.k - 69.31) <= 0.01 and k.ceil == 70
    assert th.verify_corollary(cfg, 1000, seed=0) >= 0.5


def test_corollary_prior_samples_cover_need():
    cfg = th.CorollaryConfig(1.0, 0.0, 1.0, 1.0, 0.1, 2, 0.5, 100)
    k = th.corollary_k(cfg)
    assert k.k < 0 and k.extra_samples == 0 and k.clipped == 0.0


def test_corollary_inflated_k_improves_success():
    cfg = th.CorollaryConfig(1.0, 0.0, 1.0, 1.0, 0.1, 2, 0.5, 0)
    base = th.verify_corollary(cfg, 1000, seed=0)
    assert th.verify_corollary(cfg, 1000, seed=0, k_scale=4.0) > base


def test_corollary_errors():
    with pytest.raises(th.InfeasibleConfigError):
        th.corollary_k(th.CorollaryConfig(1.0, 0.0, 1.0, 0.2, 0.1, 2, 0.5))
    with pytest.raises(th.InfeasibleConfigError):
        th.corollary_k(th.CorollaryConfig(1.0, 0.0, 1.0, 1.0, 0.1, 2, 1.0))
    with pytest.raises(th.InfeasibleConfigError):
        th.verify_corollary(th.CorollaryConfig(1.0, 0.0, 1.0, 1.0, 0.1, 2, 0.5), 10,
                            extra_samples=0)


@settings(max_examples=100, deadline=None)
@given(
    eps=st.floats(0.5, 3.0), beta=st.floats(0.0, 0.1), lz=st.floats(0.2, 1.0),
    vol=st.integers(2, 6), xi=st.floats(0.05, 0.95), d=st.floats(0.01, 0.5),
)
def test_corollary_k_monotone(eps, beta, lz, vol, xi, d):
    base = th.CorollaryConfig(1.0, 0.0, lz, eps, beta, vol, xi)
    k = th.corollary_k(base).k

    def k_of(**kw):
        fields = dict(r_max=1.0, gamma=0.0, lipschitz=lz, eps_mutual=eps, beta=beta, vol_z=vol,
                      xi=xi)
        fields.update(kw)
        return th.corollary_k(th.CorollaryConfig(**fields)).k

    assert k_of(eps_mutual=eps + d) < k
    assert k_of(beta=beta + d * 0.1) > k
    assert k_of(vol_z=vol + 1) > k
    assert k_of(lipschitz=lz * (1 + d)) > k
    assert k_of(xi=min(xi + d, 0.99)) <= k
