import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfmlab import hfm, rg
from hfmlab.states import DenseDistribution

from oracles import coarse_step_brute, entropy_bits_brute

LN2 = math.log(2.0)


def fixed_point_entropy(n, g):
    return rg.analytic_fixed_point(n, g).entropy_bits()


def test_coarse_step_vs_brute_force():
    rng = np.random.default_rng(0)
    for n in (2, 4, 6):
        p = DenseDistribution.random(n, rng)
        for alpha in (0.0, 0.3, 1.0):
            out = rg.coarse_step(p, alpha)
            np.testing.assert_allclose(out.probs, coarse_step_brute(p.probs, alpha), atol=1e-14)


def test_coarse_step_uniform_invariant():
    u = DenseDistribution.uniform(5)
    np.testing.assert_allclose(rg.coarse_step(u, 0.0).probs, u.probs, atol=1e-14)


def test_coarse_step_full_reset():
    p = DenseDistribution.random(4, np.random.default_rng(1))
    out = rg.coarse_step(p, 1.0)
    assert out.probs[0] == pytest.approx(1.0)


def test_coarse_step_fixed_point_ln3():
    # alpha = 1 - xi with xi = 2/3 at g = ln 3
    g = math.log(3.0)
    star = rg.analytic_fixed_point(2, g)
    np.testing.assert_allclose(
        star.probs, [5 / 9, 2 / 9, 1 / 9, 1 / 9], atol=1e-12
    )
    out = rg.coarse_step(star, 1.0 - hfm.xi_of(g))
    assert out.tv(star) < 1e-14


@given(st.integers(0, 500), st.floats(0.05, 0.95), st.floats(0.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_coarse_step_linearity(seed, lam, alpha):
    rng = np.random.default_rng(seed)
    p = DenseDistribution.random(4, rng)
    r = DenseDistribution.random(4, rng)
    mixed = DenseDistribution(4, lam * p.probs + (1 - lam) * r.probs)
    lhs = rg.coarse_step(mixed, alpha).probs
    rhs = lam * rg.coarse_step(p, alpha).probs + (1 - lam) * rg.coarse_step(r, alpha).probs
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_solve_alpha_uniform():
    u = DenseDistribution.uniform(6)
    assert rg.solve_alpha(u, 6.0) == pytest.approx(0.0, abs=1e-9)


def test_solve_alpha_fixed_point_identity():
    for n, g in [(4, 1.0), (6, 0.8), (8, 1.5)]:
        star = rg.analytic_fixed_point(n, g)
        alpha = rg.solve_alpha(star, star.entropy_bits())
        assert alpha == pytest.approx(1.0 - hfm.xi_of(g), abs=1e-9)


def test_solve_alpha_entropy_preserved():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = DenseDistribution.random(5, rng)
        target = p.entropy_bits()
        if target <= 1.0:
            continue
        alpha = rg.solve_alpha(p, target)
        out = rg.coarse_step(p, alpha)
        assert abs(out.entropy_bits() - target) < 1e-8


def test_solve_alpha_single_sign_change():
    rng = np.random.default_rng(4)
    p = DenseDistribution.random(5, rng)
    target = p.entropy_bits()
    grid = np.arange(0.0, 1.0 + 1e-9, 1e-3)
    signs = np.sign([rg.coarse_entropy_gap(p, a, target) for a in grid])
    changes = int((np.diff(signs[signs != 0]) != 0).sum())
    assert changes == 1


def test_solve_alpha_no_root():
    p = DenseDistribution.random(4, np.random.default_rng(5))
    with pytest.raises(rg.NoRootError):
        rg.solve_alpha(p, 10.0)  # above the reachable entropy range


def test_fine_step_hfm_slice():
    # conditioning h_n on s_1 = 1 gives h_{n-1} on the shifted variables
    n, g = 6, 1.2
    h_n = hfm.probs_vector(hfm.HfmParams(n, g))
    out = rg.fine_step(h_n, 0.25)
    h_prev = hfm.probs_vector(hfm.HfmParams(n - 1, g))
    np.testing.assert_allclose(out.probs[: 1 << (n - 1)], 0.75 * h_prev.probs, atol=1e-12)
    # s_n = 1 block is uniform
    tail = out.probs[1 << (n - 1):]
    np.testing.assert_allclose(tail, 0.25 / (1 << (n - 1)), atol=1e-14)


def test_fine_step_entropy_matched_self_map():
    for n in range(3, 11):
        for g in (0.8, 1.5):
            h_n = hfm.probs_vector(hfm.HfmParams(n, g))
            q = rg.solve_q(h_n, h_n.entropy_bits())
            out = rg.fine_step(h_n, q)
            assert out.tv(h_n) < 1e-9


def test_solve_q_self_consistency():
    p = DenseDistribution.random(5, np.random.default_rng(6))
    target = rg.fine_step(p, 0.5).entropy_bits()
    roots_ok = abs(rg.fine_step(p, rg.solve_q(p, target)).entropy_bits() - target) < 1e-9
    assert roots_ok


def test_solve_q_unreachable():
    p = DenseDistribution.random(4, np.random.default_rng(7))
    with pytest.raises(rg.NoRootError):
        rg.solve_q(p, 100.0)


def test_fine_step_zero_support_error():
    p = DenseDistribution(2, [0.5, 0.0, 0.5, 0.0])  # p(s_1=1) = 0
    with pytest.raises(ValueError):
        rg.fine_step(p, 0.5)


def test_transition_matrix_structure():
    t = rg.build_transition_matrix(2, 0.0)
    dense = t.rows.toarray()
    # row for (1,1) = index 3: 1/2 to (0,1)=idx 2 and 1/2 to (1,1)=idx 3
    np.testing.assert_allclose(dense[3], [0, 0, 0.5, 0.5], atol=1e-14)
    # stochasticity and sparsity for generic alpha
    t = rg.build_transition_matrix(5, 0.3)
    dense = t.rows.toarray()
    np.testing.assert_allclose(dense.sum(axis=1), 1.0, atol=1e-12)
    assert (np.count_nonzero(dense, axis=1) <= 3).all()


def test_transition_matrix_primitive():
    n = 4
    dense = rg.build_transition_matrix(n, 0.2).rows.toarray()
    power = np.linalg.matrix_power(dense, n)
    assert (power > 0).all()


def test_matrix_equivalence():
    rng = np.random.default_rng(8)
    p = DenseDistribution.random(6, rng)
    t = rg.build_transition_matrix(6, 0.4)
    np.testing.assert_allclose(t.apply(p).probs, rg.coarse_step(p, 0.4).probs, atol=1e-12)


def test_stationary_distribution_unique():
    t = rg.build_transition_matrix(5, 0.35)
    rng = np.random.default_rng(9)
    a = rg.stationary_distribution(t, DenseDistribution.random(5, rng))
    b = rg.stationary_distribution(t, DenseDistribution.random(5, rng))
    assert a.tv(b) < 1e-9


def test_stationary_matches_analytic_fixed_point():
    for n, g in [(4, 1.0), (7, 0.9)]:
        t = rg.build_transition_matrix(n, 1.0 - hfm.xi_of(g))
        stat = rg.stationary_distribution(t)
        assert stat.tv(rg.analytic_fixed_point(n, g)) < 1e-9


def test_analytic_fixed_point_values_and_guards():
    star = rg.analytic_fixed_point(2, math.log(3.0))
    np.testing.assert_allclose(star.probs, [0.55556, 0.22222, 0.11111, 0.11111], atol=1e-5)
    with pytest.raises(ValueError):
        rg.analytic_fixed_point(4, LN2)
    with pytest.raises(ValueError):
        rg.analytic_fixed_point(4, 0.3)
    big = rg.analytic_fixed_point(4, 60.0)
    assert big.probs[0] == pytest.approx(1.0, abs=1e-12)


def test_analytic_fixed_point_is_infinite_prefix_marginal():
    # width 60 truncates the infinite model at O(xi^60); g must be large
    # enough that this is below the 1e-10 comparison tolerance
    for n, g in [(3, 1.2), (6, 1.5), (8, 2.0)]:
        prefix = hfm.marginal_high(hfm.HfmParams(60, g), n)
        assert rg.analytic_fixed_point(n, g).tv(prefix) < 1e-10


def test_iterate_coarse_converges():
    n, g = 6, 1.0
    star = rg.analytic_fixed_point(n, g)
    config = rg.RgConfig(target_entropy=star.entropy_bits(), convergence_tolerance=1e-10)
    p0 = DenseDistribution.random(n, np.random.default_rng(10))
    limit, diag = rg.iterate_to_fixed_point(p0, config, "coarse")
    assert diag.converged
    assert limit.tv(star) < 1e-6


def test_iterate_from_fixed_point_is_fast():
    star = rg.analytic_fixed_point(5, 1.2)
    config = rg.RgConfig(target_entropy=star.entropy_bits(), convergence_tolerance=1e-9)
    _, diag = rg.iterate_to_fixed_point(star, config, "coarse")
    assert diag.converged and diag.iterations <= 2


def test_iterate_fine_converges_to_hfm():
    # the fine map contracts toward h_n only for g sufficiently below ln 2
    # (its Jacobian at h_n has spectral radius > 1 above the boundary), so
    # convergence from generic starts is tested in the attracting phase
    n, g = 6, 0.4
    h_n = hfm.probs_vector(hfm.HfmParams(n, g))
    config = rg.RgConfig(target_entropy=h_n.entropy_bits(), convergence_tolerance=1e-10)
    p0 = DenseDistribution.random(n, np.random.default_rng(11))
    limit, diag = rg.iterate_to_fixed_point(p0, config, "fine")
    assert diag.converged
    assert limit.tv(h_n) < 1e-6


def test_fine_map_repels_above_critical_coupling():
    # perturbations of h_n grow under entropy-matched fine iteration at g > ln 2
    n, g = 5, 1.0
    h_n = hfm.probs_vector(hfm.HfmParams(n, g))
    target = h_n.entropy_bits()
    pert = np.random.default_rng(12).dirichlet(np.full(1 << n, 1.0))
    p = DenseDistribution(n, (1 - 1e-4) * h_n.probs + 1e-4 * pert)
    start_tv = p.tv(h_n)
    for _ in range(10):
        p = rg.fine_step(p, rg.solve_q(p, target))
    assert p.tv(h_n) > 2 * start_tv


def test_iterate_non_convergence_reported():
    star = rg.analytic_fixed_point(6, 1.0)
    config = rg.RgConfig(target_entropy=star.entropy_bits(), max_iterations=2, convergence_tolerance=1e-12)
    _, diag = rg.iterate_to_fixed_point(DenseDistribution.random(6, np.random.default_rng(12)), config)
    assert not diag.converged


def test_rg_config_validation():
    with pytest.raises(ValueError):
        rg.RgConfig(target_entropy=0.5)
    with pytest.raises(ValueError):
        rg.RgConfig(target_entropy=2.0, convergence_tolerance=0.0)
