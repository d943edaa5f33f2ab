import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from cgmc.errors import ContractViolation, ResourceGuardError
from cgmc.exact_oracles import (
    KardarParams,
    analyze_kernel,
    build_transition_matrix,
    coverage_curve,
    enumerate_gibbs,
    exact_coarse_marginal,
    gap_bounds,
    jump_intervals,
    kardar_coverage,
    kardar_coverage_info,
    kardar_free_energy,
    kardar_magnetization,
    spectral_gap,
    state_energies,
)
from cgmc.lattice_model import LatticeSpec, ModelSpec, NearestNeighbor, SpinConfig, Tabulated, total_energy

# Frozen from the grid-plus-Brent minimiser; cross-checked below against
# enumeration and, at K=0, against the self-consistency equation.
FROZEN_COVERAGE = [
    ((0.0, 0.0, 0.0), 0.5),
    ((1.0, 5.0, -4.5), 0.012142873329435533),
    ((1.0, 5.0, -3.5), 0.04019115875800472),
    ((1.0, 5.0, -3.25), 0.9710331837842107),
    ((1.0, 5.0, 0.0), 0.9990818778940604),
]


@pytest.mark.parametrize("params,expected", FROZEN_COVERAGE)
def test_kardar_coverage_frozen_values(params, expected):
    assert kardar_coverage(*params) == pytest.approx(expected, abs=1e-12)


def test_kardar_rejects_non_finite():
    with pytest.raises(ContractViolation):
        KardarParams(1.0, math.nan, 0.0)


def test_nearest_neighbour_only_matches_enumeration():
    # at J=0 the closed form needs no minimisation and finite rings converge fast
    for K, h in [(0.5, -0.3), (1.5, -1.2), (-1.0, 0.7)]:
        exact = kardar_coverage(K, 0.0, h)
        assert enumerate_gibbs(ModelSpec.kardar(20, K, 0.0, h)).mean_coverage == pytest.approx(exact, abs=0.02)


def _cw_roots(J, h):
    f = lambda m: math.tanh(h + J * m) - m
    grid = np.linspace(-1.0, 1.0, 20001)
    g = np.array([f(m) for m in grid])
    roots = [float(m) for m, v in zip(grid, g) if v == 0.0]
    roots += [brentq(f, a, b) for a, b, ga, gb in zip(grid, grid[1:], g, g[1:]) if ga * gb < 0]
    return roots


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-2.0, 2.0))
def test_curie_weiss_self_consistency(J, h):
    # no short-range bond: the minimiser solves m = tanh(h + J m)
    p = KardarParams(0.0, J, h)
    ranked = sorted((float(kardar_free_energy(m, p)), m) for m in _cw_roots(J, h))
    if len(ranked) > 1 and ranked[1][0] - ranked[0][0] < 1e-9:
        return  # coexistence, either root is a valid minimiser
    assert kardar_magnetization(p) == pytest.approx(ranked[0][1], abs=1e-7)


@pytest.mark.parametrize("K,J,h", [(1.0, 5.0, -4.5), (1.0, 5.0, -2.5), (-2.0, 2.0, 1.0), (1.0, 1.0, -1.5)])
def test_finite_rings_approach_the_limit(K, J, h):
    exact = kardar_coverage(K, J, h)
    gaps = [abs(enumerate_gibbs(ModelSpec.kardar(N, K, J, h)).mean_coverage - exact) for N in (8, 12, 16, 20)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.02


def test_strong_coupling_curve_has_one_jump():
    grid = np.linspace(-4.0, 0.0, 81)
    curve = coverage_curve(1.0, 5.0, grid)
    jumps = jump_intervals(curve)
    assert len(jumps) == 1
    lo, hi = jumps[0]
    assert -3.6 < lo < hi < -3.4
    assert [p.h for p in curve if p.jump_flag] == [lo, hi]
    cov = [p.coverage for p in curve]
    assert all(b >= a - 1e-12 for a, b in zip(cov, cov[1:]))


@pytest.mark.parametrize("K,J", [(-2.0, 2.0), (0.5, 0.0), (1.0, 1.0)])
def test_smooth_regimes_have_no_jump(K, J):
    curve = coverage_curve(K, J, np.linspace(-6.0, 4.0, 101))
    assert jump_intervals(curve) == [] and not any(p.jump_flag for p in curve)


def test_coexistence_point_flagged_and_tie_broken():
    # K = 0, h = -J/2 in gas variables is the symmetric point of the spin model
    cov, unique = kardar_coverage_info(0.0, 8.0, -4.0)
    assert not unique and cov < 0.5


def test_curve_requires_sorted_grid():
    with pytest.raises(ContractViolation):
        coverage_curve(1.0, 5.0, [0.0, -1.0])
    with pytest.raises(ContractViolation):
        coverage_curve(1.0, 5.0, [])


def test_enumeration_two_sites_by_hand():
    K, h = 0.7, -0.4
    g = enumerate_gibbs(ModelSpec.kardar(2, K, 0.0, h))
    w = np.array([1.0, math.exp(h), math.exp(h), math.exp(K + 2 * h)])
    assert np.allclose(g.distribution, w / w.sum(), atol=1e-15)
    assert g.log_Z == pytest.approx(math.log(w.sum() / 4), abs=1e-14)
    assert g.mean_coverage == pytest.approx((2 * w[1] + 2 * w[3]) / (2 * w.sum()), abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([4, 6, 8]), st.floats(-2, 2), st.lists(st.floats(-1, 1), min_size=1, max_size=4), st.floats(-2, 2))
def test_vectorised_energies_match_direct(N, K, values, h):
    model = ModelSpec(LatticeSpec(N), NearestNeighbor(K), Tabulated(values[: N // 2]), h)
    E = state_energies(model)
    for code in range(1 << N):
        assert E[code] == pytest.approx(total_energy(SpinConfig.from_code(code, N), model), abs=1e-10)


def test_resource_guards():
    with pytest.raises(ResourceGuardError):
        enumerate_gibbs(ModelSpec.kardar(26, 0, 0, 0))
    with pytest.raises(ResourceGuardError):
        build_transition_matrix("classical", ModelSpec.kardar(14, 0, 0, 0))
    with pytest.raises(ResourceGuardError):
        gap_bounds(ModelSpec.kardar(12, 0, 0, 0), 2)


def test_coarse_marginal_exact_without_short_range():
    # q=1 keeps the whole kernel; mean field compresses exactly at any q
    tab = ModelSpec(LatticeSpec(8), NearestNeighbor(0.0), Tabulated([0.3, -0.2, 0.5, 0.1]), -0.2)
    assert exact_coarse_marginal(tab, 1).total_rel_entropy_per_site == pytest.approx(0.0, abs=1e-12)
    for q in (2, 4):
        r = exact_coarse_marginal(ModelSpec.kardar(12, 0.0, 2.0, -1.0), q)
        assert r.rel_entropy_per_site == pytest.approx(0.0, abs=1e-12)
        assert r.reconstruction_entropy_per_site == pytest.approx(0.0, abs=1e-12)


def test_coarse_marginal_error_grows_with_short_range_bond():
    rel = [exact_coarse_marginal(ModelSpec.kardar(12, K, 2.0, -K - 1.0), 4).total_rel_entropy_per_site for K in (0.0, 0.5, 1.0)]
    assert rel[0] < 1e-12 < rel[1] < rel[2]


@pytest.mark.parametrize("q", [2, 3, 4])
def test_relative_entropy_decomposition(q):
    r = exact_coarse_marginal(ModelSpec.kardar(12, 1.0, 5.0, -3.5), q)
    assert abs(r.decomposition_residual) < 1e-10
    assert r.rel_entropy_per_site >= 0 and r.reconstruction_entropy_per_site >= 0
    assert r.fbar0.sum() == pytest.approx(1.0) and r.fbar_exact.sum() == pytest.approx(1.0)


def test_classical_matrix_two_sites():
    h = -0.8
    P = build_transition_matrix("classical", ModelSpec.kardar(2, 0.0, 0.0, h))
    up = math.exp(h) / 2
    assert P[0, 1] == P[0, 2] == pytest.approx(up)
    assert P[1, 0] == P[2, 0] == 0.5
    assert P[0, 0] == pytest.approx(1 - 2 * up)
    assert np.allclose(P.sum(axis=1), 1.0)


def test_coupled_matrix_on_flat_landscape():
    P = build_transition_matrix("coupled", ModelSpec.kardar(4, 0.0, 0.0, 0.0), q=2)
    # from empty: each cell raised with prob 1/4, then one of two sites
    assert [P[0, 1 << x] for x in range(4)] == [0.125] * 4 and P[0, 0] == 0.5
    # one particle in cell 0: the prior halves both intra-cell moves
    assert P[1, 3] == P[1, 0] == 0.125
    assert P[1, 5] == P[1, 9] == 0.125
    assert np.allclose(P, P.T)


def test_flat_classical_spectrum():
    # uniform single-flip walk on the 4-cube: eigenvalues 1 - |S|/2
    f = np.full(16, 1 / 16)
    rep = analyze_kernel(build_transition_matrix("classical", ModelSpec.kardar(4, 0, 0, 0)), f)
    assert np.allclose(np.sort(rep.eigenvalues), np.repeat([-1.0, -0.5, 0.0, 0.5, 1.0], [1, 4, 6, 4, 1]), atol=1e-12)
    assert rep.spectral_gap == pytest.approx(0.5) and rep.beta_star == pytest.approx(1.0)
    assert rep.mixing_bound_ok and rep.reliable


def test_two_state_chain():
    a, b = 0.3, 0.1
    P = np.array([[1 - a, a], [b, 1 - b]])
    f = np.array([b, a]) / (a + b)
    rep = analyze_kernel(P, f, mixing_steps=(1, 5, 50))
    assert rep.spectral_gap == pytest.approx(a + b, abs=1e-14)
    assert rep.db_violation < 1e-15 and rep.stationary_tv_error < 1e-14 and rep.mixing_bound_ok


def test_identity_has_no_gap():
    assert spectral_gap(np.eye(3), np.full(3, 1 / 3)) == pytest.approx(0.0, abs=1e-15)


def test_analyze_rejects_bad_input():
    with pytest.raises(ContractViolation):
        analyze_kernel(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(ContractViolation):
        analyze_kernel(np.eye(2), np.array([1.0]))


def test_non_reversible_kernel_flagged():
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    rep = analyze_kernel(P, np.full(3, 1 / 3), mixing_steps=())
    assert rep.stationary_tv_error < 1e-14 and not rep.reliable


@pytest.mark.parametrize("K,J", [(-2.0, 2.0), (1.0, 5.0), (1.0, 1.0)])
@pytest.mark.parametrize("N,q", [(4, 2), (6, 3), (8, 2), (8, 4)])
def test_both_kernels_target_gibbs(K, J, N, q):
    model = ModelSpec.kardar(N, K, J, -K - J / 2)
    f = enumerate_gibbs(model).distribution
    for P in (build_transition_matrix("classical", model), build_transition_matrix("coupled", model, q)):
        rep = analyze_kernel(P, f)
        assert rep.db_violation < 1e-10 and rep.stationary_tv_error < 1e-10
        assert rep.spectral_gap > 0 and rep.mixing_bound_ok


def test_cell_reconstruction_kernel_targets_gibbs():
    model = ModelSpec(LatticeSpec(6), NearestNeighbor(0.8), Tabulated([0.5, -0.4, 0.2]), -0.6)
    f = enumerate_gibbs(model).distribution
    rep = analyze_kernel(build_transition_matrix("coupled", model, 3, reconstruction="cell"), f)
    assert rep.db_violation < 1e-10 and rep.stationary_tv_error < 1e-10


def test_corrupted_fine_ratio_breaks_balance():
    model = ModelSpec.kardar(6, 1.0, 5.0, -3.5)
    f = enumerate_gibbs(model).distribution
    bad = build_transition_matrix("coupled", model, 3, fine_logratio=lambda df, dc, p, r: -(df - dc) + p)
    rep = analyze_kernel(bad, f, mixing_steps=())
    assert rep.db_violation > 1e-3 and rep.stationary_tv_error > 1e-3 and not rep.reliable


def test_gap_bounds_small_example():
    rep = gap_bounds(ModelSpec.kardar(4, 1.0, 5.0, -3.5), 2)
    assert rep.factorization_residual < 1e-12
    assert (rep.gamma_lo, rep.gamma_hi) == (0.5, 1.0)
    assert rep.bound_holds and rep.lower <= rep.lambda_coupled <= rep.upper * (1 + 1e-10)
    assert sum(rep.case_counts.values()) == 4 * 16
    assert 0 < rep.A_inf <= 1


@pytest.mark.parametrize("K,J", [(-2.0, 2.0), (1.0, 5.0), (1.0, 1.0)])
@pytest.mark.parametrize("N,q", [(6, 2), (6, 3), (8, 4), (10, 5)])
def test_gap_sandwich_holds(K, J, N, q):
    rep = gap_bounds(ModelSpec.kardar(N, K, J, -K - J / 2), q)
    assert rep.bound_holds and rep.factorization_residual < 1e-10
    assert rep.gamma_hi == q / 2

