import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktap import (
    Control,
    InvalidParameterError,
    PopulationState,
    WealthGameParams,
    alpha,
    build_encounter_rate,
    build_wealth_grid,
    build_wealth_kernel,
    critical_distance,
    social_gap,
    verify_conservation_conditions,
)
from ktap.wealth import WealthKernel, kernel_tables
import oracles

ODD = [3, 5, 7, 9, 11, 13, 15]


# social gap

def test_gap_all_in_centre():
    g = social_gap(PopulationState([0, 0, 0, 0, 1, 0, 0, 0, 0]))
    assert (g.n_minus, g.n_plus, g.s) == (0, 0, 0)


def test_gap_poor_only():
    assert social_gap(PopulationState([0.25, 0.25, 0.25, 0.25, 0, 0, 0, 0, 0])).s == 1


def test_gap_aggregates_subsystems():
    f = np.zeros((3, 5))
    f[0, 0] = 0.3
    f[2, 4] = 0.1
    f[1, 2] = 0.6
    g = social_gap(PopulationState(f))
    assert g.n_minus == pytest.approx(0.3) and g.n_plus == pytest.approx(0.1) and g.s == pytest.approx(0.2)


def test_gap_normalized_by_total_mass():
    assert social_gap(PopulationState([2.0, 0.0, 0.0])).s == 1.0


def test_gap_of_poor_initial_state():
    from ktap.scenario import initial_profile

    f = initial_profile("u0_poor", 9)
    assert social_gap(PopulationState(f)).s == pytest.approx(8 / 15, abs=1e-12)


# critical distance

def test_constant_mode_returns_gamma0():
    p = WealthGameParams(3, control=Control.CONSTANT)
    assert critical_distance(1.0, p, 9) == 3
    assert critical_distance(-1.0, p, 9) == 3


@pytest.mark.parametrize("gamma0,expected", [(3, 5), (7, 8)])
def test_gamma_at_initial_gap(gamma0, expected):
    s = 8 / 15
    assert oracles.gamma_of_gap(Fraction(8, 15), 9, gamma0) == expected
    assert critical_distance(s, WealthGameParams(gamma0), 9) == expected


@pytest.mark.parametrize("n", [5, 9, 15])
@pytest.mark.parametrize("s0", [-0.6, -0.2, 0.0, 0.3, 0.75])
def test_gamma_anchor_points(n, s0):
    for gamma0 in range(n + 1):
        p = WealthGameParams(gamma0, S0=s0)
        assert critical_distance(s0, p, n) == gamma0
        assert critical_distance(1.0, p, n) == n
        assert critical_distance(-1.0, p, n) == 0


def test_gamma_matches_rational_oracle_on_scan():
    for n in (5, 9):
        for gamma0 in range(n + 1):
            for s0 in (Fraction(0), Fraction(1, 4), Fraction(-1, 2)):
                p = WealthGameParams(gamma0, S0=float(s0))
                for j in range(-40, 41):
                    s = Fraction(j, 40)
                    assert critical_distance(float(s), p, n) == oracles.gamma_of_gap(s, n, gamma0, s0), (n, gamma0, s0, s)


@pytest.mark.parametrize("gamma0", range(0, 5))
def test_gamma_monotone_for_small_gamma0(gamma0):
    p = WealthGameParams(gamma0)
    values = [critical_distance(s, p, 9) for s in np.linspace(-1, 1, 2001)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_gamma_always_in_range(caplog):
    with caplog.at_level(logging.WARNING):
        for n in (3, 9):
            for gamma0 in range(n + 1):
                for s0 in (-0.9, 0.0, 0.9):
                    p = WealthGameParams(gamma0, S0=s0)
                    for s in np.linspace(-1, 1, 101):
                        assert 0 <= critical_distance(float(s), p, n) <= n


def test_gamma_clamp_is_logged(caplog):
    # a large gamma0 with S0 near -1 overshoots n in between
    p = WealthGameParams(9, S0=-0.9)
    with caplog.at_level(logging.WARNING):
        values = [critical_distance(float(s), p, 9) for s in np.linspace(-1, 1, 201)]
    assert max(values) == 9
    assert "clamped" in caplog.text


def test_gamma_rejects_gap_out_of_range():
    with pytest.raises(InvalidParameterError):
        critical_distance(1.5, WealthGameParams(3), 9)


@pytest.mark.parametrize("kwargs", [dict(gamma0=3, S0=1.0), dict(gamma0=3, S0=-1.0), dict(gamma0=3, mu=0.0),
                                    dict(gamma0=3, mu=1.5), dict(gamma0=-1), dict(gamma0=2.5),
                                    dict(gamma0=3, eta0=0.0)])
def test_params_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        WealthGameParams(**kwargs)


def test_gamma0_beyond_grid():
    with pytest.raises(InvalidParameterError):
        WealthGameParams(10).check_grid(9)


# alpha

def test_alpha_examples():
    assert alpha(4, 4, 9) == 0
    assert alpha(1, 9, 9) == 1
    assert alpha(3, 5, 9) == 0.25


def test_alpha_symmetric():
    for h in range(1, 10):
        for k in range(1, 10):
            assert alpha(h, k, 9) == alpha(k, h, 9)


def test_alpha_range_check():
    with pytest.raises(IndexError):
        alpha(0, 3, 9)


# kernel

def test_kernel_competition_example():
    B = build_wealth_kernel(9, 2).B
    row = B[2, 4]
    assert row[1] == 0.25 and row[2] == 0.75
    assert np.count_nonzero(row) == 2


def test_kernel_bottom_class_frozen_under_competition():
    for gamma in range(10):
        B = build_wealth_kernel(9, gamma).B
        for k in range(1, min(gamma, 8) + 1):
            assert B[0, k, 0] == 1


def test_kernel_cooperation_with_maximal_alpha():
    row = build_wealth_kernel(9, 2).B[0, 8]
    assert row[0] == 0 and row[1] == 1


def test_full_competition_has_no_cooperation():
    k = build_wealth_kernel(9, 9)
    # under cooperation the poorer candidate gains (epsilon = +1 with h < k)
    h, kk = np.triu_indices(9, 1)
    assert not np.any(k.epsilon[h, kk] > 0)


@pytest.mark.parametrize("n", ODD)
def test_kernel_matches_rule_oracle(n):
    for gamma in range(n + 1):
        want = oracles.wealth_table(n, gamma)
        B = build_wealth_kernel(n, gamma).B
        for (h, k), row in want.items():
            for i in range(1, n + 1):
                assert Fraction(B[h - 1, k - 1, i - 1]) == pytest.approx(row.get(i, Fraction(0)), abs=2**-52)


@pytest.mark.parametrize("n", ODD)
def test_kernel_invariants_exact(n):
    grid = build_wealth_grid(n)
    for gamma in range(n + 1):
        k = build_wealth_kernel(n, gamma)
        B = k.B
        assert np.all((B >= 0) & (B <= 1))
        for h in range(n):
            for kk in range(n):
                assert sum(Fraction(x) for x in B[h, kk]) == 1
                nz = np.flatnonzero(B[h, kk])
                assert len(nz) <= 2 and np.all(np.abs(nz - h) <= 1)
        assert np.array_equal(k.sigma, -k.sigma.T)
        rep = verify_conservation_conditions(k, grid)
        assert rep.passed
        if (n - 1) & (n - 2) == 0:  # dyadic grids: u and alpha are exact doubles
            assert rep.mean_shift.max_violation == 0


def test_sigma_zero_on_diagonal_and_frozen_extremes():
    n = 9
    for gamma in range(n + 1):
        k = build_wealth_kernel(n, gamma)
        assert np.all(np.diag(k.sigma) == 0)
        for kk in range(1, n):
            if kk <= gamma:
                assert k.sigma[0, kk] == 0 and k.sigma[n - 1, n - 1 - kk] == 0


def test_kernel_cached_and_read_only():
    assert build_wealth_kernel(9, 3) is build_wealth_kernel(9, 3)
    with pytest.raises(ValueError):
        build_wealth_kernel(9, 3).B[0, 0, 0] = 0.5


@pytest.mark.parametrize("gamma", [-1, 10, 2.5, True])
def test_kernel_rejects_bad_gamma(gamma):
    with pytest.raises(InvalidParameterError):
        build_wealth_kernel(9, gamma)


def test_verify_detects_row_sum_fault():
    k = build_wealth_kernel(9, 4)
    B = k.B.copy()
    B[2, 4, 2] += 0.1
    rep = verify_conservation_conditions(WealthKernel(9, 4, B, k.sigma, k.epsilon), build_wealth_grid(9))
    assert not rep.row_sums.passed and rep.row_sums.where == (3, 5)
    assert rep.row_sums.max_violation == pytest.approx(0.1)
    assert any(line.startswith("FAIL") for line in rep.lines())


def test_verify_detects_antisymmetry_fault():
    k = build_wealth_kernel(9, 4)
    sigma = k.sigma.copy()
    sigma[2, 4] = -sigma[2, 4]
    rep = verify_conservation_conditions(WealthKernel(9, 4, k.B, sigma, k.epsilon), build_wealth_grid(9))
    assert not rep.antisymmetry.passed
    assert not rep.passed


# encounter rate

def test_encounter_examples():
    e = build_encounter_rate(9, 3, 0.3).eta
    assert e[0, 4] == pytest.approx(0.3) and e[0, 3] == 1.0
    assert np.all(build_encounter_rate(9, 9, 0.3).eta == 1.0)
    assert np.all(build_encounter_rate(9, 2, 1.0).eta == 1.0)


@pytest.mark.parametrize("n", [3, 9])
def test_encounter_matches_oracle_and_symmetric(n):
    for gamma in range(n + 1):
        e = build_encounter_rate(n, gamma, 0.3, 2.0).eta
        assert np.array_equal(e, oracles.encounter(n, gamma, 0.3, 2.0))
        assert np.array_equal(e, e.T)


@pytest.mark.parametrize("mu", [0.0, -0.1, 1.1])
def test_encounter_rejects_mu(mu):
    with pytest.raises(InvalidParameterError):
        build_encounter_rate(9, 3, mu)


def test_kernel_tables_stack_every_gamma():
    B_all, eta_all = kernel_tables(9, 0.3, 1.0)
    assert B_all.shape == (10, 9, 9, 9) and eta_all.shape == (10, 9, 9)
    assert np.array_equal(B_all[4], build_wealth_kernel(9, 4).B)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7).map(lambda k: 2 * k + 1), st.data())
def test_gamma_endpoints_property(n, data):
    gamma0 = data.draw(st.integers(0, n))
    s0 = data.draw(st.floats(-0.95, 0.95))
    p = WealthGameParams(gamma0, S0=s0)
    assert critical_distance(s0, p, n) == gamma0
    assert critical_distance(1.0, p, n) == n
    assert critical_distance(-1.0, p, n) == 0
