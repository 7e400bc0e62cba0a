import math
from dataclasses import replace

import numpy as np
import pytest

from rollover_duopoly.demand import make_truncated_lognormal_demand
from rollover_duopoly.market import OperatorProfile, partition
from rollover_duopoly.mechanism_game import (
    MarketMode,
    MechanismMatrix,
    R,
    T,
    c_roll_2,
    c_single_1,
    c_single_2,
    classify_mechanism_equilibrium,
    format_outcomes,
    market_mode,
    nash_pure,
    payoff_matrix,
    profile_table,
    qos_flip,
    rho_hat,
    rho_tilde,
)
from rollover_duopoly.pricing_game import PricingEquilibrium, Regime, pricing_equilibrium
from rollover_duopoly.valuation import make_truncated_gamma, make_uniform

U = make_uniform(1.0)


def cell(w1, w2):
    """Hand-made matrix cell: a zero profit means a zero share."""
    if w2 == 0:
        part = partition(0.3, 0.4, 0.5, 1.0)  # MNO-1 alone
    elif w1 == 0:
        part = partition(0.9, 0.4, 0.5, 1.0)  # MNO-2 alone
    else:
        part = partition(0.5, 0.4, 0.5, 1.0)
    return PricingEquilibrium(Regime.C, (part.sigma1, part.sigma2), part, (w1, w2), 0.5, (0.1, 0.1))


def matrix(tt, tr, rt, rr):
    return MechanismMatrix({(T, T): cell(*tt), (T, R): cell(*tr), (R, T): cell(*rt), (R, R): cell(*rr)})


@pytest.fixture(scope="module")
def setup():
    demand = make_truncated_lognormal_demand(100, 1000, 1.0)
    return profile_table(demand, [100], 0.8), make_truncated_gamma(4.5, 0.11)


def test_dominant_outcome():
    m = matrix(tt=(1, 1), tr=(1, 2), rt=(3, 2), rr=(2, 1))
    assert nash_pure(m).label == "(R,T)"


def test_anti_coordination():
    m = matrix(tt=(1, 1), tr=(2, 3), rt=(3, 2), rr=(1, 1))
    eq = nash_pure(m)
    assert eq.label == "{(R,T),(T,R)}"
    assert set(eq.pure_outcomes()) == {(R, T), (T, R)}


def test_na_collapse_for_each_side():
    m = matrix(tt=(1, 0), tr=(1, 0), rt=(2, 0), rr=(2, 0))
    eq = nash_pure(m)
    assert eq.equilibria == (("R", "Na"),)
    assert set(eq.pure_outcomes()) == {(R, T), (R, R)}
    m = matrix(tt=(0, 1), tr=(0, 2), rt=(0, 1), rr=(0, 2))
    assert nash_pure(m).label == "(Na,R)"


def test_no_collapse_when_share_positive():
    m = matrix(tt=(1, 1), tr=(1, 1), rt=(2, 1), rr=(2, 1))
    assert nash_pure(m).label == "{(R,T),(R,R)}"


def test_empty_equilibrium_is_reported():
    # matching pennies in profits
    m = matrix(tt=(2, 1), tr=(1, 2), rt=(1, 2), rr=(2, 1))
    eq = nash_pure(m)
    assert eq.equilibria == () and "no-pure-equilibrium" in eq.flags
    assert format_outcomes(()) == "none"
    with pytest.raises(ValueError):
        nash_pure(m, eps=-1)


def test_c_single_1_examples():
    assert c_single_1(1, 1, 0.5, 0.9, 1.0, U) == pytest.approx(0.45)
    assert c_single_1(1, 1, 0.4, 0.7, 0.7, U) == pytest.approx(0.4)
    assert c_single_1(1, 0.8, 0.8, 0.9, 1.0, U) == 1.0


def test_c_single_2_examples():
    # equal QoS: second branch is c1 - rho2 * gap(c1 / rho2)
    c1 = 0.6
    assert c_single_2(1, 1, c1, 0.9, 1.0, U) == pytest.approx(max(c1 - 0.1 * (1 - c1), c1 - (1 - c1)))
    assert c_single_2(1, 0.91, 0.05, 0.86, 1.0, make_truncated_gamma(4.5, 0.11)) <= 0
    # index swap symmetry with no flexibility gap
    assert c_single_2(1, 1, 0.3, 1.0, 1.0, U) == pytest.approx(c_single_1(1, 1, 0.3, 1.0, 1.0, U))


def test_qos_flip_examples():
    assert qos_flip(1, 0.95, 0.9, 1.0)
    assert not qos_flip(1, 0.85, 0.9, 1.0)
    assert qos_flip(1, 1, 0.9, 1.0)
    with pytest.raises(ValueError):
        qos_flip(0.9, 1, 0.9, 1.0)


def test_symmetric_operators_give_symmetric_matrix(setup):
    profiles, dist = setup
    op = OperatorProfile(0.95, 0.3, 100)
    m = payoff_matrix(op, op, profiles, dist)
    for k1 in (T, R):
        for k2 in (T, R):
            w = m.profits(k1, k2)
            w_swap = m.profits(k2, k1)
            assert w[0] == pytest.approx(w_swap[1], rel=1e-9, abs=1e-12)


def test_reference_point_cells(setup):
    profiles, dist = setup
    m = payoff_matrix(OperatorProfile(1.0, 0.30, 100), OperatorProfile(0.91, 0.40, 100), profiles, dist)
    for eq in m.cells.values():
        assert all(math.isfinite(w) and w >= 0 for w in eq.profits)
        assert eq.profits[0] > 0


@pytest.mark.parametrize("c1, c2", [(0.28, 0.3), (0.44, 0.4), (0.64, 0.6)])
def test_tt_dominated_in_coexistence(setup, c1, c2):
    profiles, dist = setup
    a, b = OperatorProfile(1.0, c1, 100), OperatorProfile(0.95, c2, 100)
    assert market_mode(a, b, profiles, dist) is MarketMode.COEXISTENCE
    m = payoff_matrix(a, b, profiles, dist)
    assert m.profits(R, T)[0] > m.profits(T, T)[0]


def test_equilibria_survive_fresh_deviation_checks(setup):
    profiles, dist = setup
    for c1 in (0.15, 0.4, 0.5, 0.7):
        a, b = OperatorProfile(1.0, c1, 100), OperatorProfile(0.91, 0.4, 100)
        eq = classify_mechanism_equilibrium(a, b, profiles, dist)
        assert eq.equilibria
        for k1, k2 in eq.pure_outcomes():
            def solve(x, y):
                return pricing_equilibrium(
                    replace(a, mechanism=x), replace(b, mechanism=y), profiles[(100, x)], profiles[(100, y)], dist
                ).profits

            base = solve(k1, k2)
            eps = 1e-9 * max(base + (1.0,))
            other1, other2 = (R if k1 is T else T), (R if k2 is T else T)
            assert base[0] >= solve(other1, k2)[0] - eps
            assert base[1] >= solve(k1, other2)[1] - eps


def test_mno1_surviving_mode(setup):
    profiles, dist = setup
    eq = classify_mechanism_equilibrium(OperatorProfile(1.0, 0.12, 100), OperatorProfile(0.91, 0.4, 100), profiles, dist)
    assert eq.mode is MarketMode.MNO1_SURVIVING
    assert eq.label == "(R,Na)"
    assert abs(eq.matrix.profits(R, T)[0] - eq.matrix.profits(R, R)[0]) <= 1e-9
    assert "survivor1-profit-varies" not in eq.flags


def test_relabeled_operators_mirror_the_label(setup):
    profiles, dist = setup
    a, b = OperatorProfile(1.0, 0.12, 100), OperatorProfile(0.91, 0.4, 100)
    eq = classify_mechanism_equilibrium(b, a, profiles, dist)
    assert eq.label == "(Na,R)"
    assert eq.mode is MarketMode.MNO2_SURVIVING


def test_symmetric_band_at_negligible_gap(setup):
    profiles, dist = setup
    eq = classify_mechanism_equilibrium(OperatorProfile(1.0, 0.4, 100), OperatorProfile(0.99, 0.4, 100), profiles, dist)
    assert eq.label == "{(R,T),(T,R)}"


def test_c_roll_2_is_a_profit_crossing(setup):
    profiles, dist = setup
    a, b = OperatorProfile(1.0, 0.2, 100), OperatorProfile(0.91, 0.4, 100)
    th = c_roll_2(a, b, profiles, dist)
    assert th.binding and th.multiplicity == 1

    def diff(c2):
        m = payoff_matrix(a, replace(b, cost=c2), profiles, dist)
        return m.profits(R, T)[1] - m.profits(R, R)[1]

    assert abs(diff(th.value)) <= 1e-9
    assert diff(th.value - 0.01) * diff(th.value + 0.01) < 0


def test_rho_tilde_contract(setup):
    profiles, dist = setup
    value, flags = rho_tilde(OperatorProfile(1.0, 0.5, 100), OperatorProfile(0.91, 0.4, 100), profiles, dist, 0.85, 16, 1e-3)
    assert (math.isnan(value) and "non-bracketing" in flags) or 0.85 <= value <= 1.0


@pytest.mark.slow
def test_rho_hat_covers_reference_large_gap(setup):
    profiles, dist = setup
    grid = np.linspace(0.05, 0.8, 12)
    value, flags = rho_hat(
        OperatorProfile(1.0, 0.3, 100), OperatorProfile(0.91, 0.4, 100), profiles, dist, (grid, grid), 0.85, 0.01
    )
    assert value >= 0.91
