import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rollover_duopoly.demand import DemandModel, rollover_profile
from rollover_duopoly.market import (
    OperatorProfile,
    PricingStrategy,
    Region,
    canonical_order,
    expected_user_payoff,
    integral_profits,
    max_overage_fee,
    neutral_type,
    operator_profits,
    partition,
    prices_for_threshold,
    subscriber_revenue,
    threshold_type,
    xi,
)
from rollover_duopoly.valuation import make_truncated_gamma, make_uniform

TOY = DemandModel(np.full(3, 1 / 3))
RP_R = rollover_profile(TOY, 1, 0.8, "R")  # V = 13/15
RP_T = rollover_profile(TOY, 1, 0.8, "T")  # V = 11/15


def test_free_plan_payoff():
    op = OperatorProfile(0.9, 0.1)
    assert expected_user_payoff(op, PricingStrategy(0, 0), 0.4, RP_R) == pytest.approx(0.9 * RP_R.expected_usage * 0.4)


def test_payoff_direct_evaluation():
    op = OperatorProfile(1.0, 0.0)
    got = expected_user_payoff(op, PricingStrategy(0.3, 0.1), 0.5, RP_R)
    expected = (13 / 15) * 0.5 - 0.1 * 0.25 * (2 / 15) - 0.3
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.13, abs=1e-12)


def test_payoff_vanishes_at_threshold():
    op = OperatorProfile(0.8, 0.1)
    prices = PricingStrategy(0.2, 0.3)
    sigma = threshold_type(op, prices, RP_T)
    assert abs(expected_user_payoff(op, prices, sigma, RP_T)) <= 1e-12


def test_threshold_arithmetic_in_rmb_per_mb():
    rp = rollover_profile(DemandModel(np.array([0.0, 1.0]), unit_mb=1000.0), 1, 0.8, "T")
    # one unit of 1000 MB used every month
    sigma = threshold_type(OperatorProfile(1.0, 0.0), PricingStrategy(50.0, 0.0), rp)
    assert sigma / 1000 == pytest.approx(0.05)


def test_prices_round_trip_and_boundary():
    op = OperatorProfile(0.9, 0.1)
    assert prices_for_threshold(0.4, 0.0, RP_R, op.rho).subscription_fee == pytest.approx(0.9 * RP_R.expected_usage * 0.4)
    for fee in (0.0, 0.5, 2.0):
        p = prices_for_threshold(0.4, fee, RP_R, op.rho)
        assert threshold_type(op, p, RP_R) == pytest.approx(0.4, abs=1e-12)
    top = max_overage_fee(0.05, RP_R, 1.0)
    assert prices_for_threshold(0.05, top, RP_R, 1.0).subscription_fee == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        prices_for_threshold(0.05, 2 * top, RP_R, 1.0)


def test_revenue_at_own_threshold():
    op = OperatorProfile(0.7, 0.1)
    p = prices_for_threshold(0.33, 0.4, RP_T, op.rho)
    assert subscriber_revenue(p, RP_T) == pytest.approx(0.7 * RP_T.expected_usage * 0.33, abs=1e-12)


def test_xi_examples():
    a = OperatorProfile(1.0, 0.1)
    assert xi(a, a, RP_R, RP_R) == 1.0
    assert xi(a, OperatorProfile(0.95, 0.1), RP_R, RP_T) == pytest.approx(0.95 * 11 / 13, abs=1e-12)
    assert xi(a, OperatorProfile(0.95, 0.1), RP_R, RP_T) == pytest.approx(0.8038, abs=1e-4)
    assert canonical_order(OperatorProfile(0.5, 0.1), a, RP_R, RP_R)


def test_operator_profile_validation():
    with pytest.raises(ValueError):
        OperatorProfile(0.0, 0.1)
    with pytest.raises(ValueError):
        OperatorProfile(1.0, -0.1)
    with pytest.raises(ValueError):
        PricingStrategy(-1.0, 0.0)


def test_zero_beta_rejected():
    rp = rollover_profile(TOY, 1, 0.0, "R")
    with pytest.raises(ValueError):
        expected_user_payoff(OperatorProfile(1, 0), PricingStrategy(0, 1), 0.5, rp)


def test_neutral_type_examples():
    assert neutral_type(0.4, 0.4, 0.3) == pytest.approx(0.4)
    assert neutral_type(0.6, 0.4, 0.5) == pytest.approx(0.8)
    assert neutral_type(0.5, 0.4, 0.5) == pytest.approx(0.6)
    with pytest.raises(ZeroDivisionError):
        neutral_type(0.5, 0.4, 1.0)


def test_partition_examples():
    p = partition(0.3, 0.4, 0.5, 1.0)
    assert p.region is Region.SIGMA2 and p.share1 == (0.3, 1.0) and p.share2 is None
    p = partition(0.9, 0.4, 0.5, 1.0)
    assert p.region is Region.SIGMA1 and p.share1 is None and p.share2 == (0.4, 1.0)
    p = partition(0.5, 0.4, 0.5, 1.0)
    assert p.region is Region.SIGMA3
    assert p.share1 == pytest.approx((0.6, 1.0)) and p.share2 == pytest.approx((0.4, 0.6))


def test_threshold_above_support_has_no_share():
    p = partition(1.2, 1.3, 0.5, 1.0)
    assert p.shares() == (None, None)


def test_partition_bertrand_ties_to_first():
    assert partition(0.4, 0.4, 1.0, 1.0).region is Region.BERTRAND_1
    assert partition(0.5, 0.4, 1.0, 1.0).region is Region.BERTRAND_2
    with pytest.raises(ValueError):
        partition(0.5, 0.4, 1.5, 1.0)


def test_profit_examples():
    d = make_uniform(1.0)
    part = partition(0.5, 0.4, 0.5, 1.0)
    rp1 = rollover_profile(DemandModel(np.array([0.0, 1.0])), 1, 0.8, "R")  # V = 1
    rp2 = rollover_profile(DemandModel(np.array([0.0, 1.0])), 1, 0.8, "R")
    w1, w2 = operator_profits(part, [OperatorProfile(1.0, 0.1), OperatorProfile(0.5, 0.1)], [rp1, rp2], d)
    assert w1 == pytest.approx(0.16, abs=1e-12)
    assert w2 == pytest.approx(0.02, abs=1e-12)
    empty = partition(0.3, 0.4, 0.5, 1.0)
    assert operator_profits(empty, [OperatorProfile(1, 0.1)] * 2, [rp1, rp2], d)[1] == 0.0


@settings(max_examples=80, deadline=None)
@given(
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.05, 0.95),
    st.floats(0.0, 0.3),
    st.floats(0.0, 0.3),
    st.floats(0.0, 1.0),
)
def test_reduced_and_integral_profits_agree(s1, s2, x, c1, c2, fee_frac):
    d = make_truncated_gamma(4.5, 0.25)
    tm = d.theta_max
    s1, s2 = s1 * tm, s2 * tm
    op1 = OperatorProfile(1.0, c1)
    op2 = OperatorProfile(x * RP_R.expected_usage / RP_T.expected_usage, c2)
    part = partition(s1, s2, xi(op1, op2, RP_R, RP_T), tm)
    prices = [
        prices_for_threshold(s, fee_frac * max_overage_fee(s, rp, op.rho), rp, op.rho)
        for s, rp, op in ((s1, RP_R, op1), (s2, RP_T, op2))
    ]
    reduced = operator_profits(part, [op1, op2], [RP_R, RP_T], d)
    integral = integral_profits(part, [op1, op2], prices, [RP_R, RP_T], d)
    for a, b in zip(reduced, integral):
        assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(0.0, 1.5), st.floats(0.01, 0.99))
def test_regions_are_disjoint_and_cover(s1, s2, x):
    part = partition(s1, s2, x, 1.0)
    gap = s1 - s2
    in1 = gap >= (1 - x) * (1.0 - s2)
    in2 = gap <= 0
    assert not (in1 and in2) or s2 >= 1.0
    expected = Region.SIGMA1 if in1 else Region.SIGMA2 if in2 else Region.SIGMA3
    assert part.region is expected
