import math

import pytest
from hypothesis import given, settings, strategies as st

from rollover_duopoly.numerics import (
    BracketedFunction,
    FixedPointError,
    NoSignChangeError,
    NonFiniteError,
    bracketed_root,
    fixed_point_pair,
)


def test_linear_root():
    assert bracketed_root(BracketedFunction(lambda x: x - 0.6, 0.0, 1.0), tol=1e-12) == pytest.approx(0.6, abs=1e-12)


def test_uniform_monopoly_condition():
    # sigma - (1 - sigma) - psi = 0 with psi = 0.2
    root = bracketed_root(BracketedFunction(lambda s: s - (1 - s) - 0.2, 0.0, 1.0), tol=1e-12)
    assert root == pytest.approx(0.6, abs=1e-12)


def test_sqrt_two():
    root = bracketed_root(BracketedFunction(lambda x: x * x - 2, 1.0, 2.0), tol=1e-12)
    assert root == pytest.approx(math.sqrt(2), abs=1e-12)


def test_reversed_bracket_and_endpoint_root():
    assert bracketed_root(BracketedFunction(lambda x: x - 0.25, 1.0, 0.0)) == pytest.approx(0.25, abs=1e-10)
    assert bracketed_root(BracketedFunction(lambda x: x, 0.0, 1.0)) == 0.0


def test_no_sign_change():
    with pytest.raises(NoSignChangeError):
        bracketed_root(BracketedFunction(lambda x: x + 1.0, 0.0, 1.0))


def test_non_finite():
    with pytest.raises(NonFiniteError):
        bracketed_root(BracketedFunction(lambda x: math.nan if x > 0.3 else -1.0, 0.0, 1.0))


def test_bad_tol():
    with pytest.raises(ValueError):
        bracketed_root(BracketedFunction(lambda x: x, -1.0, 1.0), tol=0.0)


def test_fixed_point_identity():
    res = fixed_point_pair(lambda a, b: (a, b), (0.3, 0.7))
    assert res.point == (0.3, 0.7)
    assert res.iterations == 1


def test_fixed_point_contraction():
    res = fixed_point_pair(lambda a, b: (b / 2, a / 2), (1.0, 1.0), tol=1e-12)
    assert max(map(abs, res.point)) <= 1e-11


def test_fixed_point_uniform_best_responses():
    xi, psi1, psi2 = 0.5, 0.1, 0.2
    res = fixed_point_pair(
        lambda s1, s2: ((psi1 + (1 - xi) + xi * s2) / 2, (s1 + psi2) / 2), (0.5, 0.5), tol=1e-14
    )
    assert res.point[0] == pytest.approx(13 / 35, abs=1e-12)
    assert res.point[1] == pytest.approx(2 / 7, abs=1e-12)


def test_fixed_point_failure_reports_last_iterate():
    with pytest.raises(FixedPointError) as info:
        fixed_point_pair(lambda a, b: (b, a), (0.0, 1.0), max_iter=10)
    assert info.value.last == (0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.01, 0.99),
    st.floats(0.5, 20.0),
    st.integers(1, 5),
)
def test_monotone_root_is_found(target, slope, power):
    f = lambda x: slope * (x ** power - target ** power)  # noqa: E731
    root = bracketed_root(BracketedFunction(f, 0.0, 1.0), tol=1e-12)
    assert abs(root - target) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-5, 5), st.floats(-5, 5))
def test_fixed_point_moves_less_than_tol(a, b, c, d):
    mapping = lambda x, y: (a * y + c, b * x + d)  # noqa: E731
    tol = 1e-10
    res = fixed_point_pair(mapping, (0.0, 0.0), tol=tol, max_iter=100_000)
    y1, y2 = mapping(*res.point)
    assert abs(y1 - res.point[0]) <= tol and abs(y2 - res.point[1]) <= tol
