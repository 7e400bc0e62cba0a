"""Stage I: the operators' simultaneous choice between the traditional and
rollover mechanisms.

Each of the four mechanism pairs is scored by its Stage-II pricing
equilibrium. Pure Nash outcomes are enumerated directly; the cost thresholds
that separate single-survivor and coexistence markets are closed forms,
while the rollover-adoption thresholds and the QoS regime boundaries have
no closed form and are found numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .demand import DemandModel, Mechanism, RolloverProfile, rollover_profile
from .market import OperatorProfile
from .numerics import BracketedFunction, NoSignChangeError, bracketed_root
from .pricing_game import PricingEquilibrium, pricing_equilibrium
from .valuation import ValuationDistribution

T, R = Mechanism.TRADITIONAL, Mechanism.ROLLOVER
NA = "Na"
MECHANISMS = (T, R)
# display order of outcomes inside a label
_OUTCOME_ORDER = [("R", "T"), ("R", "R"), ("T", "R"), ("T", "T"), ("R", NA), (NA, "R"), ("T", NA), (NA, "T")]

Outcome = Tuple[str, str]
ProfileTable = Mapping[Tuple[int, Mechanism], RolloverProfile]


class MarketMode(str, Enum):
    MNO1_SURVIVING = "MNO-1 surviving"
    MNO2_SURVIVING = "MNO-2 surviving"
    COEXISTENCE = "coexistence"

    def __str__(self) -> str:
        return self.value

    def mirrored(self) -> "MarketMode":
        if self is MarketMode.MNO1_SURVIVING:
            return MarketMode.MNO2_SURVIVING
        if self is MarketMode.MNO2_SURVIVING:
            return MarketMode.MNO1_SURVIVING
        return self


def profile_table(demand: DemandModel, caps: Iterable[int], beta: float) -> Dict[Tuple[int, Mechanism], RolloverProfile]:
    """Rollover profiles for every (cap, mechanism) pair, computed once."""
    return {(int(q), k): rollover_profile(demand, int(q), beta, k) for q in set(caps) for k in MECHANISMS}


@dataclass(frozen=True)
class MechanismMatrix:
    """Stage-II equilibria for the four mechanism pairs, in the caller's labels."""

    cells: Mapping[Tuple[Mechanism, Mechanism], PricingEquilibrium]

    def profits(self, k1, k2) -> Tuple[float, float]:
        return self.cells[(Mechanism.parse(k1), Mechanism.parse(k2))].profits

    def max_profit(self) -> float:
        return max(max(eq.profits) for eq in self.cells.values())

    def share_is_zero(self, k1, k2, who: int) -> bool:
        part = self.cells[(Mechanism.parse(k1), Mechanism.parse(k2))].partition
        return part.shares()[who] is None


@dataclass(frozen=True)
class MechanismEquilibrium:
    equilibria: Tuple[Outcome, ...]
    label: str
    qos_flip: bool
    mode: Optional[MarketMode] = None
    matrix: Optional[MechanismMatrix] = None
    flags: Tuple[str, ...] = field(default=())

    def pure_outcomes(self) -> Tuple[Tuple[Mechanism, Mechanism], ...]:
        """Expand Na labels into the concrete mechanism pairs they stand for."""
        out = []
        for a, b in self.equilibria:
            firsts = MECHANISMS if a == NA else (Mechanism.parse(a),)
            seconds = MECHANISMS if b == NA else (Mechanism.parse(b),)
            out.extend((x, y) for x in firsts for y in seconds)
        return tuple(out)


def format_outcomes(outcomes: Sequence[Outcome]) -> str:
    if not outcomes:
        return "none"
    ordered = sorted(outcomes, key=_OUTCOME_ORDER.index)
    parts = [f"({a},{b})" for a, b in ordered]
    return parts[0] if len(parts) == 1 else "{" + ",".join(parts) + "}"


def payoff_matrix(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    undercut_step: Optional[float] = None,
) -> MechanismMatrix:
    """Equilibrium profits for all four mechanism pairs.

    ``profiles`` maps ``(cap, mechanism)`` to the usage profile; build it
    with :func:`profile_table` so the chain is solved once per pair.
    """
    cells = {}
    for k1 in MECHANISMS:
        for k2 in MECHANISMS:
            a, b = replace(op1, mechanism=k1), replace(op2, mechanism=k2)
            cells[(k1, k2)] = pricing_equilibrium(
                a, b, profiles[(a.cap, k1)], profiles[(b.cap, k2)], dist, undercut_step
            )
    return MechanismMatrix(cells)


def _other(k: Mechanism) -> Mechanism:
    return R if k is T else T


def nash_pure(matrix: MechanismMatrix, eps: Optional[float] = None) -> MechanismEquilibrium:
    """Pure Nash outcomes of the mechanism game, with ``Na`` collapsing.

    When both choices of an operator are equilibria and it has zero market
    share in both, the pair is reported as one outcome with ``Na`` in that
    operator's slot.
    """
    if eps is None:
        eps = 1e-9 * matrix.max_profit()
    if eps < 0:
        raise ValueError("eps must be non-negative")
    nash = set()
    for k1 in MECHANISMS:
        for k2 in MECHANISMS:
            w1, w2 = matrix.profits(k1, k2)
            if w1 >= matrix.profits(_other(k1), k2)[0] - eps and w2 >= matrix.profits(k1, _other(k2))[1] - eps:
                nash.add((k1, k2))

    outcomes = []
    used = set()
    for k in MECHANISMS:
        # MNO-2 indifferent with zero share against MNO-1 playing k
        pair = {(k, T), (k, R)}
        if pair <= nash and all(matrix.share_is_zero(*c, who=1) for c in pair):
            outcomes.append((k.value, NA))
            used |= pair
    for k in MECHANISMS:
        pair = {(T, k), (R, k)}
        if pair <= nash and not pair & used and all(matrix.share_is_zero(*c, who=0) for c in pair):
            outcomes.append((NA, k.value))
            used |= pair
    outcomes.extend((a.value, b.value) for a, b in nash - used)
    outcomes.sort(key=_OUTCOME_ORDER.index)
    flags = () if outcomes else ("no-pure-equilibrium",)
    return MechanismEquilibrium(tuple(outcomes), format_outcomes(outcomes), qos_flip=False, matrix=matrix, flags=flags)


# -- single-survivor thresholds ----------------------------------------------------------


def _gap_or_nan(x: float, dist: ValuationDistribution) -> float:
    """Failure-rate gap with out-of-support arguments mapped to nan."""
    if not 0.0 <= x < dist.theta_max:
        return math.nan
    density = dist.h(x)
    if density <= 0:
        return math.inf
    return dist.sf(x) / density


def c_single_1(rho1: float, rho2: float, c2: float, v_t: float, v_r: float, dist: ValuationDistribution) -> float:
    """Cost below which MNO-1 keeps MNO-2 out of the market.

    ``v_t`` is MNO-2's traditional usage and ``v_r`` MNO-1's rollover usage.
    """
    psi2 = c2 / rho2
    if psi2 >= dist.theta_max:
        return rho1 * dist.theta_max
    gap = _gap_or_nan(psi2, dist)
    if math.isinf(gap):
        return -math.inf
    return rho1 * (psi2 - (1.0 - rho2 * v_t / (rho1 * v_r)) * gap)


def c_single_2(rho1: float, rho2: float, c1: float, v_t: float, v_r: float, dist: ValuationDistribution) -> float:
    """Cost below which MNO-2 leaves MNO-1 with zero market share.

    The larger of two branches; a branch whose valuation argument falls
    outside ``[0, theta_max)`` cannot bind and counts as ``-inf``.
    ``v_t`` is MNO-1's traditional usage and ``v_r`` MNO-2's rollover usage.
    """
    theta_max = dist.theta_max
    branches = []

    x1 = c1 / rho1
    g1 = _gap_or_nan(x1, dist)
    if not math.isnan(g1):
        branches.append(-math.inf if math.isinf(g1) else rho2 * (x1 - (1.0 - rho1 * v_t / (rho2 * v_r)) * g1))

    shifted = c1 - (rho1 - rho2) * theta_max
    g2 = _gap_or_nan(shifted / rho2, dist)
    if not math.isnan(g2):
        branches.append(-math.inf if math.isinf(g2) else shifted - rho2 * g2)

    return max(branches) if branches else -math.inf


def qos_flip(rho1: float, rho2: float, v_t: float, v_r: float) -> bool:
    """True when the lower-QoS operator with rollover beats a traditional rival per unit valuation."""
    if rho1 < rho2:
        raise ValueError("label operators so that rho1 >= rho2")
    return rho2 > rho1 * v_t / v_r


def market_mode(
    op1: OperatorProfile, op2: OperatorProfile, profiles: ProfileTable, dist: ValuationDistribution
) -> MarketMode:
    """Survivor structure from the two single-survivor cost thresholds (requires ``rho1 >= rho2``)."""
    v_r1, v_t1 = profiles[(op1.cap, R)].expected_usage, profiles[(op1.cap, T)].expected_usage
    v_r2, v_t2 = profiles[(op2.cap, R)].expected_usage, profiles[(op2.cap, T)].expected_usage
    if op1.cost < c_single_1(op1.rho, op2.rho, op2.cost, v_t2, v_r1, dist):
        return MarketMode.MNO1_SURVIVING
    if op2.cost < c_single_2(op1.rho, op2.rho, op1.cost, v_t1, v_r2, dist):
        return MarketMode.MNO2_SURVIVING
    return MarketMode.COEXISTENCE


# -- classification ---------------------------------------------------------------------------


def _check_survivor_effects(eq: MechanismEquilibrium, mode: MarketMode, matrix: MechanismMatrix) -> Tuple[str, ...]:
    flags = []
    scale = max(matrix.max_profit(), 1e-300)
    if mode is MarketMode.MNO1_SURVIVING:
        w_rt, w_rr = matrix.profits(R, T)[0], matrix.profits(R, R)[0]
        if abs(w_rt - w_rr) > 1e-9 * scale:
            flags.append("survivor1-profit-varies")
        if ("R", NA) not in eq.equilibria:
            flags.append("mode-mismatch")
    elif mode is MarketMode.MNO2_SURVIVING:
        if matrix.profits(R, R)[1] > matrix.profits(T, R)[1] + 1e-9 * scale:
            flags.append("survivor2-profit-order")
        if not any(a == NA for a, _ in eq.equilibria):
            flags.append("mode-mismatch")
    else:
        if any(NA in o for o in eq.equilibria):
            flags.append("mode-mismatch")
        if ("T", "T") in eq.equilibria:
            flags.append("TT-equilibrium")
    return tuple(flags)


def classify_mechanism_equilibrium(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    undercut_step: Optional[float] = None,
    matrix: Optional[MechanismMatrix] = None,
) -> MechanismEquilibrium:
    """Mechanism equilibrium with market mode, QoS-flip flag and survivor profit checks.

    The equilibrium set always comes from enumerating the payoff matrix.
    The market mode comes from the single-survivor thresholds; when the two
    disagree the result carries a ``mode-mismatch`` flag instead of
    overriding either.
    """
    matrix = matrix or payoff_matrix(op1, op2, profiles, dist, undercut_step)
    eq = nash_pure(matrix)
    if op1.rho >= op2.rho:
        mode = market_mode(op1, op2, profiles, dist)
        flip = qos_flip(op1.rho, op2.rho, profiles[(op1.cap, T)].expected_usage, profiles[(op2.cap, R)].expected_usage)
    else:
        mode = market_mode(op2, op1, profiles, dist).mirrored()
        flip = qos_flip(op2.rho, op1.rho, profiles[(op2.cap, T)].expected_usage, profiles[(op1.cap, R)].expected_usage)
    flags = eq.flags + _check_survivor_effects(eq, mode, matrix)
    return replace(eq, qos_flip=flip, mode=mode, flags=flags)


# -- rollover-adoption thresholds -----------------------------------------------------------


@dataclass(frozen=True)
class CostThreshold:
    """A cost threshold found by scanning and root refinement.

    ``binding`` is False when the profit difference never changes sign in
    the coexistence range; ``value`` is then the range end on the side the
    threshold lies beyond. ``multiplicity`` counts sign changes seen.
    """

    value: float
    binding: bool
    multiplicity: int
    flags: Tuple[str, ...] = ()


def _scan_threshold(diff, lo: float, hi: float, coexist, n_scan: int, tol: float) -> CostThreshold:
    grid = np.linspace(lo, hi, n_scan)
    pts = [(float(c), diff(float(c))) for c in grid if coexist(float(c))]
    # at the top of the range the operator is priced out and both profits
    # vanish; those exact zeros are not crossings
    while len(pts) > 1 and pts[-1][1] == 0.0:
        pts.pop()
    if not pts:
        return CostThreshold(math.nan, False, 0, ("no-coexistence",))
    roots = []
    for (a, fa), (b, fb) in zip(pts, pts[1:]):
        if fa == 0.0:
            roots.append(a)
        elif (fa < 0) != (fb < 0) and fb != 0.0:
            try:
                roots.append(bracketed_root(BracketedFunction(diff, a, b), tol=tol))
            except NoSignChangeError:
                continue
    if pts[-1][1] == 0.0:
        roots.append(pts[-1][0])
    if not roots:
        # rollover preferred throughout means the threshold sits above the range
        value = pts[-1][0] if pts[0][1] < 0 else pts[0][0]
        return CostThreshold(value, False, 0, ("non-binding",))
    flags = ("multiple-roots",) if len(roots) > 1 else ()
    # first switch from rollover-preferred to traditional-preferred
    return CostThreshold(roots[0], True, len(roots), flags)


def c_roll_1(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    n_scan: int = 48,
) -> CostThreshold:
    """MNO-1's cost below which it prefers rollover against a rollover rival.

    Root in ``c1`` of ``W1(T,R) - W1(R,R)`` over the coexistence part of
    ``[0, rho1 theta_max]``; ``op1.cost`` is ignored.
    """

    def diff(c1: float) -> float:
        a = replace(op1, cost=c1)
        w_tr = pricing_equilibrium(replace(a, mechanism=T), replace(op2, mechanism=R), profiles[(a.cap, T)], profiles[(op2.cap, R)], dist).profits[0]
        w_rr = pricing_equilibrium(replace(a, mechanism=R), replace(op2, mechanism=R), profiles[(a.cap, R)], profiles[(op2.cap, R)], dist).profits[0]
        return w_tr - w_rr

    def coexist(c1: float) -> bool:
        return market_mode(replace(op1, cost=c1), op2, profiles, dist) is MarketMode.COEXISTENCE

    hi = op1.rho * dist.theta_max
    return _scan_threshold(diff, 0.0, hi, coexist, n_scan, 1e-10 * hi)


def c_roll_2(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    n_scan: int = 48,
) -> CostThreshold:
    """MNO-2's cost below which it prefers rollover against a rollover rival.

    Root in ``c2`` of ``W2(R,T) - W2(R,R)``; ``op2.cost`` is ignored.
    """

    def diff(c2: float) -> float:
        b = replace(op2, cost=c2)
        w_rt = pricing_equilibrium(replace(op1, mechanism=R), replace(b, mechanism=T), profiles[(op1.cap, R)], profiles[(b.cap, T)], dist).profits[1]
        w_rr = pricing_equilibrium(replace(op1, mechanism=R), replace(b, mechanism=R), profiles[(op1.cap, R)], profiles[(b.cap, R)], dist).profits[1]
        return w_rt - w_rr

    def coexist(c2: float) -> bool:
        return market_mode(op1, replace(op2, cost=c2), profiles, dist) is MarketMode.COEXISTENCE

    hi = op2.rho * dist.theta_max
    return _scan_threshold(diff, 0.0, hi, coexist, n_scan, 1e-10 * hi)


def c_roll_thresholds(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    n_scan: int = 48,
) -> Tuple[CostThreshold, CostThreshold]:
    """``(C1^Roll(c2), C2^Roll(c1))`` at the operators' current costs."""
    return c_roll_1(op1, op2, profiles, dist, n_scan), c_roll_2(op1, op2, profiles, dist, n_scan)


# -- QoS regime thresholds -----------------------------------------------------------------


@dataclass(frozen=True)
class QoSThresholds:
    rho_hat: float
    rho_tilde: float
    flags: Tuple[str, ...] = ()


def _tr_region_empty(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    c1_grid: Sequence[float],
    c2_grid: Sequence[float],
) -> bool:
    for c2 in c2_grid:
        for c1 in c1_grid:
            a, b = replace(op1, cost=float(c1)), replace(op2, cost=float(c2))
            if market_mode(a, b, profiles, dist) is not MarketMode.COEXISTENCE:
                continue
            eq = nash_pure(payoff_matrix(a, b, profiles, dist))
            if ("T", "R") in eq.equilibria:
                return False
    return True


def rho_hat(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    cost_grid: Tuple[Sequence[float], Sequence[float]],
    rho_lo: float = 0.5,
    tol: float = 1e-3,
) -> Tuple[float, Tuple[str, ...]]:
    """Largest ``rho2`` for which no coexistence cost pair on the grid admits (T,R)."""
    c1_grid, c2_grid = cost_grid

    def empty(rho2: float) -> bool:
        return _tr_region_empty(op1, replace(op2, rho=rho2), profiles, dist, c1_grid, c2_grid)

    lo, hi = rho_lo, op1.rho
    if empty(hi):
        return hi, ("non-binding",)
    if not empty(lo):
        return lo, ("non-bracketing",)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if empty(mid):
            lo = mid
        else:
            hi = mid
    return lo, ()


def rho_tilde(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    rho_lo: float = 0.5,
    n_scan: int = 32,
    tol: float = 1e-4,
) -> Tuple[float, Tuple[str, ...]]:
    """``rho2`` at which MNO-1's adoption threshold, evaluated at MNO-2's, returns ``c1``.

    The condition depends on ``op1.cost``; ``op2.cost`` is ignored.
    """
    c1 = op1.cost

    def gap(rho2: float) -> float:
        b = replace(op2, rho=rho2)
        c2_roll = c_roll_2(op1, b, profiles, dist, n_scan)
        if math.isnan(c2_roll.value):
            return math.nan
        c1_roll = c_roll_1(op1, replace(b, cost=max(c2_roll.value, 0.0)), profiles, dist, n_scan)
        return c1_roll.value - c1

    lo, hi = rho_lo, op1.rho * (1.0 - 1e-9)
    g_lo, g_hi = gap(lo), gap(hi)
    if math.isnan(g_lo) or math.isnan(g_hi) or (g_lo > 0) == (g_hi > 0):
        return math.nan, ("non-bracketing",)
    return bracketed_root(BracketedFunction(gap, lo, hi), tol=tol), ()


def qos_regime_thresholds(
    op1: OperatorProfile,
    op2: OperatorProfile,
    profiles: ProfileTable,
    dist: ValuationDistribution,
    cost_grid: Tuple[Sequence[float], Sequence[float]],
    rho_lo: float = 0.5,
) -> QoSThresholds:
    """``(rho_hat, rho_tilde)`` for MNO-1's QoS and cost."""
    hat, f1 = rho_hat(op1, op2, profiles, dist, cost_grid, rho_lo)
    tilde, f2 = rho_tilde(op1, op2, profiles, dist, rho_lo)
    flags = tuple(f"rho_hat:{f}" for f in f1) + tuple(f"rho_tilde:{f}" for f in f2)
    if not math.isnan(tilde) and not hat < tilde:
        flags += ("order-violated",)
    return QoSThresholds(hat, tilde, flags)
