"""Stage II: threshold best responses of the two operators, the five
equilibrium regimes, the monopoly benchmark and the equal-strength
(Bertrand) case.

All functions here work in threshold space: an operator's decision is its
threshold type ``sigma`` and the only operator data needed are the
cost-QoS ratio ``psi`` and the strength ratio ``xi <= 1``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

from .demand import RolloverProfile
from .market import (
    BERTRAND_XI_TOL,
    MarketPartition,
    OperatorProfile,
    PricingStrategy,
    Region,
    partition,
    prices_for_threshold,
    utility_slope,
    xi as strength_ratio,
)
from .numerics import (
    BracketedFunction,
    FixedPointError,
    NumericsError,
    bracketed_root,
    fixed_point_pair,
)
from .valuation import ValuationDistribution, verify_ifr

FIXED_POINT_TOL = 1e-8
UNDERCUT_FRACTION = 1e-6


class IFRViolationError(ValueError):
    """The valuation law fails the increasing failure rate check."""


class EquilibriumError(NumericsError):
    """Regime classification and best responses disagree."""


class Side(str, Enum):
    ABOUT_MNO1 = "about-MNO-1"  # windows on sigma1, used by MNO-2
    ABOUT_MNO2 = "about-MNO-2"  # windows on sigma2, used by MNO-1


class Regime(str, Enum):
    SM1 = "Psi1^SM"
    WM1 = "Psi1^WM"
    C = "Psi^C"
    WM2 = "Psi2^WM"
    SM2 = "Psi2^SM"

    def __str__(self) -> str:
        return self.value

    def mirrored(self) -> "Regime":
        return {
            Regime.SM1: Regime.SM2,
            Regime.WM1: Regime.WM2,
            Regime.C: Regime.C,
            Regime.WM2: Regime.WM1,
            Regime.SM2: Regime.SM1,
        }[self]


@dataclass(frozen=True)
class ResponseThresholds:
    winning: float
    losing: float
    no_influence: float
    side: Side

    def __post_init__(self):
        vals = [self.winning, self.losing, self.no_influence]
        finite = [abs(v) for v in vals if v != float("inf")]
        tol = 1e-9 * max([1.0, *finite])
        if not (self.losing >= self.winning - tol and self.no_influence >= self.losing - tol):
            raise IFRViolationError(f"threshold ordering W <= L <= N violated: {vals}")


@dataclass(frozen=True)
class ThresholdEquilibrium:
    """Equilibrium in threshold space, with profits per unit of ``rho1 V1``."""

    regime: Regime
    thresholds: Tuple[float, float]
    partition: MarketPartition
    unit_profits: Tuple[float, float]
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class PricingEquilibrium:
    regime: Regime
    thresholds: Tuple[float, float]
    partition: MarketPartition
    profits: Tuple[float, float]
    xi: float
    psi: Tuple[float, float]
    flags: Tuple[str, ...] = field(default=())

    def subscription_prices(self, rps, ops, overage_fees=(0.0, 0.0)) -> Tuple[PricingStrategy, PricingStrategy]:
        """One price pair realizing the equilibrium thresholds.

        Any overage fee works as long as the subscription fee stays
        non-negative; profits do not depend on the split.
        """
        return tuple(
            prices_for_threshold(s, fee, rp, op.rho)
            for s, fee, rp, op in zip(self.thresholds, overage_fees, rps, ops)
        )


# -- helpers -------------------------------------------------------------------


@functools.lru_cache(maxsize=128)
def _ifr_checked(dist: ValuationDistribution) -> bool:
    return verify_ifr(dist)


def _require_ifr(dist: ValuationDistribution) -> None:
    if not _ifr_checked(dist):
        raise IFRViolationError(f"{dist.family} valuation law is not IFR; threshold roots may not be unique")


def _root_tol(dist: ValuationDistribution) -> float:
    return 1e-13 * dist.theta_max


def _check_xi(xi: float) -> None:
    if not 0.0 < xi < 1.0 - BERTRAND_XI_TOL:
        raise ValueError(f"xi must lie in (0, 1) for the asymmetric game, got {xi!r}")


def _clip(theta: float, dist: ValuationDistribution) -> float:
    return min(max(theta, 0.0), dist.theta_max)


# -- monopoly benchmark ----------------------------------------------------------


def monopoly_threshold(psi: float, dist: ValuationDistribution) -> float:
    """Profit-maximizing threshold of an operator alone in the market.

    Solves ``(sigma - psi) h(sigma) = 1 - H(sigma)`` on ``[psi, theta_max]``.
    A cost ratio at or above ``theta_max`` leaves no profitable market and
    returns ``theta_max``.
    """
    _require_ifr(dist)
    if psi < 0:
        raise ValueError("psi must be non-negative")
    if psi >= dist.theta_max:
        return dist.theta_max

    def foc(s: float) -> float:
        return (s - psi) * dist.h(s) - dist.sf(s)

    return bracketed_root(BracketedFunction(foc, psi, dist.theta_max), tol=_root_tol(dist))


# -- MNO-2 side ---------------------------------------------------------------------


def _losing_root_mno2(psi2: float, xi: float, dist: ValuationDistribution, sigma2_mp: float) -> float:
    """Corner value ``u`` at which taking the whole market stops paying for MNO-2."""
    h_top = dist.h(dist.theta_max)
    weight = xi / (1.0 - xi)

    def slope(u: float) -> float:
        return dist.sf(u) - (u - psi2) * (weight * h_top + dist.h(u))

    if sigma2_mp <= psi2:
        return psi2
    return bracketed_root(BracketedFunction(slope, psi2, sigma2_mp), tol=_root_tol(dist))


def mno2_thresholds(psi2: float, xi: float, dist: ValuationDistribution) -> ResponseThresholds:
    """Windows on ``sigma1`` that shape MNO-2's best response."""
    _check_xi(xi)
    if psi2 >= dist.theta_max:
        # priced out: never a profitable response, whatever sigma1 is
        return ResponseThresholds(psi2, psi2, psi2, Side.ABOUT_MNO1)
    sigma2_mp = monopoly_threshold(psi2, dist)
    top = (1.0 - xi) * dist.theta_max
    u = _losing_root_mno2(psi2, xi, dist, sigma2_mp)
    return ResponseThresholds(
        winning=psi2,
        losing=xi * u + top,
        no_influence=xi * sigma2_mp + top,
        side=Side.ABOUT_MNO1,
    )


def _undercut_value(sigma1: float, xi: float, theta_max: float) -> float:
    """MNO-2 threshold that makes the neutral type exactly ``theta_max``."""
    return (sigma1 - (1.0 - xi) * theta_max) / xi


def br_mno2(
    sigma1: float,
    psi2: float,
    xi: float,
    dist: ValuationDistribution,
    thresholds: Optional[ResponseThresholds] = None,
) -> float:
    """MNO-2's best threshold against ``sigma1``."""
    if not 0.0 <= sigma1 <= dist.theta_max:
        raise ValueError(f"sigma1={sigma1!r} outside [0, {dist.theta_max!r}]")
    th = thresholds or mno2_thresholds(psi2, xi, dist)
    if sigma1 < th.winning:
        return psi2
    if sigma1 >= th.no_influence:
        return monopoly_threshold(psi2, dist)
    if sigma1 >= th.losing:
        return _undercut_value(sigma1, xi, dist.theta_max)

    weight = xi / (1.0 - xi)

    def slope(s2: float) -> float:
        neutral = _clip((sigma1 - xi * s2) / (1.0 - xi), dist)
        return dist.H(neutral) - dist.H(s2) - (s2 - psi2) * (weight * dist.h(neutral) + dist.h(s2))

    lo = max(_undercut_value(sigma1, xi, dist.theta_max), psi2)
    if sigma1 <= lo:
        return sigma1
    return bracketed_root(BracketedFunction(slope, lo, sigma1), tol=_root_tol(dist))


# -- MNO-1 side -----------------------------------------------------------------------


def mno1_thresholds(psi1: float, xi: float, dist: ValuationDistribution) -> ResponseThresholds:
    """Windows on ``sigma2`` that shape MNO-1's best response."""
    _check_xi(xi)
    if psi1 >= dist.theta_max:
        inf = float("inf")
        return ResponseThresholds(inf, inf, inf, Side.ABOUT_MNO2)
    sigma1_mp = monopoly_threshold(psi1, dist)
    inv = 1.0 / (1.0 - xi)

    def slope(s: float) -> float:
        return dist.sf(s) - (s - psi1) * dist.h(s) * inv

    if sigma1_mp <= psi1:
        losing = psi1
    else:
        losing = bracketed_root(BracketedFunction(slope, psi1, sigma1_mp), tol=_root_tol(dist))
    return ResponseThresholds(
        winning=(psi1 - (1.0 - xi) * dist.theta_max) / xi,
        losing=losing,
        no_influence=sigma1_mp,
        side=Side.ABOUT_MNO2,
    )


def br_mno1(
    sigma2: float,
    psi1: float,
    xi: float,
    dist: ValuationDistribution,
    thresholds: Optional[ResponseThresholds] = None,
) -> float:
    """MNO-1's best threshold against ``sigma2``."""
    if not 0.0 <= sigma2 <= dist.theta_max:
        raise ValueError(f"sigma2={sigma2!r} outside [0, {dist.theta_max!r}]")
    th = thresholds or mno1_thresholds(psi1, xi, dist)
    if sigma2 < th.winning:
        return psi1
    if sigma2 >= th.no_influence:
        return th.no_influence
    if sigma2 >= th.losing:
        return sigma2

    inv = 1.0 / (1.0 - xi)

    def slope(s1: float) -> float:
        neutral = _clip((s1 - xi * sigma2) * inv, dist)
        return dist.sf(neutral) - (s1 - psi1) * dist.h(neutral) * inv

    lo = max(sigma2, psi1)
    hi = sigma2 + (1.0 - xi) * (dist.theta_max - sigma2)
    if hi <= lo:
        return lo
    return bracketed_root(BracketedFunction(slope, lo, hi), tol=_root_tol(dist))


# -- equal strength ---------------------------------------------------------------------


def bertrand_br(
    sigma_other: float,
    psi: float,
    dist: ValuationDistribution,
    undercut_step: Optional[float] = None,
) -> float:
    """Best response when both plans give users the same value per unit valuation.

    Below ``psi`` the operator cannot win profitably and prices at cost;
    above its monopoly threshold the rival is irrelevant; in between it
    undercuts the rival by ``undercut_step``.
    """
    step = UNDERCUT_FRACTION * dist.theta_max if undercut_step is None else undercut_step
    if not step > 0:
        raise ValueError("undercut_step must be positive")
    if sigma_other < psi:
        return psi
    sigma_mp = monopoly_threshold(psi, dist)
    if sigma_other >= sigma_mp:
        return sigma_mp
    return max(psi, sigma_other - step)


# -- equilibrium ------------------------------------------------------------------------


def _unit_profits(part: MarketPartition, psi1: float, psi2: float, xi: float, dist) -> Tuple[float, float]:
    slopes = (1.0, xi)
    out = []
    for share, sigma, psi, slope in zip(part.shares(), (part.sigma1, part.sigma2), (psi1, psi2), slopes):
        out.append(0.0 if share is None else float(slope * (sigma - psi) * dist.mass(*share)))
    return out[0], out[1]


def _bertrand_equilibrium(psi1, psi2, dist, undercut_step) -> ThresholdEquilibrium:
    step = UNDERCUT_FRACTION * dist.theta_max if undercut_step is None else undercut_step
    flags = []
    if abs(psi1 - psi2) <= step:
        # neither can undercut profitably; ties go to MNO-1 at zero margin
        s = min(psi1, psi2)
        sigma = (s, s)
        regime = Regime.WM1
        flags.append("bertrand-zero-profit")
    elif psi1 < psi2:
        mp = monopoly_threshold(psi1, dist)
        sigma = (min(mp, psi2 - step), psi2)
        regime = Regime.SM1 if mp <= psi2 - step else Regime.WM1
    else:
        mp = monopoly_threshold(psi2, dist)
        sigma = (psi1, min(mp, psi1 - step))
        regime = Regime.SM2 if mp <= psi1 - step else Regime.WM2
    part = partition(sigma[0], sigma[1], 1.0, dist.theta_max)
    flags.append(f"undercut-step={step:.3g}")
    return ThresholdEquilibrium(regime, sigma, part, _unit_profits(part, psi1, psi2, 1.0, dist), tuple(flags))


def classify_regime(
    psi1: float,
    psi2: float,
    xi: float,
    dist: ValuationDistribution,
    th1: Optional[ResponseThresholds] = None,
    th2: Optional[ResponseThresholds] = None,
) -> Regime:
    """Regime of the cost-QoS pair ``(psi1, psi2)`` for strength ratio ``xi < 1``."""
    th1 = th1 or mno1_thresholds(psi1, xi, dist)
    th2 = th2 or mno2_thresholds(psi2, xi, dist)
    mno2_out = psi2 > th1.losing
    mno1_out = psi1 > th2.losing
    if mno2_out and mno1_out:
        raise EquilibriumError(f"(psi1, psi2)=({psi1}, {psi2}) classified into both monopoly sides")
    if mno2_out:
        return Regime.SM1 if psi2 > th1.no_influence else Regime.WM1
    if mno1_out:
        return Regime.SM2 if psi1 > th2.no_influence else Regime.WM2
    return Regime.C


def _competitive_point(psi1, psi2, xi, dist, th1, th2) -> Tuple[float, float]:
    def br1(s2):
        return br_mno1(_clip(s2, dist), psi1, xi, dist, th1)

    def br2(s1):
        return br_mno2(_clip(s1, dist), psi2, xi, dist, th2)

    init = (th1.no_influence, monopoly_threshold(psi2, dist))
    try:
        return fixed_point_pair(lambda a, b: (br1(b), br2(a)), init, tol=1e-12 * max(1.0, dist.theta_max)).point
    except (FixedPointError, NumericsError):
        pass
    # nested fallback: sigma1 with br1(br2(sigma1)) = sigma1
    s1 = bracketed_root(
        BracketedFunction(lambda a: br1(br2(a)) - a, psi1, dist.theta_max), tol=_root_tol(dist)
    )
    return s1, br2(s1)


def threshold_equilibrium(
    psi1: float,
    psi2: float,
    xi: float,
    dist: ValuationDistribution,
    undercut_step: Optional[float] = None,
) -> ThresholdEquilibrium:
    """Equilibrium thresholds, partition and per-``rho1 V1`` profits.

    Requires ``xi <= 1``; ``xi`` within 1e-12 of one uses the Bertrand path.
    """
    _require_ifr(dist)
    if xi > 1.0 + BERTRAND_XI_TOL or not xi > 0:
        raise ValueError(f"canonical order needs 0 < xi <= 1, got {xi!r}")
    if abs(1.0 - xi) <= BERTRAND_XI_TOL:
        return _bertrand_equilibrium(psi1, psi2, dist, undercut_step)

    th1 = mno1_thresholds(psi1, xi, dist)
    th2 = mno2_thresholds(psi2, xi, dist)
    regime = classify_regime(psi1, psi2, xi, dist, th1, th2)
    theta_max = dist.theta_max
    if regime is Regime.SM1:
        sigma = (th1.no_influence, psi2)
    elif regime is Regime.WM1:
        sigma = (psi2, psi2)
    elif regime is Regime.WM2:
        sigma = (psi1, _undercut_value(psi1, xi, theta_max))
    elif regime is Regime.SM2:
        sigma = (psi1, monopoly_threshold(psi2, dist))
    else:
        sigma = _competitive_point(psi1, psi2, xi, dist, th1, th2)

    if regime is Regime.C:
        # the survivors of monopoly regimes are closed forms; check the interior point
        r1 = br_mno1(_clip(sigma[1], dist), psi1, xi, dist, th1)
        r2 = br_mno2(_clip(sigma[0], dist), psi2, xi, dist, th2)
        if abs(r1 - sigma[0]) > FIXED_POINT_TOL or abs(r2 - sigma[1]) > FIXED_POINT_TOL:
            raise EquilibriumError(
                f"competitive point {sigma} is not a mutual best response: br=({r1}, {r2})"
            )

    part = partition(max(sigma[0], 0.0), max(sigma[1], 0.0), xi, theta_max, atol=1e-12 * theta_max)
    part = replace(part, sigma1=sigma[0], sigma2=sigma[1])
    return ThresholdEquilibrium(regime, sigma, part, _unit_profits(part, psi1, psi2, xi, dist))


_MIRROR_REGION = {
    Region.SIGMA1: Region.SIGMA2,
    Region.SIGMA2: Region.SIGMA1,
    Region.SIGMA3: Region.SIGMA3,
    Region.BERTRAND_1: Region.BERTRAND_2,
    Region.BERTRAND_2: Region.BERTRAND_1,
}


def _mirror_partition(part: MarketPartition, xi_original: float) -> MarketPartition:
    return MarketPartition(
        region=_MIRROR_REGION[part.region],
        share1=part.share2,
        share2=part.share1,
        neutral=part.neutral,
        sigma1=part.sigma2,
        sigma2=part.sigma1,
        xi=xi_original,
    )


def pricing_equilibrium(
    op1: OperatorProfile,
    op2: OperatorProfile,
    rp1: RolloverProfile,
    rp2: RolloverProfile,
    dist: ValuationDistribution,
    undercut_step: Optional[float] = None,
) -> PricingEquilibrium:
    """Stage-II equilibrium for two operators with given mechanisms.

    Operators are relabeled internally so the stronger one comes first;
    results are reported in the caller's labels. When the relabeling
    happens the region and regime names refer to the caller's operators
    too (so ``Psi1^SM`` always means the caller's MNO-1 serves alone).
    """
    x = strength_ratio(op1, op2, rp1, rp2)
    if not x > 0:
        raise ValueError("both operators need positive rho * V")
    swapped = x > 1.0 + BERTRAND_XI_TOL
    if swapped:
        ops, rps, x_c = (op2, op1), (rp2, rp1), 1.0 / x
    else:
        ops, rps, x_c = (op1, op2), (rp1, rp2), min(x, 1.0)
    teq = threshold_equilibrium(ops[0].psi, ops[1].psi, x_c, dist, undercut_step)
    scale = utility_slope(ops[0], rps[0])
    profits = (teq.unit_profits[0] * scale, teq.unit_profits[1] * scale)
    if swapped:
        return PricingEquilibrium(
            regime=teq.regime.mirrored(),
            thresholds=(teq.thresholds[1], teq.thresholds[0]),
            partition=_mirror_partition(teq.partition, x),
            profits=(profits[1], profits[0]),
            xi=x,
            psi=(op1.psi, op2.psi),
            flags=teq.flags + ("relabeled",),
        )
    return PricingEquilibrium(
        regime=teq.regime,
        thresholds=teq.thresholds,
        partition=teq.partition,
        profits=profits,
        xi=x,
        psi=(op1.psi, op2.psi),
        flags=teq.flags,
    )
