"""Stage III: user payoffs, threshold and neutral types, the duopoly partition
and operator profit accounting."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

from scipy import integrate

from .demand import Mechanism, RolloverProfile
from .valuation import ValuationDistribution

Interval = Optional[Tuple[float, float]]

BERTRAND_XI_TOL = 1e-12


@dataclass(frozen=True)
class OperatorProfile:
    rho: float
    cost: float
    cap: int = 1
    mechanism: Mechanism = Mechanism.ROLLOVER

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("QoS rho must be positive")
        if self.cost < 0:
            raise ValueError("marginal cost must be non-negative")
        if int(self.cap) != self.cap or self.cap < 1:
            raise ValueError("cap must be a positive integer number of data units")
        object.__setattr__(self, "mechanism", Mechanism.parse(self.mechanism))

    @property
    def psi(self) -> float:
        """Cost-QoS ratio: the break-even valuation."""
        return self.cost / self.rho


@dataclass(frozen=True)
class PricingStrategy:
    subscription_fee: float
    overage_fee: float

    def __post_init__(self):
        if self.subscription_fee < 0 or self.overage_fee < 0:
            raise ValueError("fees must be non-negative")


class Region(str, Enum):
    SIGMA1 = "Sigma1"  # MNO-2 alone
    SIGMA2 = "Sigma2"  # MNO-1 alone
    SIGMA3 = "Sigma3"  # shared
    BERTRAND_1 = "Bertrand-1"  # xi == 1, MNO-1 alone
    BERTRAND_2 = "Bertrand-2"  # xi == 1, MNO-2 alone

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MarketPartition:
    region: Region
    share1: Interval
    share2: Interval
    neutral: Optional[float]
    sigma1: float
    sigma2: float
    xi: float

    def shares(self) -> Tuple[Interval, Interval]:
        return self.share1, self.share2


def _overage_charge(overage_fee: float, rp: RolloverProfile) -> float:
    if rp.beta <= 0:
        raise ValueError("beta = 0 makes the overage charge undefined")
    return overage_fee * (1.0 / rp.beta - 1.0) * rp.overage_shrink


def utility_slope(op: OperatorProfile, rp: RolloverProfile) -> float:
    """``rho * V``: payoff increase per unit of valuation."""
    return op.rho * rp.expected_usage


def expected_user_payoff(op: OperatorProfile, prices: PricingStrategy, theta: float, rp: RolloverProfile) -> float:
    return utility_slope(op, rp) * theta - _overage_charge(prices.overage_fee, rp) - prices.subscription_fee


def subscriber_revenue(prices: PricingStrategy, rp: RolloverProfile) -> float:
    """Expected monthly revenue from one subscriber (fee plus overage)."""
    return _overage_charge(prices.overage_fee, rp) + prices.subscription_fee


def threshold_type(op: OperatorProfile, prices: PricingStrategy, rp: RolloverProfile) -> float:
    """Valuation with zero expected payoff; may exceed ``theta_max``."""
    slope = utility_slope(op, rp)
    if not slope > 0:
        raise ValueError("rho * V must be positive")
    return subscriber_revenue(prices, rp) / slope


def prices_for_threshold(sigma: float, overage_fee: float, rp: RolloverProfile, rho: float) -> PricingStrategy:
    """Subscription fee that pairs with ``overage_fee`` to realize threshold ``sigma``."""
    fee = rho * rp.expected_usage * sigma - _overage_charge(overage_fee, rp)
    if fee < 0:
        if fee > -1e-12 * max(1.0, rho * rp.expected_usage * abs(sigma)):
            fee = 0.0
        else:
            raise ValueError(f"overage fee {overage_fee!r} too large for threshold {sigma!r}")
    return PricingStrategy(fee, overage_fee)


def max_overage_fee(sigma: float, rp: RolloverProfile, rho: float) -> float:
    """Largest overage fee compatible with ``sigma`` (subscription fee zero)."""
    per_fee = _overage_charge(1.0, rp)
    if per_fee <= 0:
        return float("inf")
    return rho * rp.expected_usage * sigma / per_fee


def xi(op1: OperatorProfile, op2: OperatorProfile, rp1: RolloverProfile, rp2: RolloverProfile) -> float:
    """Competitive strength ratio ``rho2 V2 / (rho1 V1)``."""
    slope1 = utility_slope(op1, rp1)
    if not slope1 > 0:
        raise ValueError("rho1 * V1 must be positive")
    return utility_slope(op2, rp2) / slope1


def neutral_type(sigma1: float, sigma2: float, xi: float) -> float:
    """Valuation indifferent between the two plans."""
    if abs(1.0 - xi) <= BERTRAND_XI_TOL:
        raise ZeroDivisionError("xi == 1 has no neutral type; use the Bertrand partition")
    return (sigma1 - xi * sigma2) / (1.0 - xi)


def _clip_interval(lo: float, hi: float, theta_max: float) -> Interval:
    lo, hi = max(lo, 0.0), min(hi, theta_max)
    return (lo, hi) if hi > lo else None


def partition(sigma1: float, sigma2: float, xi: float, theta_max: float, atol: float = 0.0) -> MarketPartition:
    """Subscription partition for thresholds ``(sigma1, sigma2)``.

    ``xi < 1`` follows the three-region rule; ``xi == 1`` gives the whole
    market to the lower threshold (ties to MNO-1). ``atol`` widens the
    single-survivor regions to absorb rounding at their boundaries.
    """
    if sigma1 < 0 or sigma2 < 0:
        raise ValueError("thresholds must be non-negative")
    if xi > 1 + BERTRAND_XI_TOL:
        raise ValueError("partition expects MNO-1 to be the stronger operator (xi <= 1)")
    if abs(1.0 - xi) <= BERTRAND_XI_TOL:
        if sigma1 <= sigma2:
            return MarketPartition(Region.BERTRAND_1, _clip_interval(sigma1, theta_max, theta_max), None, None, sigma1, sigma2, xi)
        return MarketPartition(Region.BERTRAND_2, None, _clip_interval(sigma2, theta_max, theta_max), None, sigma1, sigma2, xi)

    gap = sigma1 - sigma2
    if gap >= (1.0 - xi) * (theta_max - sigma2) - atol:
        return MarketPartition(Region.SIGMA1, None, _clip_interval(sigma2, theta_max, theta_max), None, sigma1, sigma2, xi)
    if gap <= atol:
        return MarketPartition(Region.SIGMA2, _clip_interval(sigma1, theta_max, theta_max), None, None, sigma1, sigma2, xi)
    neutral = neutral_type(sigma1, sigma2, xi)
    cut = min(max(neutral, 0.0), theta_max)
    return MarketPartition(
        Region.SIGMA3,
        _clip_interval(cut, theta_max, theta_max),
        _clip_interval(sigma2, cut, theta_max),
        neutral,
        sigma1,
        sigma2,
        xi,
    )


def operator_profits(
    part: MarketPartition,
    ops: Sequence[OperatorProfile],
    rps: Sequence[RolloverProfile],
    dist: ValuationDistribution,
) -> Tuple[float, float]:
    """Reduced-form profits ``rho V (sigma - psi) * share mass`` for both operators."""
    sigmas = (part.sigma1, part.sigma2)
    out = []
    for share, sigma, op, rp in zip(part.shares(), sigmas, ops, rps):
        if share is None:
            out.append(0.0)
            continue
        out.append(utility_slope(op, rp) * (sigma - op.psi) * dist.mass(*share))
    return out[0], out[1]


def integral_profits(
    part: MarketPartition,
    ops: Sequence[OperatorProfile],
    prices: Sequence[PricingStrategy],
    rps: Sequence[RolloverProfile],
    dist: ValuationDistribution,
) -> Tuple[float, float]:
    """Revenue minus cost integrated over each operator's subscribers.

    Independent of the reduced form: integrates per-subscriber revenue and
    usage cost against the valuation density by quadrature.
    """
    out = []
    for share, op, price, rp in zip(part.shares(), ops, prices, rps):
        if share is None:
            out.append(0.0)
            continue
        revenue_rate = subscriber_revenue(price, rp)
        cost_rate = op.cost * rp.expected_usage
        density_mass, _ = integrate.quad(dist.h, share[0], share[1], epsabs=1e-14, epsrel=1e-12, limit=200)
        revenue = revenue_rate * density_mass
        cost = cost_rate * density_mass
        out.append(revenue - cost)
    return out[0], out[1]


def canonical_order(
    op1: OperatorProfile, op2: OperatorProfile, rp1: RolloverProfile, rp2: RolloverProfile
) -> bool:
    """True when the operators must be swapped so that ``xi <= 1``."""
    return xi(op1, op2, rp1, rp2) > 1.0 + BERTRAND_XI_TOL
