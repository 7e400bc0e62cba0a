"""Population data-valuation laws on ``[0, theta_max]``.

Valuations are in money per data unit. Every threshold equation downstream
depends on the distribution only through ``h``, ``H`` and the failure-rate
gap ``(1 - H) / h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special


class ZeroDensityError(ValueError):
    pass


@dataclass(frozen=True)
class ValuationDistribution:
    pdf: Callable[[float], float]
    cdf: Callable[[float], float]
    theta_max: float
    family: str = "custom"
    # optional accurate upper tail 1 - H; falls back to 1 - cdf
    survival: Optional[Callable[[float], float]] = None
    params: tuple = ()

    def h(self, theta: float) -> float:
        if theta < 0 or theta > self.theta_max:
            return 0.0
        return float(self.pdf(theta))

    def H(self, theta: float) -> float:
        if theta <= 0:
            return 0.0
        if theta >= self.theta_max:
            return 1.0
        return float(self.cdf(theta))

    def sf(self, theta: float) -> float:
        if theta <= 0:
            return 1.0
        if theta >= self.theta_max:
            return 0.0
        if self.survival is not None:
            return float(self.survival(theta))
        return 1.0 - float(self.cdf(theta))

    def mass(self, lo: float, hi: float) -> float:
        """Population share with valuation in ``[lo, hi]``."""
        if hi <= lo:
            return 0.0
        return max(0.0, self.sf(lo) - self.sf(hi))

    def mean(self, n: int = 20_001) -> float:
        grid = np.linspace(0.0, self.theta_max, n)
        return float(np.trapezoid([self.sf(t) for t in grid], grid))

    def scaled(self, factor: float) -> "ValuationDistribution":
        """Same law with valuations multiplied by ``factor`` (a unit change)."""
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        survival = None if self.survival is None else (lambda t, s=self.survival: s(t / factor))
        return ValuationDistribution(
            pdf=lambda t, p=self.pdf: p(t / factor) / factor,
            cdf=lambda t, c=self.cdf: c(t / factor),
            theta_max=self.theta_max * factor,
            family=self.family,
            survival=survival,
            params=self.params + (("scaled", factor),),
        )


def make_uniform(theta_max: float) -> ValuationDistribution:
    if not theta_max > 0:
        raise ValueError("theta_max must be positive")
    return ValuationDistribution(
        pdf=lambda t: 1.0 / theta_max,
        cdf=lambda t: t / theta_max,
        theta_max=float(theta_max),
        family="uniform",
        survival=lambda t: (theta_max - t) / theta_max,
        params=(("theta_max", theta_max),),
    )


def make_truncated_gamma(shape: float, scale: float, trunc_quantile: float = 0.9999) -> ValuationDistribution:
    """Gamma(shape, scale) restricted to ``[0, q-quantile]`` and renormalized."""
    if not (shape > 0 and scale > 0):
        raise ValueError("shape and scale must be positive")
    if not 0.5 < trunc_quantile < 1:
        raise ValueError("trunc_quantile must lie in (0.5, 1)")
    x_max = float(special.gammaincinv(shape, trunc_quantile))
    if not (np.isfinite(x_max) and x_max > 0):
        raise ArithmeticError(f"gamma quantile solve failed for shape={shape}, q={trunc_quantile}")
    theta_max = x_max * scale
    mass = float(special.gammainc(shape, x_max))
    tail_at_max = float(special.gammaincc(shape, x_max))
    log_norm = special.gammaln(shape) + shape * np.log(scale)

    def pdf(t: float) -> float:
        if t <= 0:
            return 0.0 if shape > 1 else (np.inf if shape < 1 else 1.0 / scale / mass)
        return float(np.exp((shape - 1) * np.log(t) - t / scale - log_norm)) / mass

    def cdf(t: float) -> float:
        return float(special.gammainc(shape, t / scale)) / mass

    def survival(t: float) -> float:
        return max(0.0, float(special.gammaincc(shape, t / scale)) - tail_at_max) / mass

    return ValuationDistribution(
        pdf=pdf,
        cdf=cdf,
        theta_max=theta_max,
        family="gamma-truncated",
        survival=survival,
        params=(("shape", shape), ("scale", scale), ("trunc_quantile", trunc_quantile)),
    )


def failure_rate_gap(dist: ValuationDistribution, theta: float) -> float:
    """``(1 - H(theta)) / h(theta)``; zero at ``theta_max``."""
    if theta < 0 or theta > dist.theta_max:
        raise ValueError(f"theta={theta!r} outside [0, {dist.theta_max!r}]")
    if theta == dist.theta_max:
        return 0.0
    density = dist.h(theta)
    if density <= 0:
        if theta == 0:
            return float("inf")
        raise ZeroDensityError(f"zero density at interior point theta={theta!r}")
    return dist.sf(theta) / density


def verify_ifr(dist: ValuationDistribution, grid_points: int = 1000) -> bool:
    """True when the hazard ``h / (1 - H)`` is non-decreasing on a grid."""
    if grid_points < 100:
        raise ValueError("grid_points must be at least 100")
    grid = np.linspace(0.0, dist.theta_max, grid_points)[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.array([dist.h(t) / dist.sf(t) for t in grid])
    finite = np.isfinite(rates)
    if not finite.all():
        # an infinite hazard at the left edge can only decrease afterwards
        if np.isinf(rates[0]) and finite[1:].all():
            return False
        rates = rates[finite]
    steps = np.diff(rates)
    slack = 1e-9 * np.maximum(1.0, np.abs(rates[:-1]))
    return bool(np.all(steps >= -slack))
