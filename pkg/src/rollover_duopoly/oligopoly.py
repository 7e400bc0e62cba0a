"""Market shares and profits for ``N >= 2`` operators at given thresholds.

Only the all-operators-served outcome is characterized: operators are
ranked by their utility slope ``rho V`` and, when every one of them keeps a
positive share, the shares form a ladder of adjacent valuation intervals.
Thresholds are inputs; no equilibrium is searched for.

Operator indices are zero-based: index 0 is the strongest operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .valuation import ValuationDistribution

Interval = Tuple[float, float]


@dataclass(frozen=True)
class OligopolyProfile:
    """Operators sorted by strictly decreasing ``rho * V``.

    Attributes:
        rho: QoS factors.
        usage: expected usage ``V`` under each operator's mechanism.
        psi: cost-QoS ratios.
        sigma: threshold types.
    """

    rho: Tuple[float, ...]
    usage: Tuple[float, ...]
    psi: Tuple[float, ...]
    sigma: Tuple[float, ...]

    def __post_init__(self):
        n = len(self.rho)
        if n < 2:
            raise ValueError("need at least two operators")
        if not (len(self.usage) == len(self.psi) == len(self.sigma) == n):
            raise ValueError("rho, usage, psi and sigma must have equal length")
        for name in ("rho", "usage", "psi", "sigma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        slopes = self.slopes
        if any(s <= 0 for s in slopes):
            raise ValueError("every rho * V must be positive")
        if any(a <= b for a, b in zip(slopes, slopes[1:])):
            raise ValueError("operators must be sorted by strictly decreasing rho * V (ties are not supported)")

    @classmethod
    def sorted_from(cls, rho, usage, psi, sigma) -> Tuple["OligopolyProfile", List[int]]:
        """Build a profile from unsorted operators; also returns the original index of each slot."""
        order = sorted(range(len(rho)), key=lambda i: -rho[i] * usage[i])
        pick = lambda xs: tuple(xs[i] for i in order)  # noqa: E731
        return cls(pick(rho), pick(usage), pick(psi), pick(sigma)), order

    @property
    def size(self) -> int:
        return len(self.rho)

    @property
    def slopes(self) -> Tuple[float, ...]:
        return tuple(r * v for r, v in zip(self.rho, self.usage))

    def xi(self, n: int, m: int) -> float:
        """Strength ratio of operator ``m`` relative to operator ``n``."""
        return self.slopes[m] / self.slopes[n]


def pairwise_neutral(profile: OligopolyProfile, n: int, m: int) -> float:
    """Valuation indifferent between operators ``n`` and ``m``."""
    if n == m:
        raise ValueError("n and m must differ")
    x = profile.xi(n, m)
    if abs(1.0 - x) <= 1e-12:
        raise ZeroDivisionError("equal utility slopes have no neutral type")
    return (profile.sigma[n] - x * profile.sigma[m]) / (1.0 - x)


@dataclass(frozen=True)
class CoexistenceResult:
    ok: bool
    shares: Optional[Tuple[Interval, ...]]
    violated: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def coexistence_check(profile: OligopolyProfile, theta_max: float) -> CoexistenceResult:
    """Test whether every operator gets a positive share; return the ladder if so."""
    s = profile.sigma
    N = profile.size
    if not 0.0 <= s[N - 1] < s[N - 2]:
        return CoexistenceResult(False, None, f"bottom: need 0 <= sigma[{N - 1}] < sigma[{N - 2}]")
    for n in range(1, N - 1):
        lhs = (1.0 - profile.xi(n - 1, n + 1)) * s[n]
        rhs = (1.0 - profile.xi(n, n + 1)) * s[n - 1] + (profile.xi(n, n + 1) - profile.xi(n - 1, n + 1)) * s[n + 1]
        if not lhs < rhs:
            return CoexistenceResult(False, None, f"middle: operator {n} squeezed out")
    x12 = profile.xi(0, 1)
    if not (1.0 - x12) * theta_max + x12 * s[1] > s[0]:
        return CoexistenceResult(False, None, "top: operator 0 priced above every valuation")

    cuts = [pairwise_neutral(profile, n, n + 1) for n in range(N - 1)]
    shares = [(cuts[0], theta_max)]
    shares += [(cuts[n], cuts[n - 1]) for n in range(1, N - 1)]
    shares.append((s[N - 1], cuts[N - 2]))
    return CoexistenceResult(True, tuple(shares))


def oligopoly_profits(profile: OligopolyProfile, dist: ValuationDistribution) -> np.ndarray:
    """Profit of each operator on the coexistence ladder."""
    result = coexistence_check(profile, dist.theta_max)
    if not result.ok:
        raise ValueError(f"coexistence conditions fail ({result.violated}); ladder profits undefined")
    out = np.empty(profile.size)
    for n, (lo, hi) in enumerate(result.shares):
        out[n] = profile.slopes[n] * (profile.sigma[n] - profile.psi[n]) * dist.mass(lo, hi)
    return out


def assign_by_payoff(profile: OligopolyProfile, thetas: Sequence[float]) -> np.ndarray:
    """Operator chosen at each valuation by direct payoff comparison (-1 for none).

    Payoffs are ``rho V (theta - sigma)``; used as a brute-force oracle.
    """
    thetas = np.asarray(thetas, dtype=float)
    slopes = np.asarray(profile.slopes)[:, None]
    payoff = slopes * (thetas[None, :] - np.asarray(profile.sigma)[:, None])
    best = np.argmax(payoff, axis=0)
    best[payoff.max(axis=0) < 0] = -1
    return best
