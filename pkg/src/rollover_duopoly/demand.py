"""Monthly demand laws, the rollover-balance Markov chain, overage and usage.

Demand is measured in integer data units of ``unit_mb`` megabytes. A plan
with cap ``Q`` under the rollover mechanism carries a balance ``tau`` in
``{0, ..., Q}`` which evolves as ``tau' = [Q - [d - tau]^+]^+``: the
carried balance is spent first and only the current month's unused cap
rolls forward.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.stats import lognorm

from .numerics import BracketedFunction, NoSignChangeError, bracketed_root

MB_PER_GB = 1000.0
DEFAULT_UNIT_MB = 10.0

_POWER_TOL = 1e-12
_POWER_MAX_ITER = 20_000


class Mechanism(str, Enum):
    TRADITIONAL = "T"
    ROLLOVER = "R"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value) -> "Mechanism":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().upper())


class InfeasibleMeanError(ValueError):
    pass


@dataclass(frozen=True)
class DemandModel:
    """Discrete monthly demand pmf over ``{0, ..., D}`` data units."""

    pmf: np.ndarray
    unit_mb: float = DEFAULT_UNIT_MB
    mean: float = field(init=False)

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size < 2:
            raise ValueError("pmf must be a 1-D vector over {0, ..., D} with D >= 1")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValueError("pmf entries must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {pmf.sum()!r}, expected 1")
        if not self.unit_mb > 0:
            raise ValueError("unit_mb must be positive")
        pmf = pmf.copy()
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "mean", float(np.dot(np.arange(pmf.size), pmf)))

    @property
    def max_units(self) -> int:
        return self.pmf.size - 1

    def units_from_gb(self, gb: float) -> float:
        return gb * MB_PER_GB / self.unit_mb

    def tail_excess(self) -> np.ndarray:
        """``E[(d - x)^+]`` for every integer ``x`` in ``{0, ..., D}``."""
        survival = 1.0 - np.cumsum(self.pmf)  # P(d > x)
        # E[(d-x)^+] = sum_{k >= x} P(d > k)
        excess = np.cumsum(survival[::-1])[::-1]
        return np.clip(excess, 0.0, None)


def _normalized(weights: np.ndarray) -> np.ndarray:
    weights = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    total = weights.sum()
    if not total > 0:
        raise ValueError("demand weights have zero total mass")
    pmf = weights / total
    # absorb rounding so the sum is 1 to machine precision
    pmf[np.argmax(pmf)] += 1.0 - pmf.sum()
    return pmf


def _lognormal_bins(mu: float, sigma_log: float, max_units: int) -> np.ndarray:
    edges = np.concatenate(([0.0], np.arange(max_units) + 0.5, [float(max_units)]))
    dist = lognorm(s=sigma_log, scale=math.exp(mu))
    cdf = dist.cdf(edges)
    mass = np.diff(cdf)
    if not mass.sum() > 0:
        # all mass beyond the support: tail probabilities underflow in cdf
        sf = dist.sf(edges)
        mass = -np.diff(sf)
    return mass


def make_truncated_lognormal_demand(
    mean_units: float,
    max_units: int,
    sigma_log: float = 1.0,
    unit_mb: float = DEFAULT_UNIT_MB,
) -> DemandModel:
    """Lognormal demand truncated to ``[0, max_units]`` and binned to integers.

    Bin ``d`` collects the density on ``[d - 1/2, d + 1/2]`` clipped to the
    support. The log-location is solved so the discrete mean equals
    ``mean_units``.
    """
    max_units = int(max_units)
    if not 0 < mean_units < max_units:
        raise ValueError("need 0 < mean_units < max_units")
    if not sigma_log > 0:
        raise ValueError("sigma_log must be positive")

    def mean_gap(mu: float) -> float:
        mass = _lognormal_bins(mu, sigma_log, max_units)
        total = mass.sum()
        if not total > 0:
            return (max_units if mu > math.log(mean_units) else 0.0) - mean_units
        return float(np.dot(np.arange(max_units + 1), mass) / total) - mean_units

    centre = math.log(mean_units) - 0.5 * sigma_log**2
    spread = 8.0 * sigma_log + 5.0
    try:
        mu = bracketed_root(BracketedFunction(mean_gap, centre - spread, centre + spread), tol=1e-12)
    except NoSignChangeError as exc:
        raise InfeasibleMeanError(
            f"mean {mean_units} cannot be matched on [0, {max_units}] with sigma_log={sigma_log}"
        ) from exc
    pmf = _normalized(_lognormal_bins(mu, sigma_log, max_units))
    model = DemandModel(pmf, unit_mb)
    if abs(model.mean - mean_units) > 1e-3 * mean_units:
        raise InfeasibleMeanError(f"matched mean {model.mean} deviates from {mean_units}")
    return model


def make_uniform_demand(max_units: int, unit_mb: float = DEFAULT_UNIT_MB) -> DemandModel:
    return DemandModel(np.full(int(max_units) + 1, 1.0 / (int(max_units) + 1)), unit_mb)


def make_point_mass_demand(units: int, max_units: int, unit_mb: float = DEFAULT_UNIT_MB) -> DemandModel:
    if not 0 <= units <= max_units:
        raise ValueError("point mass outside the support")
    pmf = np.zeros(int(max_units) + 1)
    pmf[int(units)] = 1.0
    return DemandModel(pmf, unit_mb)


def load_demand_table(path, unit_mb: float = DEFAULT_UNIT_MB) -> DemandModel:
    """Read a CSV with columns ``d_units, prob``; missing units get zero mass."""
    rows = []
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append((int(row["d_units"]), float(row["prob"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad demand row {row!r}") from exc
    if not rows:
        raise ValueError(f"{path}: empty demand table")
    if min(d for d, _ in rows) < 0:
        raise ValueError(f"{path}: negative demand unit")
    pmf = np.zeros(max(d for d, _ in rows) + 1)
    for d, p in rows:
        pmf[d] += p
    if abs(pmf.sum() - 1.0) > 1e-6:
        raise ValueError(f"{path}: probabilities sum to {pmf.sum()}")
    return DemandModel(_normalized(pmf), unit_mb)


# -- rollover chain ---------------------------------------------------------


def rollover_transition_matrix(demand: DemandModel, Q: int) -> np.ndarray:
    """Row-stochastic transition matrix of the rollover balance on ``{0..Q}``."""
    Q = _check_cap(Q)
    pmf = demand.pmf
    D = demand.max_units
    cdf = np.cumsum(pmf)
    P = np.zeros((Q + 1, Q + 1))
    for tau in range(Q + 1):
        # d <= tau: cap untouched, full Q rolls over
        P[tau, Q] += cdf[min(tau, D)]
        # d = tau + k for k in 1..Q-1 leaves Q - k
        lo, hi = tau + 1, min(tau + Q - 1, D)
        if lo <= hi:
            k = np.arange(lo, hi + 1) - tau
            P[tau, Q - k] += pmf[lo : hi + 1]
        # d >= tau + Q exhausts the cap
        idx = tau + Q - 1
        P[tau, 0] += 1.0 - cdf[idx] if idx <= D else 0.0
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


def _check_cap(Q) -> int:
    if int(Q) != Q or Q < 1:
        raise ValueError(f"cap must be a positive integer number of units, got {Q!r}")
    return int(Q)


def _stationary_direct(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return p


def _closed_classes(P: np.ndarray) -> list[np.ndarray]:
    graph = sparse.csr_matrix(P > 0)
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(P.shape[0]), members)
        if outside.size == 0 or not np.any(P[np.ix_(members, outside)] > 0):
            closed.append(members)
    return closed


def _cesaro_limit_from(P: np.ndarray, start: int, classes: list[np.ndarray]) -> np.ndarray:
    """Long-run average occupation starting at ``start`` for a reducible chain."""
    n = P.shape[0]
    recurrent = np.concatenate(classes)
    transient = np.setdiff1d(np.arange(n), recurrent)
    # absorption probabilities into each closed class
    absorb = np.zeros(len(classes))
    if start in recurrent:
        absorb[[i for i, c in enumerate(classes) if start in c][0]] = 1.0
    else:
        pos = {s: i for i, s in enumerate(transient)}
        A = np.eye(transient.size) - P[np.ix_(transient, transient)]
        for i, members in enumerate(classes):
            b = P[np.ix_(transient, members)].sum(axis=1)
            absorb[i] = np.linalg.solve(A, b)[pos[start]]
    p = np.zeros(n)
    for weight, members in zip(absorb, classes):
        if weight <= 0:
            continue
        sub = P[np.ix_(members, members)]
        p[members] += weight * _stationary_direct(sub / sub.sum(axis=1, keepdims=True))
    return p


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary law of a finite chain.

    Irreducible chains use power iteration from the uniform vector, falling
    back to a direct solve when the iteration stalls (periodicity). Chains
    with several closed classes return the Cesaro limit from state 0.
    """
    n = P.shape[0]
    classes = _closed_classes(P)
    if len(classes) > 1:
        p = _cesaro_limit_from(P, 0, classes)
    else:
        p = np.full(n, 1.0 / n)
        for _ in range(_POWER_MAX_ITER):
            nxt = p @ P
            if np.max(np.abs(nxt - p)) <= _POWER_TOL:
                p = nxt
                break
            p = nxt
        else:
            p = _stationary_direct(P)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def rollover_stationary(demand: DemandModel, Q: int) -> np.ndarray:
    """Stationary distribution of the rollover balance ``tau`` in ``{0..Q}``."""
    return stationary_distribution(rollover_transition_matrix(demand, Q))


def expected_overage(demand: DemandModel, Q: int, mechanism, rollover_dist: np.ndarray | None = None) -> float:
    """Expected monthly demand above the effective cap."""
    Q = _check_cap(Q)
    mechanism = Mechanism.parse(mechanism)
    excess = demand.tail_excess()
    D = demand.max_units

    def excess_at(x: int) -> float:
        return float(excess[x]) if x <= D else 0.0

    if mechanism is Mechanism.TRADITIONAL:
        return excess_at(Q)
    if rollover_dist is None:
        rollover_dist = rollover_stationary(demand, Q)
    caps = Q + np.arange(rollover_dist.size)
    per_state = np.array([excess_at(int(x)) for x in caps])
    return float(np.dot(rollover_dist, per_state))


def expected_usage(demand: DemandModel, Q: int, beta: float, mechanism) -> float:
    """Expected monthly billed consumption ``mean - beta * overage``."""
    _check_beta(beta, allow_zero=True)
    return demand.mean - beta * expected_overage(demand, Q, mechanism)


def _check_beta(beta: float, allow_zero: bool) -> None:
    lo_ok = beta >= 0 if allow_zero else beta > 0
    if not (lo_ok and beta <= 1):
        raise ValueError(f"beta must lie in {'[0' if allow_zero else '(0'}, 1], got {beta!r}")


@dataclass(frozen=True)
class RolloverProfile:
    """Usage quantities for one (demand, cap, mechanism, beta) combination."""

    cap: int
    mechanism: Mechanism
    rollover_dist: np.ndarray
    expected_overage: float
    expected_usage: float
    beta: float
    mean_demand: float

    def __post_init__(self):
        dist = np.asarray(self.rollover_dist, dtype=float).copy()
        dist.setflags(write=False)
        object.__setattr__(self, "rollover_dist", dist)

    @property
    def overage_shrink(self) -> float:
        """``mean - V``: expected demand lost to offloading."""
        return self.mean_demand - self.expected_usage


def rollover_profile(demand: DemandModel, Q: int, beta: float, mechanism) -> RolloverProfile:
    Q = _check_cap(Q)
    _check_beta(beta, allow_zero=True)
    mechanism = Mechanism.parse(mechanism)
    if mechanism is Mechanism.TRADITIONAL:
        dist = np.zeros(Q + 1)
        dist[0] = 1.0
        overage = expected_overage(demand, Q, mechanism)
    else:
        dist = rollover_stationary(demand, Q)
        overage = expected_overage(demand, Q, mechanism, dist)
    return RolloverProfile(
        cap=Q,
        mechanism=mechanism,
        rollover_dist=dist,
        expected_overage=overage,
        expected_usage=demand.mean - beta * overage,
        beta=beta,
        mean_demand=demand.mean,
    )


# -- simulation ------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloResult:
    months: int
    mean_overage: float
    stderr: float
    occupancy: np.ndarray  # empirical frequency of each balance in {0..Q}


def simulate_rollover(
    demand: DemandModel, Q: int, months: int, rng: np.random.Generator, burn_in: int = 1000, batches: int = 100
) -> MonteCarloResult:
    """Simulate the rollover balance month by month.

    The standard error uses batch means so serial correlation of the chain
    does not understate it.
    """
    Q = _check_cap(Q)
    if months < batches * 2:
        raise ValueError(f"need at least {2 * batches} months")
    draws = rng.choice(demand.pmf.size, size=months + burn_in, p=demand.pmf)
    overage = np.empty(months)
    balance = np.empty(months, dtype=np.int64)
    tau = 0
    for t, d in enumerate(draws.tolist()):
        over = d - Q - tau
        if t >= burn_in:
            overage[t - burn_in] = over if over > 0 else 0
            balance[t - burn_in] = tau
        spill = d - tau
        tau = Q - (spill if spill > 0 else 0)
        if tau < 0:
            tau = 0
    usable = (months // batches) * batches
    batch_means = overage[:usable].reshape(batches, -1).mean(axis=1)
    stderr = float(batch_means.std(ddof=1) / math.sqrt(batches))
    occupancy = np.bincount(balance, minlength=Q + 1) / months
    return MonteCarloResult(months, float(overage.mean()), stderr, occupancy)
