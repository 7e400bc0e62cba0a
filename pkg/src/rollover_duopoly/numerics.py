"""Deterministic root and fixed-point kernels shared by the game modules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Tuple

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000

Pair = Tuple[float, float]


class NumericsError(ArithmeticError):
    """Base class for solver failures."""


class NoSignChangeError(NumericsError):
    pass


class NonFiniteError(NumericsError):
    pass


class FixedPointError(NumericsError):
    """Raised when fixed-point iteration runs out of iterations.

    ``last`` holds the final iterate so callers can seed a fallback solve.
    """

    def __init__(self, message: str, last: Pair):
        super().__init__(message)
        self.last = last


class BracketedFunction(NamedTuple):
    evaluator: Callable[[float], float]
    lo: float
    hi: float


@dataclass(frozen=True)
class FixedPointResult:
    point: Pair
    iterations: int


def _evaluate(f: Callable[[float], float], x: float) -> float:
    fx = float(f(x))
    if not math.isfinite(fx):
        raise NonFiniteError(f"non-finite value {fx!r} at x={x!r}")
    return fx


def bracketed_root(fn: BracketedFunction, tol: float = DEFAULT_TOL, max_iter: int = 500) -> float:
    """Find a root of ``fn.evaluator`` on ``[fn.lo, fn.hi]``.

    Bisection safeguarded secant: a secant step is kept only while it at
    least halves the bracket, otherwise the next step bisects. After each
    secant step the point ``tol/2`` further along is probed so one-sided
    convergence still collapses the bracket.

    Raises:
        NoSignChangeError: the endpoints have the same strict sign.
        NonFiniteError: the evaluator returned nan or inf.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    f = fn.evaluator
    a, b = float(fn.lo), float(fn.hi)
    if a > b:
        a, b = b, a
    fa, fb = _evaluate(f, a), _evaluate(f, b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa > 0) == (fb > 0):
        raise NoSignChangeError(f"no sign change on [{a!r}, {b!r}]: f(lo)={fa!r}, f(hi)={fb!r}")

    use_secant = True
    width = b - a
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if use_secant:
            x = b - fb * (b - a) / (fb - fa)
            if not a < x < b:
                x = 0.5 * (a + b)
        else:
            x = 0.5 * (a + b)
        fx = _evaluate(f, x)
        if fx == 0.0:
            return x
        if (fx > 0) == (fa > 0):
            a, fa = x, fx
            probe = x + 0.5 * tol
        else:
            b, fb = x, fx
            probe = x - 0.5 * tol
        if use_secant and a < probe < b:
            fp = _evaluate(f, probe)
            if fp == 0.0:
                return probe
            if (fp > 0) == (fa > 0):
                a, fa = probe, fp
            else:
                b, fb = probe, fp
        new_width = b - a
        use_secant = new_width <= 0.5 * width
        width = new_width
    else:
        raise NumericsError(f"bracket did not shrink below tol={tol} in {max_iter} steps")
    return a if abs(fa) <= abs(fb) else b


def fixed_point_pair(
    mapping: Callable[[float, float], Pair],
    init: Pair,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FixedPointResult:
    """Iterate ``x <- mapping(x)`` until every coordinate moves by at most ``tol``.

    The returned point ``x`` satisfies ``|mapping(x) - x| <= tol`` per coordinate.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x1, x2 = float(init[0]), float(init[1])
    for it in range(1, max_iter + 1):
        y1, y2 = mapping(x1, x2)
        if not (math.isfinite(y1) and math.isfinite(y2)):
            raise NonFiniteError(f"mapping produced ({y1!r}, {y2!r}) at iteration {it}")
        if abs(y1 - x1) <= tol and abs(y2 - x2) <= tol:
            return FixedPointResult((x1, x2), it)
        x1, x2 = y1, y2
    raise FixedPointError(f"no convergence after {max_iter} iterations", (x1, x2))
