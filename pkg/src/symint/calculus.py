"""Symbolic differentiation with respect to x, and derivative-based pair verification."""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

from .expr import (
    DEFAULT_POLICY,
    ONE,
    ZERO,
    EquivalencePolicy,
    Expr,
    InsufficientSamples,
    X,
    cos,
    cot,
    csc,
    divide,
    equivalent,
    integer,
    ln,
    minus,
    normalize,
    plus,
    power,
    sec,
    sin,
    tan,
    times,
)


def _rational(q: Fraction) -> Expr:
    return integer(q.numerator) if q.denominator == 1 else divide(integer(q.numerator), integer(q.denominator))


def _power_rule(f: Expr, g: Expr, df: Expr) -> Expr:
    # d(f^g) = g * f^(g-1) * f' for x-free g
    return times(times(g, power(f, plus(g, integer(-1)))), df)


@lru_cache(maxsize=100_000)
def _d(e: Expr) -> Expr:
    op = e.op
    if op == "x":
        return ONE
    if op in ("n", "e", "int"):
        return ZERO
    if op == "plus":
        return plus(_d(e.args[0]), _d(e.args[1]))
    if op == "minus":
        return minus(_d(e.args[0]))
    if op == "times":
        f, g = e.args
        return plus(times(_d(f), g), times(f, _d(g)))
    if op == "divide":
        f, g = e.args
        return plus(divide(_d(f), g), minus(divide(times(f, _d(g)), power(g, 2))))
    if op == "power":
        f, g = e.args
        if not g.contains_x():
            return _power_rule(f, g, _d(f))
        if not f.contains_x():
            return times(times(e, ln(f)), _d(g))
        # f^g * (g' ln f + g f'/f)
        return times(e, plus(times(_d(g), ln(f)), divide(times(g, _d(f)), f)))
    if op == "sqrt":
        return _power_rule(e.args[0], _rational(Fraction(1, 2)), _d(e.args[0]))
    if op == "root":
        k, f = e.args
        return _power_rule(f, _rational(Fraction(1, k.value)), _d(f))
    u = e.args[0]
    du = _d(u)
    if op == "sin":
        return times(cos(u), du)
    if op == "cos":
        return times(minus(sin(u)), du)
    if op == "tan":
        return times(power(sec(u), 2), du)
    if op == "sec":
        return times(times(sec(u), tan(u)), du)
    if op == "csc":
        return times(minus(times(csc(u), cot(u))), du)
    if op == "cot":
        return times(minus(power(csc(u), 2)), du)
    if op == "ln":
        return divide(du, u)
    raise ValueError(f"cannot differentiate {op}")


def differentiate(e: Expr, wrt: Expr = X) -> Expr:
    """Normalized derivative d e / dx."""
    if wrt != X:
        raise ValueError("differentiation is only defined with respect to x")
    return normalize(_d(e))


def verify_pair(integrand: Expr, candidate_primitive: Expr,
                policy: EquivalencePolicy = DEFAULT_POLICY) -> bool:
    """True when the derivative of the candidate is equivalent to the integrand."""
    try:
        return equivalent(differentiate(candidate_primitive), integrand, policy)
    except InsufficientSamples:
        return False


__all__ = ["differentiate", "verify_pair"]
