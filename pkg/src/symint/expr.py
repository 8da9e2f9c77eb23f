"""Expression trees, canonical normalization and numeric equivalence.

An :class:`Expr` is an immutable binary/unary tree over a fixed operator set.
``normalize`` maps an expression to a canonical form by converting it into a
sum-of-monomials representation (exact rational coefficients, merged
exponents) and rendering that back into a tree.  ``equivalent`` combines
structural comparison of normal forms with deterministic numeric sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

BINARY_OPS = ("plus", "times", "divide", "power", "root")
UNARY_OPS = ("minus", "sqrt", "sin", "cos", "tan", "sec", "csc", "cot", "ln")
SYMBOLS = ("x", "n", "e")
OPERATORS = BINARY_OPS + UNARY_OPS

# total order used for sorting operands: leaves first, then functions, then compound nodes
_RANK = {
    "int": 0, "n": 1, "x": 2, "e": 3,
    "sin": 10, "cos": 11, "tan": 12, "sec": 13, "csc": 14, "cot": 15, "ln": 16,
    "sqrt": 17, "root": 18, "power": 19, "minus": 20, "divide": 21, "times": 22, "plus": 23,
}


class DomainError(ArithmeticError):
    """Numeric evaluation left the real domain (pole, log of a non-positive value, overflow)."""


class InsufficientSamples(RuntimeError):
    """Too few sample points evaluated cleanly to decide numeric equivalence."""


class Expr:
    """Immutable expression node.

    ``op`` is an operator name, one of ``"x"``, ``"n"``, ``"e"`` or ``"int"``
    (an integer literal whose value is in ``value``).
    """

    __slots__ = ("op", "args", "value", "_hash", "_key", "_program")

    def __init__(self, op: str, args: tuple = (), value: int = 0):
        if op in BINARY_OPS:
            if len(args) != 2:
                raise ValueError(f"{op} takes 2 operands, got {len(args)}")
            if op == "root" and not (args[0].op == "int" and args[0].value >= 2):
                raise ValueError("root degree must be an integer literal >= 2")
        elif op in UNARY_OPS:
            if len(args) != 1:
                raise ValueError(f"{op} takes 1 operand, got {len(args)}")
        elif op in SYMBOLS or op == "int":
            if args:
                raise ValueError(f"leaf {op} takes no operands")
        else:
            raise ValueError(f"unknown operator {op!r}")
        self.op = op
        self.args = tuple(args)
        self.value = int(value)
        self._hash = hash((op, self.value, self.args))
        self._key = None
        self._program = None

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return self.op == other.op and self.value == other.value and self.args == other.args

    def __ne__(self, other):
        return not self.__eq__(other)

    @property
    def key(self) -> tuple:
        if self._key is None:
            self._key = (_RANK[self.op], self.value, tuple(a.key for a in self.args))
        return self._key

    @property
    def is_leaf(self) -> bool:
        return not self.args

    def size(self) -> int:
        """Number of nodes in the tree."""
        return 1 + sum(a.size() for a in self.args)

    def depth(self) -> int:
        return 1 + max((a.depth() for a in self.args), default=0)

    def contains_x(self) -> bool:
        if self.op == "x":
            return True
        return any(a.contains_x() for a in self.args)

    def __repr__(self):
        return f"Expr<{self}>"

    def __str__(self):
        return to_infix(self)


def integer(k: int) -> Expr:
    return Expr("int", (), k)


X = Expr("x")
N = Expr("n")
E = Expr("e")
ZERO = integer(0)
ONE = integer(1)


def unary(op: str, a: Expr) -> Expr:
    # minus never wraps an integer literal: the sign is folded into the literal
    if op == "minus" and a.op == "int":
        return integer(-a.value)
    return Expr(op, (a,))


def binary(op: str, a: Expr, b: Expr) -> Expr:
    return Expr(op, (a, b))


def _lift(v) -> Expr:
    return v if isinstance(v, Expr) else integer(v)


def plus(a, b) -> Expr:
    return binary("plus", _lift(a), _lift(b))


def times(a, b) -> Expr:
    return binary("times", _lift(a), _lift(b))


def divide(a, b) -> Expr:
    return binary("divide", _lift(a), _lift(b))


def power(a, b) -> Expr:
    return binary("power", _lift(a), _lift(b))


def root(k, a) -> Expr:
    return binary("root", _lift(k), _lift(a))


def minus(a) -> Expr:
    return unary("minus", _lift(a))


def sqrt(a) -> Expr:
    return unary("sqrt", _lift(a))


def sin(a) -> Expr:
    return unary("sin", _lift(a))


def cos(a) -> Expr:
    return unary("cos", _lift(a))


def tan(a) -> Expr:
    return unary("tan", _lift(a))


def sec(a) -> Expr:
    return unary("sec", _lift(a))


def csc(a) -> Expr:
    return unary("csc", _lift(a))


def cot(a) -> Expr:
    return unary("cot", _lift(a))


def ln(a) -> Expr:
    return unary("ln", _lift(a))


def subtract(a, b) -> Expr:
    """a - b, expressed with unary minus only."""
    return plus(a, times(-1, b))


_INFIX = {"plus": "+", "times": "*", "divide": "/", "power": "^"}


def to_infix(e: Expr) -> str:
    """Human readable rendering for logs, e.g. ``(x*cos(x))``. Not a parse format."""
    if e.op == "int":
        return str(e.value)
    if e.op in SYMBOLS:
        return e.op
    if e.op in _INFIX:
        return f"({to_infix(e.args[0])}{_INFIX[e.op]}{to_infix(e.args[1])})"
    if e.op == "root":
        return f"root{e.args[0].value}({to_infix(e.args[1])})"
    if e.op == "minus":
        return f"(-{to_infix(e.args[0])})"
    return f"{e.op}({to_infix(e.args[0])})"


# ---------------------------------------------------------------------------
# numeric evaluation


@dataclass(frozen=True)
class EvalPoint:
    x_value: float
    n_value: float = 1.0


@dataclass(frozen=True)
class EquivalencePolicy:
    sample_count: int = 20
    min_valid_points: int = 10
    rel_tolerance: float = 1e-6
    pole_guard: float = 1e-4
    seed: int = 0
    x_range: tuple = (0.1, 2.0)
    n_range: tuple = (0.5, 2.5)

    def __post_init__(self):
        if not (self.sample_count >= self.min_valid_points >= 1):
            raise ValueError("need sample_count >= min_valid_points >= 1")
        if self.rel_tolerance <= 0 or self.pole_guard <= 0:
            raise ValueError("tolerances must be positive")

    def sample_points(self) -> tuple[np.ndarray, np.ndarray]:
        return _sample_points(self.seed, self.sample_count, self.x_range, self.n_range)


DEFAULT_POLICY = EquivalencePolicy()


@lru_cache(maxsize=64)
def _sample_points(seed, count, x_range, n_range):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(x_range[0], x_range[1], size=count)
    ns = rng.uniform(n_range[0], n_range[1], size=count)
    xs.setflags(write=False)
    ns.setflags(write=False)
    return xs, ns


def eval_numeric(e: Expr, p: EvalPoint, pole_guard: float = DEFAULT_POLICY.pole_guard) -> float:
    """Evaluate ``e`` at one point; raises :class:`DomainError` off the real domain."""
    from .kernel import eval_batch

    out = eval_batch(e, np.array([p.x_value], dtype=float), np.array([p.n_value], dtype=float), pole_guard)
    v = float(out[0])
    if math.isnan(v):
        raise DomainError(f"{to_infix(e)} undefined at x={p.x_value}, n={p.n_value}")
    return v


def numeric_agreement(a: Expr, b: Expr, policy: EquivalencePolicy = DEFAULT_POLICY) -> tuple[int, int]:
    """Return ``(valid, disagreeing)`` point counts for sampled evaluation of a and b."""
    from .kernel import eval_batch

    xs, ns = policy.sample_points()
    va = eval_batch(a, xs, ns, policy.pole_guard)
    vb = eval_batch(b, xs, ns, policy.pole_guard)
    ok = np.isfinite(va) & np.isfinite(vb)
    scale = np.maximum(1.0, np.maximum(np.abs(va), np.abs(vb)))
    bad = ok & (np.abs(va - vb) > policy.rel_tolerance * scale)
    return int(ok.sum()), int(bad.sum())


def equivalent(a: Expr, b: Expr, policy: EquivalencePolicy = DEFAULT_POLICY) -> bool:
    """Decide whether two expressions denote the same function of x and n.

    Raises :class:`InsufficientSamples` when fewer than ``policy.min_valid_points``
    sample points evaluate for both expressions and none of them disagree.
    """
    if a == b or normalize(a) == normalize(b):
        return True
    valid, bad = numeric_agreement(a, b, policy)
    if bad:
        return False
    if valid < policy.min_valid_points:
        raise InsufficientSamples(f"only {valid} of {policy.sample_count} sample points were valid")
    return True


# ---------------------------------------------------------------------------
# normalization
#
# A canonical sum is a tuple of (monomial, Fraction coefficient) sorted by
# monomial key; a monomial is a tuple of (base Expr, exponent sum) sorted by
# base key.  The constant term has the empty monomial.  Bases are canonical
# expressions: symbols, function applications, positive integers carrying a
# non-integer exponent, or "wrapped" sums/powers that could not be merged.

_F1 = Fraction(1)
# products of sums are distributed unless the expansion would exceed this many terms
_EXPAND_LIMIT = 64
_ONE_SUM = (((), _F1),)
# exact powers of rational constants are folded only up to this many bits
_FOLD_BITS = 2048


def _foldable(c: Fraction, k: int) -> bool:
    if c == 0 or abs(c) == 1:
        return True
    return abs(k) * max(c.numerator.bit_length(), c.denominator.bit_length()) <= _FOLD_BITS


def _sum_key(s) -> tuple:
    return tuple((_mono_key(m), c) for m, c in s)


def _mono_key(m) -> tuple:
    return tuple((b.key, _sum_key(ex)) for b, ex in m)


def _const(q) -> tuple:
    q = Fraction(q)
    return ((( ), q),) if q else ()


def _const_value(s):
    """The Fraction value of a constant sum, or None."""
    if not s:
        return Fraction(0)
    if len(s) == 1 and s[0][0] == ():
        return s[0][1]
    return None


def _add(a, b) -> tuple:
    if not a:
        return b
    if not b:
        return a
    acc: dict = {}
    for m, c in a:
        acc[m] = c
    for m, c in b:
        acc[m] = acc.get(m, 0) + c
    return tuple(sorted(((m, c) for m, c in acc.items() if c), key=lambda t: _mono_key(t[0])))


def _scale(a, q) -> tuple:
    q = Fraction(q)
    if not q:
        return ()
    return tuple((m, c * q) for m, c in a)


def _atom(base: Expr, ex=_ONE_SUM) -> tuple:
    return ((((base, ex),), _F1),)


def _make_mono(factors: dict, coeff: Fraction) -> tuple:
    """Build the sum for a product of base->exponent factors, folding numeric parts.

    A wrapped base (a sum, or a term that could not take a fractional power)
    whose exponent has become reducible, e.g. 1, is expanded again so that the
    result does not depend on the order in which factors were combined.
    """
    out, rest = [], []
    for b, ex in factors.items():
        if not ex:
            continue
        if b.op == "int":
            q = _const_value(ex)
            if b.value == 1:
                continue
            if q is not None and q.denominator == 1 and _foldable(Fraction(b.value), int(q)):
                coeff *= Fraction(b.value) ** int(q)
                continue
        elif b.op not in SYMBOLS:
            nb = _nf(b)
            if nb != _atom(b):
                p = _pow(nb, ex)
                if p != _atom(b, ex):
                    rest.append(p)
                    continue
        out.append((b, ex))
    if not coeff:
        return ()
    out.sort(key=lambda t: t[0].key)
    mono = ((tuple(out), coeff),)
    for p in rest:
        mono = _mul(mono, p)
    return mono


def _mul(a, b) -> tuple:
    if not a or not b:
        return ()
    ca, cb = _const_value(a), _const_value(b)
    if ca is not None:
        return _scale(b, ca)
    if cb is not None:
        return _scale(a, cb)
    if len(a) * len(b) > _EXPAND_LIMIT:
        a = a if len(a) == 1 else _atom(_render(a))
        b = b if len(b) == 1 else _atom(_render(b))
    out = ()
    for ta in a:
        for tb in b:
            out = _add(out, _mono_mul(ta, tb))
    return out


def _mono_mul(ta, tb) -> tuple:
    (ma, qa), (mb, qb) = ta, tb
    factors: dict = {}
    for base, ex in ma + mb:
        factors[base] = _add(factors[base], ex) if base in factors else ex
    return _make_mono(factors, qa * qb)


def _is_positive(b: Expr) -> bool:
    # n is sampled from a positive range and treated as positive
    return b.op in ("x", "n", "e") or (b.op == "int" and b.value > 0)


def _iroot(v: int, k: int):
    if v < 0:
        return None
    if v < 2:
        return v
    if k >= v.bit_length():
        return None
    r = round(v ** (1.0 / k))
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand ** k == v:
            return cand
    return None


def _pow_coeff(c: Fraction, q: Fraction):
    """c**q for c > 0 as (Fraction, extra factors dict) or None."""
    if c <= 0:
        return None
    if q.denominator == 1:
        return (c ** int(q), {}) if _foldable(c, int(q)) else None
    coeff, extra = _F1, {}
    for v, sign in ((c.numerator, 1), (c.denominator, -1)):
        if v == 1:
            continue
        r = _iroot(v, q.denominator)
        if r is not None and _foldable(Fraction(r), q.numerator):
            coeff *= Fraction(r) ** (sign * q.numerator)
        else:
            extra[integer(v)] = _const(sign * q)
    return coeff, extra


def _pow(a, b) -> tuple:
    q = _const_value(b)
    if q is not None:
        if q == 0:
            return _const(1)
        if q == 1:
            return a
        ca = _const_value(a)
        if ca is not None:
            if ca == 0:
                return () if q > 0 else _atom(power(ZERO, _render(b)))
            if q.denominator == 1:
                if not _foldable(ca, int(q)):
                    return _atom(_render(a), b)
                return _const(ca ** int(q))
            r = _pow_coeff(ca, q)
            if r is None:
                return _atom(power(_render(a), _render(b)))
            coeff, extra = r
            return _make_mono(extra, coeff)
        if len(a) == 1:
            (m, c), = a
            if q.denominator == 1 and _foldable(c, int(q)):
                return _make_mono({base: _scale(ex, q) for base, ex in m}, c ** int(q))
            single = len(m) == 1 and m[0][1] == _ONE_SUM
            if single or all(_is_positive(base) for base, _ in m):
                r = _pow_coeff(c, q)
                if r is not None:
                    coeff, extra = r
                    factors = {base: _scale(ex, q) for base, ex in m}
                    for base, ex in extra.items():
                        factors[base] = _add(factors.get(base, ()), ex)
                    return _make_mono(factors, coeff)
        return _atom(_render(a), b)
    # symbolic exponent
    ca = _const_value(a)
    if ca is not None:
        if ca == 1:
            return _const(1)
        if ca > 1 and ca.denominator == 1:
            return _atom(integer(int(ca)), b)
        return _atom(_render(a), b)
    if len(a) == 1:
        (m, c), = a
        if c == 1 and (len(m) == 1 and m[0][1] == _ONE_SUM or all(_is_positive(base) for base, _ in m)):
            return _make_mono({base: _mul(ex, b) for base, ex in m}, _F1)
    return _atom(_render(a), b)


def _func(op: str, a) -> tuple:
    if not a:
        if op in ("sin", "tan"):
            return ()
        if op in ("cos", "sec"):
            return _const(1)
    if op == "ln":
        if _const_value(a) == 1:
            return ()
        if len(a) == 1 and a[0][1] == 1 and len(a[0][0]) == 1 and a[0][0][0][0].op == "e":
            return a[0][0][0][1]
    return _atom(unary(op, _render(a)))


def _product_factors(e: Expr) -> list:
    if e.op != "times":
        return [e]
    return _product_factors(e.args[0]) + _product_factors(e.args[1])


def _nf(e: Expr) -> tuple:
    return _nf_cached(e)


@lru_cache(maxsize=200_000)
def _nf_cached(e: Expr) -> tuple:
    op = e.op
    if op == "int":
        return _const(e.value)
    if op in SYMBOLS:
        return _atom(e)
    if op == "plus":
        return _add(_nf(e.args[0]), _nf(e.args[1]))
    if op == "times":
        return _mul(_nf(e.args[0]), _nf(e.args[1]))
    if op == "divide":
        den = _nf(e.args[1])
        if not den:
            return _atom(divide(_render(_nf(e.args[0])), ZERO))
        # invert factor by factor so a rendered denominator is not re-expanded
        inv = _const(1)
        for f in _product_factors(e.args[1]):
            inv = _mul(inv, _pow(_nf(f), _const(-1)))
        return _mul(_nf(e.args[0]), inv)
    if op == "power":
        return _pow(_nf(e.args[0]), _nf(e.args[1]))
    if op == "root":
        return _pow(_nf(e.args[1]), _const(Fraction(1, e.args[0].value)))
    if op == "minus":
        return _scale(_nf(e.args[0]), -1)
    if op == "sqrt":
        return _pow(_nf(e.args[0]), _const(Fraction(1, 2)))
    return _func(op, _nf(e.args[0]))


def _render_const(q: Fraction) -> Expr:
    if q.denominator == 1:
        return integer(int(q))
    return divide(integer(q.numerator), integer(q.denominator))


def _render_factor(b: Expr, ex) -> Expr:
    q = _const_value(ex)
    if q is None:
        return power(b, _render(ex))
    if q == 1:
        return b
    if q.numerator == 1 and q.denominator == 2:
        return sqrt(b)
    if q.numerator == 1:
        return root(q.denominator, b)
    return power(b, _render_const(q))


def _fold_times(factors: list) -> Expr:
    out = factors[0]
    for f in factors[1:]:
        out = times(out, f)
    return out


def _render_term(m, c: Fraction) -> Expr:
    num, den = [], []
    for b, ex in m:
        if all(cc < 0 for _, cc in ex):
            den.append(_render_factor(b, _scale(ex, -1)))
        else:
            num.append(_render_factor(b, ex))
    p, q = c.numerator, c.denominator
    negate = False
    if abs(p) != 1 or not num:
        num.insert(0, integer(p))
    elif p < 0:
        negate = True
    if q != 1:
        den.insert(0, integer(q))
    out = _fold_times(num)
    if den:
        out = divide(out, _fold_times(den))
    return minus(out) if negate else out


@lru_cache(maxsize=200_000)
def _render(s) -> Expr:
    if not s:
        return ZERO
    terms = [_render_term(m, c) for m, c in s]
    out = terms[0]
    for t in terms[1:]:
        out = plus(out, t)
    return out


def normalize(e: Expr) -> Expr:
    """Canonical form: constants folded, sums/products flattened and sorted, powers merged.

    Idempotent, and numerically equal to ``e`` wherever both are defined.
    """
    return _render(_nf(e))
