"""Token encodings of expressions: string/subtree formats in Polish or reverse Polish order.

String format is a plain prefix/postfix walk.  Negative integer literals are
written as ``minus`` followed by the magnitude.  Subtree format emits one triple
``(node, left-child, right-child)`` per tree node, with ``EOS`` filling missing
children.  Subtree tokens carry signed integer literals such as ``-7``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .expr import BINARY_OPS, OPERATORS, SYMBOLS, UNARY_OPS, Expr, binary, integer, unary

EOS, PAD, SOS = "EOS", "PAD", "SOS"
RESERVED = (EOS, PAD, SOS)
EOS_ID, PAD_ID, SOS_ID = 0, 1, 2

STRING, SUBTREE = "string", "subtree"
POLISH, REVERSE_POLISH = "polish", "reverse_polish"

_INT_RE = re.compile(r"^-?\d+$")

# operator/variable/constant tokens listed for the original 12k-pair corpus
REFERENCE_STRING_TOKENS = (
    "plus", "minus", "times", "divide", "power", "root", "sqrt", "sin", "cos", "tan",
    "sec", "csc", "cot", "ln", "EOS", "x", "e", "n",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
)
REFERENCE_SUBTREE_TOKENS = REFERENCE_STRING_TOKENS + tuple(
    str(v) for v in (10, 11, 12, 13, 14, 15, 17, 18, 19, 21, 23, 24,
                     -1, -2, -3, -4, -5, -6, -7, -8, -9, -10, -11, -12, -13, -14, -15,
                     -17, -18, -19, -21, -24)
)


class DecodeError(ValueError):
    TRUNCATED = "Truncated"
    ARITY_MISMATCH = "ArityMismatch"
    UNKNOWN_TOKEN = "UnknownToken"
    SUBTREE_LABEL_MISMATCH = "SubtreeLabelMismatch"
    TRAILING_TOKENS = "TrailingTokens"

    def __init__(self, kind: str, message: str = ""):
        super().__init__(f"{kind}: {message}" if message else kind)
        self.kind = kind


@dataclass(frozen=True)
class Scheme:
    format: str = STRING
    direction: str = POLISH

    def __post_init__(self):
        if self.format not in (STRING, SUBTREE):
            raise ValueError(f"unknown format {self.format!r}")
        if self.direction not in (POLISH, REVERSE_POLISH):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class SchemePair:
    """Input/output encodings for a (integrand, primitive) pair.

    ``polish`` writes both sides in Polish order; ``irpp`` writes the integrand
    in reverse Polish order and the primitive in Polish order.
    """

    format: str
    order: str  # "polish" | "irpp"

    def __post_init__(self):
        if self.format not in (STRING, SUBTREE) or self.order not in ("polish", "irpp"):
            raise ValueError(f"bad scheme pair {self.format}-{self.order}")

    @property
    def input(self) -> Scheme:
        return Scheme(self.format, POLISH if self.order == "polish" else REVERSE_POLISH)

    @property
    def output(self) -> Scheme:
        return Scheme(self.format, POLISH)

    @property
    def name(self) -> str:
        return f"{self.format}-{self.order}"

    @classmethod
    def parse(cls, name: str) -> "SchemePair":
        try:
            fmt, order = name.split("-")
        except ValueError:
            raise ValueError(f"scheme must look like 'string-polish', got {name!r}") from None
        return cls(fmt, order)


SCHEME_PAIRS = tuple(SchemePair(f, o) for f in (STRING, SUBTREE) for o in ("polish", "irpp"))


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple
    scheme: Scheme

    def __str__(self):
        return " ".join(self.tokens)

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def parse(cls, text: str, scheme: Scheme) -> "TokenSeq":
        return cls(tuple(text.split()), scheme)

    def triples(self) -> list:
        t = self.tokens
        return [t[i:i + 3] for i in range(0, len(t) - len(t) % 3, 3)]


# ---------------------------------------------------------------------------
# encoding


def _label(e: Expr) -> str:
    return str(e.value) if e.op == "int" else e.op


def _string_tokens(e: Expr, reverse: bool, out: list) -> None:
    if e.op == "int" and e.value < 0:
        out.extend((str(-e.value), "minus") if reverse else ("minus", str(-e.value)))
        return
    if not reverse:
        out.append(_label(e))
    for a in e.args:
        _string_tokens(a, reverse, out)
    if reverse:
        out.append(_label(e))


def _subtree_tokens(e: Expr, reverse: bool, out: list) -> None:
    left = _label(e.args[0]) if e.args else EOS
    right = _label(e.args[1]) if len(e.args) == 2 else EOS
    if not reverse:
        out.extend((_label(e), left, right))
    for a in e.args:
        _subtree_tokens(a, reverse, out)
    if reverse:
        out.extend((_label(e), left, right))


def encode(e: Expr, scheme: Scheme) -> TokenSeq:
    out: list = []
    reverse = scheme.direction == REVERSE_POLISH
    if scheme.format == STRING:
        _string_tokens(e, reverse, out)
    else:
        _subtree_tokens(e, reverse, out)
    return TokenSeq(tuple(out), scheme)


# ---------------------------------------------------------------------------
# decoding


def _arity(tok: str) -> int:
    if tok in BINARY_OPS:
        return 2
    if tok in UNARY_OPS:
        return 1
    if tok in SYMBOLS or _INT_RE.match(tok):
        return 0
    raise DecodeError(DecodeError.UNKNOWN_TOKEN, repr(tok))


def _leaf(tok: str, fmt: str) -> Expr:
    if tok in SYMBOLS:
        return Expr(tok)
    if fmt == STRING and tok.startswith("-"):
        raise DecodeError(DecodeError.UNKNOWN_TOKEN, f"signed literal {tok!r} in string format")
    return integer(int(tok))


def _build(tok: str, children: list) -> Expr:
    try:
        if len(children) == 2:
            return binary(tok, children[0], children[1])
        return unary(tok, children[0])
    except ValueError as exc:
        raise DecodeError(DecodeError.ARITY_MISMATCH, str(exc)) from None


def _decode_string_polish(tokens) -> Expr:
    pos = 0

    def parse() -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise DecodeError(DecodeError.TRUNCATED, f"expected an operand at position {pos}")
        tok = tokens[pos]
        pos += 1
        k = _arity(tok)
        if k == 0:
            return _leaf(tok, STRING)
        return _build(tok, [parse() for _ in range(k)])

    e = parse()
    if pos != len(tokens):
        raise DecodeError(DecodeError.TRAILING_TOKENS, f"{len(tokens) - pos} tokens after a complete expression")
    return e


def _decode_string_reverse(tokens) -> Expr:
    if not tokens:
        raise DecodeError(DecodeError.TRUNCATED, "empty sequence")
    stack: list = []
    for tok in tokens:
        k = _arity(tok)
        if k == 0:
            stack.append(_leaf(tok, STRING))
            continue
        if len(stack) < k:
            raise DecodeError(DecodeError.ARITY_MISMATCH, f"{tok} needs {k} operands")
        children = stack[-k:]
        del stack[-k:]
        stack.append(_build(tok, children))
    if len(stack) > 1:
        raise DecodeError(DecodeError.TRAILING_TOKENS, f"{len(stack)} disconnected expressions")
    return stack[0]


def _check_triple(tri) -> int:
    parent, left, right = tri
    if parent in RESERVED:
        raise DecodeError(DecodeError.ARITY_MISMATCH, f"{parent} cannot head a subtree")
    k = _arity(parent)
    for child in (left, right):
        if child != EOS:
            _arity(child)
    want = {0: (False, False), 1: (True, False), 2: (True, True)}[k]
    if (left != EOS, right != EOS) != want:
        raise DecodeError(DecodeError.ARITY_MISMATCH, f"subtree {' '.join(tri)}")
    return k


def _decode_subtree_polish(tokens) -> Expr:
    pos = 0

    def parse(expected):
        nonlocal pos
        if pos + 3 > len(tokens):
            raise DecodeError(DecodeError.TRUNCATED, f"expected a subtree for {expected!r}")
        tri = tokens[pos:pos + 3]
        pos += 3
        k = _check_triple(tri)
        if expected is not None and tri[0] != expected:
            raise DecodeError(DecodeError.SUBTREE_LABEL_MISMATCH, f"expected {expected!r}, got {tri[0]!r}")
        if k == 0:
            return _leaf(tri[0], SUBTREE)
        return _build(tri[0], [parse(tri[1 + i]) for i in range(k)])

    e = parse(None)
    if pos != len(tokens):
        raise DecodeError(DecodeError.TRAILING_TOKENS, f"{len(tokens) - pos} tokens after a complete tree")
    return e


def _decode_subtree_reverse(tokens) -> Expr:
    if len(tokens) % 3:
        raise DecodeError(DecodeError.TRUNCATED, "length is not a multiple of 3")
    if not tokens:
        raise DecodeError(DecodeError.TRUNCATED, "empty sequence")
    stack: list = []
    for i in range(0, len(tokens), 3):
        tri = tokens[i:i + 3]
        k = _check_triple(tri)
        if k == 0:
            stack.append((tri[0], _leaf(tri[0], SUBTREE)))
            continue
        if len(stack) < k:
            raise DecodeError(DecodeError.ARITY_MISMATCH, f"{tri[0]} needs {k} subtrees")
        kids = stack[-k:]
        del stack[-k:]
        for (label, _), want in zip(kids, tri[1:1 + k]):
            if label != want:
                raise DecodeError(DecodeError.SUBTREE_LABEL_MISMATCH, f"expected {want!r}, got {label!r}")
        stack.append((tri[0], _build(tri[0], [c for _, c in kids])))
    if len(stack) > 1:
        raise DecodeError(DecodeError.TRAILING_TOKENS, f"{len(stack)} disconnected trees")
    return stack[0][1]


def decode(t: TokenSeq) -> Expr:
    """Exact inverse of :func:`encode`; malformed input raises :class:`DecodeError`."""
    tokens = tuple(t.tokens)
    if t.scheme.format == STRING:
        if t.scheme.direction == POLISH:
            return _decode_string_polish(tokens)
        return _decode_string_reverse(tokens)
    if t.scheme.direction == POLISH:
        return _decode_subtree_polish(tokens)
    return _decode_subtree_reverse(tokens)


class SubtreeTracker:
    """Online well-formedness check for a subtree stream emitted in Polish order.

    Mirrors the pending-slot worklist of the subtree decoder so a generator can
    stop as soon as the tree closes.
    """

    def __init__(self):
        self.pending = [None]
        self.error = None

    @property
    def done(self) -> bool:
        return not self.pending or self.error is not None

    def push(self, tri) -> None:
        if self.done:
            return
        expected = self.pending.pop()
        try:
            k = _check_triple(tri)
            if expected is not None and tri[0] != expected:
                raise DecodeError(DecodeError.SUBTREE_LABEL_MISMATCH, f"expected {expected!r}, got {tri[0]!r}")
        except DecodeError as exc:
            self.error = exc
            return
        for child in reversed(tri[1:1 + k]):
            self.pending.append(child)


# ---------------------------------------------------------------------------
# vocabulary


def _int_sort_key(tok: str):
    return (0, int(tok)) if _INT_RE.match(tok) else (1, tok)


class Vocab:
    """Bijective token <-> id map with EOS=0, PAD=1, SOS=2."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError("vocabulary must start with EOS, PAD, SOS")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, token_seqs, fmt: str = STRING) -> "Vocab":
        """Reserved tokens, every operator and symbol, then integers seen in the data."""
        seen = set()
        for seq in token_seqs:
            seen.update(seq.tokens if isinstance(seq, TokenSeq) else seq)
        fixed = list(OPERATORS) + list(SYMBOLS)
        extra = sorted((t for t in seen if t not in fixed and t not in RESERVED), key=_int_sort_key)
        for t in extra:
            if not _INT_RE.match(t):
                raise ValueError(f"unexpected token {t!r}")
            if fmt == STRING and t.startswith("-"):
                raise ValueError(f"signed literal {t!r} in string vocabulary")
        return cls(list(RESERVED) + fixed + extra)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, tok: str) -> int:
        try:
            return self.index[tok]
        except KeyError:
            raise DecodeError(DecodeError.UNKNOWN_TOKEN, f"{tok!r} is not in the vocabulary") from None


def ids_of(t: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Token ids; subtree sequences are reshaped to ``(len/3, 3)``."""
    ids = np.array([vocab.id(tok) for tok in t.tokens], dtype=np.int64)
    if t.scheme.format == SUBTREE:
        if len(ids) % 3:
            raise DecodeError(DecodeError.TRUNCATED, "subtree sequence length is not a multiple of 3")
        ids = ids.reshape(-1, 3)
    return ids


def tokens_of(ids, vocab: Vocab, scheme: Scheme) -> TokenSeq:
    flat = np.asarray(ids).reshape(-1)
    try:
        return TokenSeq(tuple(vocab.tokens[int(i)] for i in flat), scheme)
    except IndexError:
        raise DecodeError(DecodeError.UNKNOWN_TOKEN, "id outside the vocabulary") from None
