"""Batched numeric evaluation of expressions.

Expressions are compiled once into a postfix program (opcode + constant
arrays) that a stack machine runs over many sample points.  The compiled
Cython backend is used when the extension is built; otherwise, or when
``SYMINT_PURE_PYTHON=1`` is set, an equivalent pure-Python loop is used.
Both backends perform identical floating point operations.
"""

from __future__ import annotations

import os

import numpy as np

from .expr import Expr

OPCODES = {
    "x": 0, "n": 1, "e": 2, "int": 3,
    "plus": 10, "times": 11, "divide": 12, "power": 13, "root": 14,
    "minus": 20, "sqrt": 21, "sin": 22, "cos": 23, "tan": 24,
    "sec": 25, "csc": 26, "cot": 27, "ln": 28,
}

from . import _evalkernel_py  # noqa: E402

python_backend = _evalkernel_py.eval_program

try:
    if os.environ.get("SYMINT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python backend requested")
    from ._evalkernel import eval_program as compiled_backend
    BACKEND = "cython"
except ImportError:
    compiled_backend = None
    BACKEND = "python"

_eval_program = compiled_backend if compiled_backend is not None else python_backend


class Program:
    __slots__ = ("ops", "consts", "stack_size")

    def __init__(self, ops, consts, stack_size):
        self.ops = np.ascontiguousarray(ops, dtype=np.int32)
        self.consts = np.ascontiguousarray(consts, dtype=np.float64)
        self.stack_size = stack_size


def compile_expr(e: Expr) -> Program:
    prog = e._program
    if prog is not None:
        return prog
    ops, consts = [], []
    depth = max_depth = 0
    stack = [(e, False)]
    while stack:
        node, expanded = stack.pop()
        if node.args and not expanded:
            stack.append((node, True))
            for child in reversed(node.args):
                stack.append((child, False))
            continue
        ops.append(OPCODES[node.op])
        consts.append(float(node.value) if node.op == "int" else 0.0)
        depth += 1 - len(node.args)
        max_depth = max(max_depth, depth)
    prog = Program(ops, consts, max_depth)
    e._program = prog
    return prog


def eval_batch(e: Expr, xs, ns, pole_guard: float = 1e-4, backend=None) -> np.ndarray:
    """Values of ``e`` at points ``(xs[i], ns[i])``; NaN marks points outside the domain."""
    prog = compile_expr(e)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ns = np.ascontiguousarray(ns, dtype=np.float64)
    run = backend or _eval_program
    return run(prog.ops, prog.consts, xs, ns, float(pole_guard), prog.stack_size)
