"""Pure-Python twin of the compiled evaluator (same opcodes, same arithmetic)."""

import math

import numpy as np

_E = math.exp(1.0)
_INT_LIMIT = 9007199254740992.0


def _run(ops, consts, x, n, guard):
    st = []
    push, pop = st.append, st.pop
    for k, op in enumerate(ops):
        if op < 10:
            push(x if op == 0 else n if op == 1 else _E if op == 2 else consts[k])
            continue
        if op < 20:
            b = pop()
            a = pop()
            if op == 10:
                r = a + b
            elif op == 11:
                r = a * b
            elif op == 12:
                if abs(b) < guard:
                    return math.nan
                r = a / b
            elif op == 13:
                if b == math.floor(b) and abs(b) < _INT_LIMIT:
                    if b < 0 and abs(a) < guard:
                        return math.nan
                    try:
                        r = math.pow(a, b)
                    except (OverflowError, ValueError, ZeroDivisionError):
                        return math.nan
                else:
                    if a <= 0:
                        return math.nan
                    try:
                        r = math.exp(b * math.log(a))
                    except OverflowError:
                        return math.nan
            else:
                if b <= 0:
                    return math.nan
                r = math.pow(b, 1.0 / a)
        else:
            a = pop()
            if op == 20:
                r = -a
            elif op == 21:
                if a <= 0:
                    return math.nan
                r = math.sqrt(a)
            elif op == 22:
                r = math.sin(a)
            elif op == 23:
                r = math.cos(a)
            elif op == 24:
                if abs(math.cos(a)) < guard:
                    return math.nan
                r = math.tan(a)
            elif op == 25:
                c = math.cos(a)
                if abs(c) < guard:
                    return math.nan
                r = 1.0 / c
            elif op == 26:
                s = math.sin(a)
                if abs(s) < guard:
                    return math.nan
                r = 1.0 / s
            elif op == 27:
                s = math.sin(a)
                if abs(s) < guard:
                    return math.nan
                r = math.cos(a) / s
            else:
                if a <= 0:
                    return math.nan
                r = math.log(a)
        if not math.isfinite(r):
            return math.nan
        push(r)
    return st[0]


def eval_program(ops, consts, xs, ns, guard, stack_size):
    ops = ops.tolist()
    consts = consts.tolist()
    return np.array([_run(ops, consts, x, n, guard) for x, n in zip(xs.tolist(), ns.tolist())],
                    dtype=np.float64)
