# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stack-machine evaluator for postfix expression programs.

Opcode numbering must match ``symint.kernel.OPCODES``.
"""

import numpy as np
from libc.math cimport sin, cos, tan, log, exp, pow, sqrt, fabs, floor, isfinite, NAN


def eval_program(const int[::1] ops, const double[::1] consts, const double[::1] xs,
                 const double[::1] ns, double guard, int stack_size):
    cdef Py_ssize_t npts = xs.shape[0]
    cdef Py_ssize_t nops = ops.shape[0]
    out_arr = np.empty(npts, dtype=np.float64)
    stack_arr = np.empty(max(stack_size, 1), dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] st = stack_arr
    cdef Py_ssize_t i, k
    cdef int sp, op
    cdef double a, b, r, c, s
    cdef bint bad
    with nogil:
        for i in range(npts):
            sp = 0
            bad = False
            for k in range(nops):
                op = ops[k]
                if op < 10:
                    if op == 0:
                        r = xs[i]
                    elif op == 1:
                        r = ns[i]
                    elif op == 2:
                        r = exp(1.0)
                    else:
                        r = consts[k]
                    st[sp] = r
                    sp += 1
                    continue
                if op < 20:
                    sp -= 1
                    b = st[sp]
                    a = st[sp - 1]
                    if op == 10:
                        r = a + b
                    elif op == 11:
                        r = a * b
                    elif op == 12:
                        if fabs(b) < guard:
                            bad = True
                            break
                        r = a / b
                    elif op == 13:
                        if b == floor(b) and fabs(b) < 9007199254740992.0:
                            if b < 0 and fabs(a) < guard:
                                bad = True
                                break
                            r = pow(a, b)
                        else:
                            if a <= 0:
                                bad = True
                                break
                            r = exp(b * log(a))
                    else:
                        if b <= 0:
                            bad = True
                            break
                        r = pow(b, 1.0 / a)
                    st[sp - 1] = r
                else:
                    a = st[sp - 1]
                    if op == 20:
                        r = -a
                    elif op == 21:
                        if a <= 0:
                            bad = True
                            break
                        r = sqrt(a)
                    elif op == 22:
                        r = sin(a)
                    elif op == 23:
                        r = cos(a)
                    elif op == 24:
                        if fabs(cos(a)) < guard:
                            bad = True
                            break
                        r = tan(a)
                    elif op == 25:
                        c = cos(a)
                        if fabs(c) < guard:
                            bad = True
                            break
                        r = 1.0 / c
                    elif op == 26:
                        s = sin(a)
                        if fabs(s) < guard:
                            bad = True
                            break
                        r = 1.0 / s
                    elif op == 27:
                        s = sin(a)
                        if fabs(s) < guard:
                            bad = True
                            break
                        r = cos(a) / s
                    else:
                        if a <= 0:
                            bad = True
                            break
                        r = log(a)
                    st[sp - 1] = r
                if not isfinite(r):
                    bad = True
                    break
            out[i] = NAN if bad else st[0]
    return out_arr
