import math
import os
import random
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_expr
from symint import kernel
from symint.expr import E, N, X, cos, divide, ln, plus, power, root, sin, sqrt, tan, times

needs_compiled = pytest.mark.skipif(kernel.compiled_backend is None, reason="compiled kernel not built")


def _points(k=64, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 2.0, k), rng.uniform(0.5, 2.5, k)


def test_against_math_library():
    xs, ns = _points()
    e = plus(divide(sin(X), sqrt(X)), times(power(X, N), ln(plus(X, tan(X)))))
    got = kernel.eval_batch(e, xs, ns)
    checked = 0
    for x, n, g in zip(xs, ns, got):
        arg = x + math.tan(x)
        if abs(math.cos(x)) < 1e-4 or arg <= 0:
            assert math.isnan(g)
            continue
        want = math.sin(x) / math.sqrt(x) + x ** n * math.log(arg)
        assert g == pytest.approx(want, rel=1e-12)
        checked += 1
    assert checked > 40


def test_nan_marks_domain_errors():
    out = kernel.eval_batch(ln(plus(X, -1)), np.array([0.5, 1.5]), np.array([1.0, 1.0]))
    assert math.isnan(out[0]) and out[1] == pytest.approx(math.log(0.5))


def test_pole_guard():
    out = kernel.eval_batch(divide(1, plus(X, -1)), np.array([1.0 + 1e-6, 1.5]), np.array([1.0, 1.0]))
    assert math.isnan(out[0]) and out[1] == pytest.approx(2.0)


@needs_compiled
def test_backends_identical_on_corpus(corpus3):
    xs, ns = _points(50, 1)
    for p in corpus3:
        for e in (p.integrand, p.primitive):
            a = kernel.eval_batch(e, xs, ns, backend=kernel.python_backend)
            b = kernel.eval_batch(e, xs, ns, backend=kernel.compiled_backend)
            assert np.array_equal(a, b, equal_nan=True)


@needs_compiled
def test_backends_identical_fuzzed():
    xs, ns = _points(16, 2)
    rng = random.Random(5)
    for _ in range(2000):
        e = random_expr(rng, max_depth=8)
        a = kernel.eval_batch(e, xs, ns, backend=kernel.python_backend)
        b = kernel.eval_batch(e, xs, ns, backend=kernel.compiled_backend)
        assert np.array_equal(a, b, equal_nan=True), e


def test_root_and_e():
    out = kernel.eval_batch(times(root(3, X), power(E, X)), np.array([8.0]), np.array([1.0]))
    assert out[0] == pytest.approx(2.0 * math.exp(8.0), rel=1e-14)


def test_pure_python_selected_by_environment():
    env = dict(os.environ, SYMINT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from symint import kernel; print(kernel.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def test_compiled_program_cached():
    e = cos(X)
    assert kernel.compile_expr(e) is kernel.compile_expr(e)
