import random
from collections import OrderedDict

import pytest

from symint.datagen import GeneratorConfig, build_corpus
from symint.expr import BINARY_OPS, E, N, UNARY_OPS, X, binary, integer, root, unary


def random_expr(rng: random.Random, max_depth: int = 12, depth: int = 1):
    """Random well-formed tree built through the public constructors."""
    if depth >= max_depth or rng.random() < 0.1 + 0.05 * depth:
        r = rng.random()
        if r < 0.4:
            return X
        if r < 0.55:
            return N
        if r < 0.65:
            return E
        return integer(rng.randint(-24, 24))
    if rng.random() < 0.5:
        op = rng.choice(BINARY_OPS)
        if op == "root":
            return root(rng.randint(2, 5), random_expr(rng, max_depth, depth + 1))
        return binary(op, random_expr(rng, max_depth, depth + 1), random_expr(rng, max_depth, depth + 1))
    return unary(rng.choice(UNARY_OPS), random_expr(rng, max_depth, depth + 1))


@pytest.fixture(scope="session")
def corpus3():
    return build_corpus(GeneratorConfig(max_factors=3))


@pytest.fixture(scope="session")
def corpus_default():
    return build_corpus(GeneratorConfig())


@pytest.fixture(scope="session")
def subset100(corpus3):
    return sorted(corpus3, key=lambda p: p.id)[:100]


# -- acceptance summary ---------------------------------------------------

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: long-running training test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False})
    if rep.when == "call" or rep.failed:
        entry["ran"] = True
        if rep.failed:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] and entry["ran"] else ("SKIP" if not entry["ran"] else "FAIL")
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}")
