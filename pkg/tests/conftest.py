import random
from pathlib import Path

import pytest

from pipeparse.layout import compile_plan
from pipeparse.model import (END, REJECT, FieldSpec, HeaderTypeSpec, ParseState, SizeExpr,
                             TransitionEntry, TransitionKeySpec, fixture_path, load_parser_file,
                             make_graph)

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def fig5():
    return load_parser_file(fixture_path("fig5.json"))


@pytest.fixture(scope="session")
def simple():
    return load_parser_file(fixture_path("simple_parser.json"))


@pytest.fixture(scope="session")
def full():
    return load_parser_file(fixture_path("full_parser.json"))


@pytest.fixture(scope="session")
def simple_plan(simple):
    return compile_plan(simple, 320)


@pytest.fixture(scope="session")
def full_plan(full):
    return compile_plan(full, 320)


# --- random parse graphs -------------------------------------------------

FIXED = HeaderTypeSpec("h16", (FieldSpec("next", 8), FieldSpec("pad", 8)), 16)
WIDE = HeaderTypeSpec("h48", (FieldSpec("next", 8), FieldSpec("pad", 40)), 48)
VAR = HeaderTypeSpec(
    "hvar",
    (FieldSpec("next", 8), FieldSpec("len", 4, True), FieldSpec("pad", 4), FieldSpec("opts", 0)),
    160, SizeExpr("len", 16, 0))


def random_dag_edges(rng, n, density=0.3):
    """Forward edges over n0..n{n-1} plus END; every node is on a root->END path."""
    names = [f"n{i}" for i in range(n)]
    edges = set()
    for i in range(1, n):
        edges.add((names[rng.randrange(i)], names[i]))
    for i in range(n):
        later = names[i + 1:] + [END]
        edges.add((names[i], rng.choice(later)))
        for v in later:
            if rng.random() < density:
                edges.add((names[i], v))
    return names, edges


def graph_from_edges(names, edges, rng=None):
    rng = rng or random.Random(0)
    states = []
    for name in names:
        succ = sorted(v for u, v in edges if u == name)
        ht = rng.choice((FIXED, WIDE, VAR))
        values = rng.sample(range(256), len(succ))
        trans = tuple(TransitionEntry(val, v) for val, v in zip(values, succ))
        states.append(ParseState(name, ht, TransitionKeySpec(0, 8), trans, REJECT))
    return make_graph(states, names[0])


@pytest.fixture(scope="session")
def random_graph():
    def build(seed, n=None, density=0.3):
        rng = random.Random(seed)
        n = n if n is not None else rng.randint(1, 12)
        names, edges = random_dag_edges(rng, n, density)
        return graph_from_edges(names, edges, rng)
    return build


# --- acceptance summary --------------------------------------------------

def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records one pass/fail line, then asserts."""
    def record(n, title, ok, detail=""):
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        request.config._acceptance_lines.append(line)
        print(line)
        assert ok, line
    return record
