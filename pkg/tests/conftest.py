import numpy as np
import pytest

from perla.datasets import west_us_counties
from perla.graph import graph_from_pairs


@pytest.fixture(scope="session")
def west():
    return west_us_counties()


@pytest.fixture
def path4():
    return graph_from_pairs(["a", "b", "c", "d"], [(0, 1), (1, 2), (2, 3)])


def path_graph(n):
    return graph_from_pairs([f"p{i}" for i in range(n)], [(i, i + 1) for i in range(n - 1)])


def random_graph(n, rng, extra=None):
    """Connected random graph: a random spanning tree plus extra edges."""
    pairs = [(int(rng.integers(i)), i) for i in range(1, n)]
    for _ in range(extra if extra is not None else n):
        a, b = rng.choice(n, 2, replace=False)
        pairs.append((int(a), int(b)))
    return graph_from_pairs([f"r{i}" for i in range(n)], pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or (rep.when != "call" and outcome == "passed"):
                continue
            ok = outcome == "passed" and props["criterion"] not in results
            detail = props.get("detail") or f"{rep.when} {outcome}"
            results[props["criterion"]] = f"{'PASS' if ok else 'FAIL'}  criterion {props['criterion']:>2}: {detail}"
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
