import numpy as np
import pytest

from liberate.dataset import from_triples, synthesize_ratings, subset_top


@pytest.fixture
def tiny_store():
    # users 1..3, items 10..13
    return from_triples(
        [1, 1, 1, 2, 2, 3],
        [10, 11, 12, 10, 13, 11],
        [4.0, 3.0, 5.0, 2.0, 1.0, 4.5],
    )


@pytest.fixture
def dense_store():
    """6 users x 8 items, every user rates 6 or more items."""
    rng = np.random.default_rng(7)
    users, items, values = [], [], []
    for u in range(6):
        for j in range(8):
            if rng.random() < 0.85 or j < 6:
                users.append(u)
                items.append(j)
                values.append(float(rng.integers(1, 6)))
    return from_triples(users, items, values)


@pytest.fixture(scope="session")
def corpus():
    return synthesize_ratings(seed=0)


@pytest.fixture(scope="session")
def u10_i40(corpus):
    return subset_top(corpus, 10, 40)


def random_instance(rng, m=None, n=None, l=None, density=0.7):
    """Small random (store, U, V) triple with every user holding a rating."""
    m = m or int(rng.integers(1, 6))
    n = n or int(rng.integers(1, 6))
    l = l or int(rng.integers(1, 5))
    users, items, values = [], [], []
    for i in range(m):
        rated = [j for j in range(n) if rng.random() < density] or [int(rng.integers(n))]
        for j in rated:
            users.append(i)
            items.append(j)
            values.append(float(rng.uniform(0, 5)))
    store = from_triples(users, items, values)
    # from_triples densifies ids; unrated trailing items would vanish, so size from the store
    U = rng.normal(0, 0.7, (store.m, l))
    V = rng.normal(0, 0.7, (store.n, l))
    return store, U, V


# acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Usage: ``criterion(n, "description", detail="...")`` before asserting;
    the line is marked PASS only if the test body finishes.
    """
    state = {}

    def record(n, text, detail=""):
        state.update(n=n, text=text, detail=detail)

    yield record
    if state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {state['n']}: {state['text']}"
        if state["detail"]:
            line += f" ({state['detail']})"
        ACCEPTANCE_LINES[state["n"]] = line
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
