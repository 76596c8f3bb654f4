import numpy as np
import pytest

from horizon_gnn.graph import build_mesh_graph


def random_graph(rng, n, p=0.2):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_mesh_graph(n, edges, rng.uniform(0, 10, size=(n, 2)))


def dense_normalized_adjacency(n, edges):
    """Brute-force D^-1/2 (A + I) D^-1/2 from the definition."""
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    a_tilde = a + np.eye(n)
    d = a_tilde.sum(axis=1)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = a_tilde[i, j] / np.sqrt(d[i] * d[j])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting --------------------------------------------------------

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on its own."""
    def record(name: str, passed: bool, detail: str = ""):
        ACCEPTANCE.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
