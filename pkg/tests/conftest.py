from pathlib import Path

import numpy as np
import pytest

from signgt.graph import Graph

FIXTURES = Path(__file__).parent / "fixtures"


def random_graph(n, p=0.3, d=4, seed=0, num_classes=2):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    x = rng.standard_normal((n, d))
    y = np.arange(n) % num_classes
    return Graph(n, edges, x, rng.permutation(y), num_classes=num_classes)


@pytest.fixture
def fixtures():
    return FIXTURES


# one line per acceptance criterion, echoed after the run
ACCEPTANCE: list = []


def record_criterion(number, ok, detail):
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"criterion {number}: {status}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
