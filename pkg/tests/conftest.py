import itertools

import numpy as np
import pytest

from irnet.model import ModelConfig

# Small widths used for gradient checks (h=3, w=2, k=2, d_hid=8).
TINY = dict(h=3, w=2, k=2, P=2, d_hid=8, conv_channels=2, target_layers=2, target_hidden=4,
            t_layers=2, t_hidden=6, t_out=4, s_layers=2, s_hidden=8, baseline_layers=3, baseline_hidden=4)

# Desk-scale widths for the end-to-end runs.
TOY = dict(d_hid=32, conv_channels=4, target_hidden=32, t_hidden=64, t_out=16, s_hidden=32,
           baseline_layers=3, baseline_hidden=64)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


def monotone_paths(n, m):
    """Every warping path from (0, 0) to (n-1, m-1) with unit steps."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    yield from walk(0, 0)


def dtw_bruteforce(a, b, q=2):
    """Minimum over all warping paths of the nested q-root accumulation."""
    best = np.inf
    for path in monotone_paths(len(a), len(b)):
        acc = None
        for i, j in path:
            c = abs(a[i] - b[j])
            acc = c if acc is None else (c**q + acc**q) ** (1.0 / q)
        best = min(best, acc)
    return best


def random_graph_edges(rng, n, p=0.25):
    return [(i, j) for i, j in itertools.permutations(range(n), 2) if rng.random() < p]


def random_sample(config, rng, t=0):
    from irnet.datagen import Sample

    c = config
    mats = lambda: [rng.uniform(0, 1, size=(c.k**d, c.h)) for d in range(1, c.w + 1)]  # noqa: E731
    return Sample(t, rng.uniform(0, 1, c.h), mats(), mats(), rng.uniform(30, 70, c.P))


# One line per acceptance criterion, echoed again at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def record_criterion(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
