import numpy as np
import pytest

from temponet.tensor import from_arrays

ACCEPTANCE_LINES = []


def record_line(line: str) -> None:
    """Keep an acceptance verdict for the end-of-run summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def exact_tensor(a, tl, scales=None, self_loops=True):
    """Dense exact CP tensor from factors, packed into a DynTensor."""
    a = np.asarray(a, dtype=float)
    tl = np.asarray(tl, dtype=float)
    scales = np.ones(a.shape[1]) if scales is None else np.asarray(scales, dtype=float)
    x = np.einsum("r,ir,jr,tr->ijt", scales, a, a, tl)
    n, h = x.shape[0], x.shape[2]
    i, j, t = np.nonzero(x)
    keep = i <= j
    if not self_loops:
        keep &= i != j
    return from_arrays(n, h, i[keep], j[keep], t[keep], x[i[keep], j[keep], t[keep]], self_loops)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
