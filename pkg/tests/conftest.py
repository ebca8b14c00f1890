import numpy as np
import pytest

from todynet.autodiff import ops
from todynet.autodiff.tensor import Parameter, Tensor, reset_tape
from todynet.data import TSDataset, TSHeader

SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(autouse=True)
def _fresh_tape():
    reset_tape()
    yield
    reset_tape()


def param(rng, *shape, name="p", low=-1.0, high=1.0):
    return Parameter(rng.uniform(low, high, size=shape), name=name, dtype=np.float64)


def probe(out, rng):
    """Reduce ``out`` to a scalar with fixed random weights (exercises every entry)."""
    R = Tensor(rng.standard_normal(out.shape))
    return ops.sum(ops.mul(out, R))


def make_dataset(m=8, d=3, length=24, classes=2, seed=0, split="train", separable=True):
    rng = np.random.default_rng(seed)
    y = np.arange(m) % classes
    X = rng.standard_normal((m, d, length))
    if separable:
        t = np.linspace(0, 1, length)
        for i in range(m):
            X[i] += 2.0 * np.sin(2 * np.pi * (y[i] + 1) * t)
    header = TSHeader(problem_name="Toy", dimensions=d, series_length=length,
                      equal_length=True, class_labels=tuple(f"c{i}" for i in range(classes)))
    return TSDataset(header, X, y, split=split)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
