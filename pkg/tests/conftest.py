import numpy as np
import pytest

from lightnet.numerics import Rng, Tensor
from lightnet.train import synthetic_corpus


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.txt"
    path.write_text(synthetic_corpus(100_000, seed=0), encoding="utf-8")
    return path


def rand_tensor(rng, shape, low=-2.0, high=2.0):
    return Tensor(rng.uniform(shape, low, high), requires_grad=True)


def projection(rng, shape):
    """Random fixed weights that turn a tensor output into a scalar for grad checks."""
    return np.asarray(rng.normal(shape))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
