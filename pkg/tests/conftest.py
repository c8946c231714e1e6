import numpy as np
import pytest

from seqembed.codec import DnaSequence


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dna(rng, n, prefix="s"):
    return DnaSequence(prefix, "".join(rng.choice(list("ACGT"), n)))


def padded_batch(rng, lens, T, C):
    """Random ``(B, T, C)`` batch with rows past each length zeroed."""
    x = rng.normal(size=(len(lens), T, C))
    for b, n in enumerate(lens):
        x[b, n:] = 0.0
    return x, np.asarray(lens)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
