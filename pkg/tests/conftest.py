import numpy as np
import pytest

from cape.data import CompositionTable, EmbeddingMatrix, Vocabulary


@pytest.fixture
def tiny_vocab():
    return Vocabulary(["wet", "dry"], ["dog", "cat", "old car"])


@pytest.fixture
def tiny_table(tiny_vocab):
    pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (1, 0), (0, 2)]
    splits = ["seen", "seen", "seen", "seen", "unseen_val", "unseen_test"]
    return CompositionTable(tiny_vocab, pairs, splits)


@pytest.fixture
def tiny_embeddings():
    rng = np.random.default_rng(0)
    return EmbeddingMatrix(rng.normal(size=(2, 6)), rng.normal(size=(3, 6)))


# -- acceptance reporting ------------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one criterion's outcome; the line is echoed in the terminal summary."""
    def record(number, ok, title, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" [{detail}]"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
