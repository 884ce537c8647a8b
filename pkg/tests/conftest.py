import itertools

import numpy as np
import pytest

from detbeam.core import Vocabulary
from detbeam.model import CallableModel, MarkovModel, train_markov
from detbeam.toy import generate_corpus


def random_markov(seed: int, n_words: int = 3, order: int = 2, eos_weight: float = 1.0) -> MarkovModel:
    """Markov model with random counts over every context of a small vocabulary."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.from_words("abcdefgh"[:n_words])
    ids = [vocab.id(w) for w in "abcdefgh"[:n_words]]
    width = order - 1
    counts = {}
    for ctx in itertools.product([vocab.bos_id, *ids], repeat=width):
        row = {tok: float(rng.integers(0, 6)) for tok in ids}
        row[vocab.eos_id] = float(rng.integers(1, 6)) * eos_weight
        counts[ctx] = row
    return MarkovModel(vocab, order, 0.1, counts)


def chain_model(words: str = "abc") -> CallableModel:
    """Deterministic model emitting ``words`` in order, then EOS."""
    vocab = Vocabulary.from_words(words)

    def step(prefix):
        t = len(prefix) - 1
        return {vocab.id(words[t]): 1.0} if t < len(words) else {vocab.eos_id: 1.0}

    return CallableModel(vocab, step)


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_corpus(2200, seed=1)


@pytest.fixture(scope="session")
def toy_model(toy_corpus):
    return train_markov(toy_corpus[:2000], order=3, alpha=0.1)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
