import numpy as np
import pytest

from entropykit.markov import TransitionMatrix
from entropykit.types import LocationAlphabet
from entropykit.validation import RING_P, synthetic_corpus


@pytest.fixture
def rooms():
    return LocationAlphabet.default()


@pytest.fixture
def ring():
    return TransitionMatrix.from_probs(RING_P, LocationAlphabet(("a", "b", "c")))


@pytest.fixture
def two_state():
    return TransitionMatrix.from_probs([[0.9, 0.1], [0.2, 0.8]], LocationAlphabet(("x", "y")))


@pytest.fixture(scope="session")
def corpus_20_weeks():
    return synthetic_corpus(weeks=20, seed=21)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
