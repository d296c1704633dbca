import numpy as np
import pytest

from domaincert import NGramModel, SeededTabularModel, TabularModel, Vocabulary


@pytest.fixture
def toy_vocab():
    """Five tokens: a, b, c plus BOS/EOS."""
    return Vocabulary.build(["a", "b", "c"])


@pytest.fixture
def trained_trigram(toy_vocab):
    rng = np.random.default_rng(7)
    corpus = [tuple(rng.integers(0, len(toy_vocab), size=rng.integers(2, 9)))
              for _ in range(200)]
    return NGramModel.train(corpus, order=3, alpha=0.4, vocab=toy_vocab), corpus


def seeded_pair(seed, vocab, max_response_len=5, window=2):
    """A deterministic enumerable (generalist, guide) pair."""
    lm = SeededTabularModel(vocab, seed, max_response_len, window=window)
    guide = SeededTabularModel(vocab, seed + 10_000, max_response_len, window=window)
    return lm, guide


@pytest.fixture
def enumerable_pair(toy_vocab):
    return seeded_pair(5, toy_vocab)


def two_outcome_pair(vocab, p_first=0.5, accept_first=True, accept_second=False):
    """Tabular pair with exactly two responses: (a, EOS) and (b, EOS).

    The guide scores are rigged so the acceptance decision at k = 0 is
    ``accept_first``/``accept_second``; the rejection mass is then exact.
    """
    a, b, eos = 0, 1, vocab.eos_id
    size = len(vocab)

    def row(pairs):
        out = np.zeros(size)
        for token, p in pairs:
            out[token] = p
        return out

    lm_rows = {
        ((), ()): row([(a, p_first), (b, 1.0 - p_first)]),
        ((), (a,)): row([(eos, 1.0)]),
        ((), (b,)): row([(eos, 1.0)]),
    }
    lm = TabularModel(vocab, lm_rows)
    # guide gives each response the same probability the generalist does
    # (ratio 0 <= 0, accepted) or something far smaller (ratio > 0, rejected)
    g_first = p_first if accept_first else p_first / 16.0
    g_second = (1.0 - p_first) if accept_second else (1.0 - p_first) / 16.0
    rest = 1.0 - g_first - g_second
    guide_rows = {
        ((), ()): row([(a, g_first), (b, g_second), (2, rest)]),
        ((), (a,)): row([(eos, 1.0)]),
        ((), (b,)): row([(eos, 1.0)]),
        ((), (2,)): row([(eos, 1.0)]),
    }
    guide = TabularModel(vocab, guide_rows)
    return lm, guide
