import numpy as np
import pytest

from sapo import Lattice, Sequence, build_model


def random_lattice(rng, T=None, K=None, lo=-2.0, hi=2.0):
    if T is None:
        T = int(rng.integers(1, 9))
    if K is None:
        K = int(rng.integers(1, 5))
    return Lattice(
        emit=rng.uniform(lo, hi, size=(T, K)),
        trans=rng.uniform(lo, hi, size=(K, K)),
    )


def word_corpus(rows):
    """Sequences from [(words, tags), ...] with single-column tokens."""
    return [
        Sequence(tokens=[(w,) for w in words.split()], gold=tags.split())
        for words, tags in rows
    ]


def random_word_model(rng, n_seqs=6, max_len=5, vocab=("a", "b", "c", "d"), tags=("X", "Y", "Z"),
                      template_text="U00:%x[0,0]\nU01:%x[-1,0]\nB\n", randomize=True):
    """A small model over a random corpus, optionally with random weights."""
    seqs = []
    for _ in range(n_seqs):
        T = int(rng.integers(1, max_len + 1))
        words = [vocab[int(rng.integers(len(vocab)))] for _ in range(T)]
        gold = [tags[int(rng.integers(len(tags)))] for _ in range(T)]
        seqs.append(Sequence(tokens=[(w,) for w in words], gold=gold))
    # make sure every tag occurs so the tagset is full-sized
    seqs.append(Sequence(tokens=[(vocab[0],)] * len(tags), gold=list(tags)))
    model = build_model(seqs, template_text, 1)
    if randomize:
        model.weights[:] = rng.normal(scale=0.7, size=model.index.n_features)
    return model, seqs


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
