import numpy as np
import pytest

from exceptions import InvalidInput, MissingInputs
from tinylm.corpus import (VALSET_ROWS, check_vocab, decode, encode, load_corpus, split_corpus,
                           training_batch, validation_set)


def test_bundled_corpus_is_bytes(corpus):
    """The bundled corpus loads as byte ids below 256."""
    assert corpus.dtype == np.int64
    assert corpus.size > 1000
    assert 0 <= corpus.min() and corpus.max() < 256


def test_encode_decode():
    """Byte tokenisation round-trips UTF-8 text."""
    text = "harbour lights"
    assert decode(encode(text)) == text
    assert encode("A").tolist() == [65]


def test_split_holds_out_the_tail(corpus):
    """The validation region is the last max(10%, seq_len + 1) tokens."""
    train_tokens, val_tokens = split_corpus(corpus, 32)
    assert len(train_tokens) + len(val_tokens) == len(corpus)
    assert len(val_tokens) == max(int(len(corpus) * 0.1), 33)
    assert np.array_equal(val_tokens, corpus[-len(val_tokens):])


def test_split_rejects_short_corpus():
    """A corpus shorter than two windows cannot be split."""
    with pytest.raises(InvalidInput):
        split_corpus(np.arange(10), 8)


def test_validation_set_is_fixed(corpus):
    """The validation subset depends only on the seed."""
    _, val_tokens = split_corpus(corpus, 16)
    first = validation_set(val_tokens, 16, seed=3)
    second = validation_set(val_tokens, 16, seed=3)
    assert first.token_ids.shape == (VALSET_ROWS, 16)
    assert np.array_equal(first.token_ids, second.token_ids)
    assert not np.array_equal(first.token_ids, validation_set(val_tokens, 16, seed=4).token_ids)


def test_training_batches_depend_on_step(corpus):
    """Batches are reproducible per (seed, step) and differ between steps."""
    train_tokens, _ = split_corpus(corpus, 16)
    a = training_batch(train_tokens, 16, 4, seed=0, step=5)
    b = training_batch(train_tokens, 16, 4, seed=0, step=5)
    c = training_batch(train_tokens, 16, 4, seed=0, step=6)
    assert np.array_equal(a.token_ids, b.token_ids)
    assert not np.array_equal(a.token_ids, c.token_ids)


def test_missing_corpus_and_vocab(tmp_path, corpus):
    """A missing corpus file maps to exit code 4; bytes beyond the vocabulary are rejected."""
    with pytest.raises(MissingInputs) as exc_info:
        load_corpus(tmp_path / "nope.txt")
    assert exc_info.value.exit_code == 4
    with pytest.raises(InvalidInput):
        check_vocab(np.array([0, 40]), 32)
