"""Shared fixtures: tiny corpora and synthetic embedding spaces."""

import numpy as np
import pytest

from songvec.corpus import Catalog, CatalogEntry, SequenceDataset, Vocabulary, build_vocabulary, split
from songvec.trainer import EmbeddingSpace, HyperParams


def make_space(vectors, frequency=None) -> EmbeddingSpace:
    """Wrap a raw matrix in an EmbeddingSpace with ids s0, s1, ..."""
    vectors = np.asarray(vectors, dtype=np.float32)
    n = vectors.shape[0]
    if frequency is None:
        frequency = np.ones(n, dtype=np.int64)
    vocab = Vocabulary(
        index_to_id=[f"s{i}" for i in range(n)],
        frequency=np.asarray(frequency, dtype=np.int64),
    )
    return EmbeddingSpace(vectors=vectors, vocabulary=vocab, hyperparams=HyperParams())


def random_space(n: int, d: int, seed: int = 0) -> EmbeddingSpace:
    rng = np.random.default_rng(seed)
    return make_space(rng.standard_normal((n, d)))


@pytest.fixture
def block_corpus():
    """Two song blocks; sequences never cross blocks. 50 sequences per block."""
    rng = np.random.default_rng(0)
    blocks = [[f"a{i}" for i in range(10)], [f"b{i}" for i in range(10)]]
    seqs = []
    for _ in range(50):
        for block in blocks:
            seqs.append([block[j] for j in rng.integers(0, len(block), size=12)])
    ds = SequenceDataset(sequences=seqs)
    ds = split(ds, (0.9, 0.05, 0.05), seed=3)
    vocab = build_vocabulary(ds, min_count=1)
    return ds, vocab


@pytest.fixture
def small_catalog():
    entries = {}
    for i in range(20):
        sid = f"s{i}"
        entries[sid] = CatalogEntry(artist_id=f"art{i // 5}", genre_id=f"g{i % 4}", play_count=100 - i)
    return Catalog(entries=entries)
