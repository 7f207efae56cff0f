"""Behavioral item embeddings: training, evaluation and hyper-parameter optimization."""

from songvec.corpus import (
    Catalog,
    SequenceDataset,
    Vocabulary,
    build_vocabulary,
    load_catalog,
    load_sequences,
    split,
    subsample,
)
from songvec.trainer import (
    EmbeddingSpace,
    HyperParams,
    NegativeSamplingTable,
    build_negative_table,
    gradient,
    sgns_pair_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "SequenceDataset",
    "Vocabulary",
    "build_vocabulary",
    "load_catalog",
    "load_sequences",
    "split",
    "subsample",
    "EmbeddingSpace",
    "HyperParams",
    "NegativeSamplingTable",
    "build_negative_table",
    "gradient",
    "sgns_pair_loss",
    "train",
]
