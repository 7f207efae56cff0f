"""Chi-squared bigram mining of hard-negative song pairs and the HardNeg metric."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from songvec.corpus import SequenceDataset, Vocabulary
from songvec.neighbors import NeighborIndex

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_FACTOR = 1e-7
DEFAULT_MIN_COOCCURRENCE = 5


def _key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i <= j else (j, i)


@dataclass
class BigramStats:
    """Adjacent unordered bigram counts over training sequences.

    occurrence[i] counts the bigram slots song i participates in, so the 2x2
    contingency margins are consistent with total_bigrams. total_tokens is the
    plain token count, kept for the alternate threshold base.
    """

    pair_counts: dict[tuple[int, int], int]
    occurrence: dict[int, int]
    total_bigrams: int
    total_tokens: int = 0


def collect_bigrams(ds: SequenceDataset, vocab: Vocabulary) -> BigramStats:
    """Count adjacent unordered pairs over the training split."""
    train = ds.train_sequences if ds.split_labels is not None else ds.sequences
    if not train:
        raise ValueError("train split is empty")
    pair_counts: Counter = Counter()
    occurrence: Counter = Counter()
    total_tokens = 0
    for seq in train:
        encoded = vocab.encode(seq)
        total_tokens += len(encoded)
        for a, b in zip(encoded, encoded[1:]):
            pair_counts[_key(a, b)] += 1
            occurrence[a] += 1
            occurrence[b] += 1
    return BigramStats(
        pair_counts=dict(pair_counts),
        occurrence=dict(occurrence),
        total_bigrams=sum(pair_counts.values()),
        total_tokens=total_tokens,
    )


def chi_squared(stats: BigramStats, pair: tuple[int, int]) -> float:
    """2x2 contingency statistic for an unordered song pair.

    Degenerate margins (any marginal zero) yield 0 with a warning.
    """
    i, j = pair
    n = stats.total_bigrams
    o11 = stats.pair_counts.get(_key(i, j), 0)
    o12 = stats.occurrence.get(i, 0) - o11
    o21 = stats.occurrence.get(j, 0) - o11
    o22 = n - o11 - o12 - o21
    r1, r2 = o11 + o12, o21 + o22
    c1, c2 = o11 + o21, o12 + o22
    if r1 <= 0 or r2 <= 0 or c1 <= 0 or c2 <= 0:
        logger.warning("degenerate contingency margins for pair %s; X^2 set to 0", (i, j))
        return 0.0
    det = float(o11) * o22 - float(o12) * o21
    return n * det * det / (float(r1) * r2 * c1 * c2)


@dataclass
class HardNegativeSet:
    """Unordered pairs with co-occurrence >= min_cooccurrence and X^2 < threshold."""

    pairs: set[tuple[int, int]]
    threshold_used: float
    min_cooccurrence_used: int
    per_song: dict[int, set[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.per_song:
            for a, b in self.pairs:
                self.per_song.setdefault(a, set()).add(b)
                self.per_song.setdefault(b, set()).add(a)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def mean_per_song(self) -> float:
        if not self.per_song:
            return 0.0
        return 2.0 * len(self.pairs) / len(self.per_song)


def default_threshold(stats: BigramStats, base: str = "slots") -> float:
    """1e-7 times the sum of song occurrences (bigram slots, or raw tokens)."""
    if base == "slots":
        total = sum(stats.occurrence.values())
    elif base == "tokens":
        total = stats.total_tokens
    else:
        raise ValueError("threshold base must be 'slots' or 'tokens'")
    return DEFAULT_THRESHOLD_FACTOR * total


def mine_hard_negatives(
    stats: BigramStats,
    threshold: float | None = None,
    min_cooccurrence: int = DEFAULT_MIN_COOCCURRENCE,
    threshold_base: str = "slots",
) -> HardNegativeSet:
    """Pairs co-occurring often whose X^2 stays below the significance threshold."""
    if not stats.pair_counts:
        raise ValueError("empty bigram statistics")
    if threshold is None:
        threshold = default_threshold(stats, threshold_base)
    mined = set()
    for (a, b), count in stats.pair_counts.items():
        if a == b or count < min_cooccurrence:
            continue
        if chi_squared(stats, (a, b)) < threshold:
            mined.add((a, b))
    result = HardNegativeSet(
        pairs=mined, threshold_used=threshold, min_cooccurrence_used=min_cooccurrence
    )
    logger.info(
        "mined %d hard-negative pairs (%.2f per participating song)",
        len(mined),
        result.mean_per_song,
    )
    return result


def hardneg_metric(
    index: NeighborIndex, hns: HardNegativeSet, queries, k: int = 100
) -> float:
    """Mean proportion of hard negatives among the top-k neighbors of each query."""
    queries = list(queries)
    if not queries:
        raise ValueError("empty query set")
    fractions = []
    for result in index.topk_batch(queries, k):
        if result.error:
            continue
        bad = hns.per_song.get(result.query, ())
        hits = sum(1 for i, _ in result.neighbors if i in bad)
        fractions.append(hits / k)
    if not fractions:
        raise ValueError("no usable queries")
    return float(np.mean(fractions))


def save_hard_negatives(
    hns: HardNegativeSet, stats: BigramStats, vocab: Vocabulary, path: str | Path
) -> None:
    """TSV `song_a<TAB>song_b<TAB>cooccurrence<TAB>chi2`; re-loadable to skip mining."""
    ids = vocab.index_to_id
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("song_a\tsong_b\tcooccurrence\tchi2\n")
        for a, b in sorted(hns.pairs):
            count = stats.pair_counts[(a, b)]
            fh.write(f"{ids[a]}\t{ids[b]}\t{count}\t{chi_squared(stats, (a, b)):.6g}\n")


def load_hard_negatives(
    path: str | Path, vocab: Vocabulary, threshold: float = 0.0, min_cooccurrence: int = 0
) -> HardNegativeSet:
    idx = vocab.id_to_index
    pairs = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("song_a"):
            raise ValueError(f"not a hard-negative dump: {path}")
        for line in fh:
            a, b, _, _ = line.rstrip("\n").split("\t")
            if a in idx and b in idx:
                pairs.add(_key(idx[a], idx[b]))
    return HardNegativeSet(
        pairs=pairs, threshold_used=threshold, min_cooccurrence_used=min_cooccurrence
    )
