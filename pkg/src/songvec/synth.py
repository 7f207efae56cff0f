"""Synthetic desk-scale corpora with planted genre blocks and Zipf popularity.

Each session is anchored at a Zipf-drawn song: every slot independently
draws a song near the anchor's popularity rank (or, with probability
pop_jump_prob, re-draws its rank from a steeper head-concentrated Zipf)
and stays inside the anchor's genre block with probability p_within. Sessions are exchangeable around their anchor,
so trained embeddings exhibit genre clustering and popularity-localized
next-song structure at any context distance. Play observations are generated
with a success probability affine in the cosine similarity of the given
embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from songvec.corpus import Catalog, CatalogEntry, SequenceDataset
from songvec.popularity import PlayPairObservation
from songvec.trainer import EmbeddingSpace


@dataclass(frozen=True)
class SynthConfig:
    n_songs: int = 5000
    n_genres: int = 8
    p_within: float = 0.9
    zipf_exponent: float = 1.0
    n_sequences: int = 50_000
    min_len: int = 8
    max_len: int = 16
    rank_window: int = 80  # scale of local moves in popularity-rank space
    pop_jump_prob: float = 0.3  # probability of re-drawing rank from the Zipf head
    jump_zipf_exponent: float = 1.2  # steeper Zipf for jump targets (head-heavy)
    artist_size: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.n_genres < 2 or self.n_songs < 2 * self.n_genres:
            raise ValueError("need >= 2 genres and enough songs per genre")
        if not (0.0 <= self.p_within <= 1.0):
            raise ValueError("p_within must be in [0, 1]")
        if self.min_len < 2 or self.max_len < self.min_len:
            raise ValueError("invalid sequence length range")


def song_id(rank: int) -> str:
    return f"s{rank:06d}"


def _genre_of(ranks: np.ndarray, g: int) -> np.ndarray:
    return ranks % g


def generate_corpus(cfg: SynthConfig) -> tuple[SequenceDataset, Catalog]:
    """Generate sequences and a catalog whose genre labels equal the planted blocks."""
    rng = np.random.default_rng(cfg.seed)
    v, g = cfg.n_songs, cfg.n_genres
    weights = 1.0 / np.arange(1, v + 1, dtype=np.float64) ** cfg.zipf_exponent
    zipf_p = weights / weights.sum()
    jump_weights = 1.0 / np.arange(1, v + 1, dtype=np.float64) ** cfg.jump_zipf_exponent
    jump_p = jump_weights / jump_weights.sum()

    n = cfg.n_sequences
    lengths = rng.integers(cfg.min_len, cfg.max_len + 1, size=n)
    anchors = rng.choice(v, p=zipf_p, size=n)
    anchor_genre = _genre_of(anchors, g)
    cols = np.empty((cfg.max_len, n), dtype=np.int64)
    for step in range(cfg.max_len):
        pop_jump = rng.random(n) < cfg.pop_jump_prob
        pop_ranks = rng.choice(v, p=jump_p, size=n)
        offsets = np.rint(rng.normal(0.0, cfg.rank_window, size=n)).astype(np.int64)
        local_ranks = np.clip(anchors + offsets, 0, v - 1)
        cand = np.where(pop_jump, pop_ranks, local_ranks)
        stay = rng.random(n) < cfg.p_within
        shift = rng.integers(1, g, size=n)
        target_genre = np.where(stay, anchor_genre, (anchor_genre + shift) % g)
        # snap the candidate rank to the nearest rank carrying the target genre
        j = np.clip((cand - target_genre) // g, 0, (v - 1 - target_genre) // g)
        cols[step] = target_genre + j * g

    sequences = []
    plays = np.zeros(v, dtype=np.int64)
    for i in range(n):
        length = int(lengths[i])
        row = cols[:length, i]
        np.add.at(plays, row, 1)
        sequences.append([song_id(int(r)) for r in row])

    entries = {}
    for r in range(v):
        if plays[r] == 0:
            continue
        genre = r % g
        artist_idx = (r // g) // cfg.artist_size
        entries[song_id(r)] = CatalogEntry(
            artist_id=f"a{genre}_{artist_idx}",
            genre_id=f"g{genre}",
            play_count=int(plays[r]),
        )
    return SequenceDataset(sequences=sequences), Catalog(entries=entries)


def generate_play_observations(
    space: EmbeddingSpace,
    n_pairs: int,
    seed: int = 0,
    base_rate: float = 0.2,
    similarity_weight: float = 0.5,
    max_occurrences: int = 1000,
) -> list[PlayPairObservation]:
    """Observations whose success probability is clip(base + weight * cosine, 0, 1).

    Occurrence counts follow a heavy-tailed (Pareto) distribution so that a
    small share of pairs crosses typical "frequent pair" thresholds.
    """
    rng = np.random.default_rng(seed)
    n_songs = space.vectors.shape[0]
    if n_songs < 2:
        raise ValueError("need at least 2 songs")
    seeds = rng.integers(0, n_songs, size=n_pairs)
    recs = rng.integers(0, n_songs - 1, size=n_pairs)
    recs = np.where(recs >= seeds, recs + 1, recs)

    vectors = space.vectors.astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    norms[norms == 0] = 1.0
    normalized = vectors / norms[:, None]
    cos = np.einsum("ij,ij->i", normalized[seeds], normalized[recs])
    prob = np.clip(base_rate + similarity_weight * cos, 0.0, 1.0)

    occurrences = np.minimum(
        (rng.pareto(1.0, size=n_pairs) + 1.0).astype(np.int64), max_occurrences
    )
    successes = rng.binomial(occurrences, prob)
    return [
        PlayPairObservation(int(s), int(r), int(o), int(x))
        for s, r, o, x in zip(seeds, recs, occurrences, successes)
    ]
