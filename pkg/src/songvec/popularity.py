"""Popularity-bucket HitRate analysis and play-prediction correlation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from songvec.corpus import Catalog
from songvec.metrics import QueryTargetPair, target_ranks
from songvec.neighbors import NeighborIndex
from songvec.trainer import EmbeddingSpace

logger = logging.getLogger(__name__)


@dataclass
class PopularityBuckets:
    """Bucket 0 holds the most-played songs; each bucket covers ~1/B of plays."""

    assignment: dict[int, int]
    n_buckets: int
    mass_per_bucket: list[float] = field(default_factory=list)


def bucketize(space: EmbeddingSpace, catalog: Catalog, n_buckets: int = 5) -> PopularityBuckets:
    """Assign each in-vocabulary song to a bucket by cumulative play-count mass.

    Songs are walked in descending play-count order (ties by ascending id);
    a song whose cumulative mass-before lies in [b/B, (b+1)/B) goes to bucket b.
    """
    ids = space.vocabulary.index_to_id
    plays = np.array([(catalog.get(sid).play_count if catalog.get(sid) else 0) for sid in ids],
                     dtype=np.float64)
    total = plays.sum()
    if total <= 0:
        raise ValueError("zero total plays")
    order = sorted(range(len(ids)), key=lambda i: (-plays[i], ids[i]))
    assignment: dict[int, int] = {}
    mass = np.zeros(n_buckets)
    cum_before = 0.0
    for i in order:
        b = min(int(cum_before / total * n_buckets), n_buckets - 1)
        assignment[i] = b
        mass[b] += plays[i] / total
        cum_before += plays[i]
    return PopularityBuckets(assignment=assignment, n_buckets=n_buckets,
                             mass_per_bucket=mass.tolist())


@dataclass
class BucketMatrix:
    hitrate: np.ndarray  # B x B, NaN where no pairs fell in the cell
    n_sampled: np.ndarray  # B x B int, pairs actually evaluated per cell

    def to_tsv(self, path: str | Path) -> None:
        """`query_bucket<TAB>target_bucket<TAB>hitrate<TAB>n`; missing cells as NA."""
        b = self.hitrate.shape[0]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("query_bucket\ttarget_bucket\thitrate\tn\n")
            for q in range(b):
                for t in range(b):
                    hr = self.hitrate[q, t]
                    val = "NA" if np.isnan(hr) else f"{hr:.6f}"
                    fh.write(f"{q}\t{t}\t{val}\t{int(self.n_sampled[q, t])}\n")

    def diagonal_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bucket\thitrate\tn\n")
            for b in range(self.hitrate.shape[0]):
                hr = self.hitrate[b, b]
                val = "NA" if np.isnan(hr) else f"{hr:.6f}"
                fh.write(f"{b}\t{val}\t{int(self.n_sampled[b, b])}\n")


def bucket_hitrate_matrix(
    space: EmbeddingSpace,
    pairs: list[QueryTargetPair],
    buckets: PopularityBuckets,
    samples_per_cell: int = 1000,
    k: int = 100,
    seed: int = 0,
    index: NeighborIndex | None = None,
) -> BucketMatrix:
    """HitRate per (query bucket, target bucket) cell over sampled pairs."""
    if not pairs:
        raise ValueError("empty pair list")
    b = buckets.n_buckets
    cells: dict[tuple[int, int], list[int]] = {}
    for pi, p in enumerate(pairs):
        bq = buckets.assignment.get(p.query)
        bt = buckets.assignment.get(p.target)
        if bq is None or bt is None:
            continue
        cells.setdefault((bq, bt), []).append(pi)
    rng = np.random.default_rng(seed)
    sampled: list[int] = []
    cell_of: list[tuple[int, int]] = []
    for cell in sorted(cells):
        members = cells[cell]
        take = min(samples_per_cell, len(members))
        chosen = rng.choice(len(members), size=take, replace=False)
        for j in sorted(int(c) for c in chosen):
            sampled.append(members[j])
            cell_of.append(cell)
    index = index or NeighborIndex(space)
    ranks = target_ranks(index, [pairs[i] for i in sampled])
    hits = (ranks >= 1) & (ranks <= k)
    hit_sum = np.zeros((b, b))
    n_sampled = np.zeros((b, b), dtype=np.int64)
    for hit, cell in zip(hits, cell_of):
        hit_sum[cell] += bool(hit)
        n_sampled[cell] += 1
    with np.errstate(invalid="ignore"):
        hitrate = np.where(n_sampled > 0, hit_sum / np.maximum(n_sampled, 1), np.nan)
    under = int(((n_sampled > 0) & (n_sampled < samples_per_cell)).sum())
    if under:
        logger.info("%d bucket cells under-filled (< %d pairs)", under, samples_per_cell)
    return BucketMatrix(hitrate=hitrate, n_sampled=n_sampled)


@dataclass(frozen=True)
class PlayPairObservation:
    seed_song: int
    recommended_song: int
    occurrences: int
    successful_plays: int

    def __post_init__(self):
        if not (0 <= self.successful_plays <= self.occurrences):
            raise ValueError("successful_plays must be in [0, occurrences]")

    @property
    def play_rate(self) -> float:
        return self.successful_plays / self.occurrences


def load_observations(path: str | Path, vocab) -> list[PlayPairObservation]:
    """TSV `seed_id recommended_id occurrences successes`; OOV rows skipped."""
    idx = vocab.id_to_index
    obs = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if header != ["seed_id", "recommended_id", "occurrences", "successes"]:
            raise ValueError(f"unexpected observation header: {header}")
        for line in fh:
            seed_id, rec_id, occ, succ = line.split()
            if seed_id in idx and rec_id in idx:
                obs.append(PlayPairObservation(idx[seed_id], idx[rec_id], int(occ), int(succ)))
    return obs


def save_observations(obs: list[PlayPairObservation], vocab, path: str | Path) -> None:
    ids = vocab.index_to_id
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed_id\trecommended_id\toccurrences\tsuccesses\n")
        for o in obs:
            fh.write(
                f"{ids[o.seed_song]}\t{ids[o.recommended_song]}\t"
                f"{o.occurrences}\t{o.successful_plays}\n"
            )


def _pair_similarities(space: EmbeddingSpace, obs: list[PlayPairObservation]) -> np.ndarray:
    vectors = space.vectors.astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    norms[norms == 0] = 1.0
    normalized = vectors / norms[:, None]
    a = np.array([o.seed_song for o in obs])
    b = np.array([o.recommended_song for o in obs])
    return np.einsum("ij,ij->i", normalized[a], normalized[b])


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def play_correlation(
    space: EmbeddingSpace,
    observations: list[PlayPairObservation],
    frequent_threshold: int = 100,
) -> tuple[float | None, float | None]:
    """Pearson r between play-rate and cosine similarity: (all pairs, frequent pairs)."""
    if len(observations) < 2:
        raise ValueError("need at least 2 observations")
    sims = _pair_similarities(space, observations)
    rates = np.array([o.play_rate for o in observations])
    r_all = _pearson(sims, rates)
    frequent = np.array([o.occurrences >= frequent_threshold for o in observations])
    r_frequent = _pearson(sims[frequent], rates[frequent]) if frequent.any() else None
    if r_all is None:
        logger.warning("Pearson r undefined (constant similarity or play-rate)")
    return r_all, r_frequent


def relative_play_rate_curve(
    observations: list[PlayPairObservation],
    space: EmbeddingSpace,
    quantization: int = 1,
) -> list[tuple[float, float, int]]:
    """Per similarity bin: play-rate relative to the 0.0 bin. Rows (bin, rate, n)."""
    if not observations:
        raise ValueError("no observations")
    sims = _pair_similarities(space, observations)
    rates = np.array([o.play_rate for o in observations])
    bins = np.round(sims, quantization) + 0.0  # normalize -0.0
    table = {}
    for b in sorted(set(bins)):
        mask = bins == b
        table[float(b)] = (float(rates[mask].mean()), int(mask.sum()))
    ref = table.get(0.0)
    if ref is None or ref[0] == 0.0:
        logger.warning("empty or zero reference bin at similarity 0.0; curve left unscaled")
        scale = 1.0
    else:
        scale = ref[0]
    return [(b, mean / scale, n) for b, (mean, n) in table.items()]


def save_curve(curve, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("similarity_bin\trelative_play_rate\tn\n")
        for b, rate, n in curve:
            fh.write(f"{b:.{6}f}\t{rate:.6f}\t{n}\n")
