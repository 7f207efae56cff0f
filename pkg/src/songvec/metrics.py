"""Next-song prediction metrics (HitRate@k, NDCG@k), VRC and local coherence."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from songvec.corpus import Catalog, SequenceDataset, Vocabulary, VALIDATION
from songvec.neighbors import NeighborIndex
from songvec.trainer import EmbeddingSpace

logger = logging.getLogger(__name__)

IN_SET, OUT_OF_SET = "in-set", "out-of-set"


@dataclass(frozen=True)
class QueryTargetPair:
    query: int
    target: int
    origin: str


@dataclass
class MetricReport:
    hitrate: float = 0.0
    ndcg: float = 0.0
    hitrate_inset: float | None = None
    ndcg_inset: float | None = None
    hitrate_outset: float | None = None
    ndcg_outset: float | None = None
    vrc_genre: float | None = None
    vrc_artist: float | None = None
    hardneg: float | None = None
    coherence_genre: float | None = None
    coherence_artist: float | None = None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


def make_inset_pairs(
    ds: SequenceDataset, vocab: Vocabulary
) -> tuple[list[QueryTargetPair], int]:
    """One (second-to-last, last) pair per training sequence.

    The trainer must have been run with mask_last=True for these targets to be
    leak-free. Pairs touching out-of-vocabulary songs are dropped and counted.
    """
    train = ds.train_sequences if ds.split_labels is not None else ds.sequences
    if not train:
        raise ValueError("train split is empty")
    idx = vocab.id_to_index
    pairs, dropped = [], 0
    for seq in train:
        q, t = seq[-2], seq[-1]
        if q in idx and t in idx:
            pairs.append(QueryTargetPair(idx[q], idx[t], IN_SET))
        else:
            dropped += 1
    return pairs, dropped


def make_outset_pairs(
    ds: SequenceDataset,
    vocab: Vocabulary,
    split_label: str = VALIDATION,
    pair_mode: str = "adjacent",
) -> tuple[list[QueryTargetPair], int]:
    """Ordered pairs from held-out sequences, adjacent (default) or all-ordered."""
    if pair_mode not in ("adjacent", "all"):
        raise ValueError("pair_mode must be 'adjacent' or 'all'")
    held_out = ds.subset(split_label)
    if not held_out:
        raise ValueError(f"{split_label} split is empty")
    idx = vocab.id_to_index
    pairs, dropped = [], 0
    for seq in held_out:
        if pair_mode == "adjacent":
            candidates = zip(seq, seq[1:])
        else:
            candidates = ((seq[i], seq[j]) for i in range(len(seq)) for j in range(i + 1, len(seq)))
        for q, t in candidates:
            if q in idx and t in idx:
                pairs.append(QueryTargetPair(idx[q], idx[t], OUT_OF_SET))
            else:
                dropped += 1
    return pairs, dropped


def target_ranks(
    index: NeighborIndex, pairs: list[QueryTargetPair], block: int = 512
) -> np.ndarray:
    """1-based rank of each pair's target among the query's neighbors, 0 if unranked.

    Ranks follow the retrieval tie-break (descending similarity, then
    ascending index). A pair whose query has a zero-norm vector, or whose
    target is excluded from candidacy, gets rank 0.
    """
    ranks = np.zeros(len(pairs), dtype=np.int64)
    queries = np.asarray([p.query for p in pairs], dtype=np.int64)
    targets = np.asarray([p.target for p in pairs], dtype=np.int64)
    for lo in range(0, len(pairs), block):
        qs = queries[lo : lo + block]
        ts = targets[lo : lo + block]
        sims = index.similarity_block(qs)
        s_t = sims[np.arange(len(qs)), ts]
        valid = np.isfinite(s_t) & ~index.zero_norm[qs]
        better = (sims > s_t[:, None]).sum(axis=1)
        tied_before = ((sims == s_t[:, None]) & (np.arange(sims.shape[1])[None, :] < ts[:, None])).sum(axis=1)
        r = 1 + better + tied_before
        ranks[lo : lo + block] = np.where(valid, r, 0)
    return ranks


def hitrate_ndcg(
    index: NeighborIndex, pairs: list[QueryTargetPair], k: int = 100
) -> tuple[float, float]:
    """Mean hit and single-relevant-item NDCG over pairs at cutoff k."""
    if not pairs:
        raise ValueError("empty pair list")
    ranks = target_ranks(index, pairs)
    hits = (ranks >= 1) & (ranks <= k)
    ndcg = np.where(hits, 1.0 / np.log2(np.maximum(ranks, 1) + 1.0), 0.0)
    return float(hits.mean()), float(ndcg.mean())


def vrc(space: EmbeddingSpace, labels: dict[int, str]) -> float:
    """Calinski-Harabasz variance ratio over labeled, in-vocabulary songs."""
    items = sorted(labels.items())
    points = space.vectors[[i for i, _ in items]].astype(np.float64)
    classes = [c for _, c in items]
    uniq = sorted(set(classes))
    n, n_classes = len(points), len(uniq)
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n <= n_classes:
        raise ValueError("need more points than classes")
    overall = points.mean(axis=0)
    ss_b = 0.0
    ss_w = 0.0
    class_to_rows: dict[str, list[int]] = {c: [] for c in uniq}
    for row, c in enumerate(classes):
        class_to_rows[c].append(row)
    for c in uniq:
        cluster = points[class_to_rows[c]]
        centroid = cluster.mean(axis=0)
        ss_b += len(cluster) * float(((centroid - overall) ** 2).sum())
        ss_w += float(((cluster - centroid) ** 2).sum())
    if ss_w == 0.0:
        logger.warning("within-cluster dispersion is zero; VRC reported as +inf")
        return math.inf
    return (ss_b / (n_classes - 1)) / (ss_w / (n - n_classes))


def catalog_labels(space: EmbeddingSpace, catalog: Catalog, mode: str) -> dict[int, str]:
    """Class label per vocabulary index for in-catalog songs; others excluded."""
    if mode not in ("genre", "artist"):
        raise ValueError("mode must be 'genre' or 'artist'")
    labels = {}
    for i, sid in enumerate(space.vocabulary.index_to_id):
        entry = catalog.get(sid)
        if entry is not None:
            labels[i] = entry.genre_id if mode == "genre" else entry.artist_id
    return labels


@dataclass(frozen=True)
class CoherenceSamplingPlan:
    """Sampling thresholds for local coherence; defaults are industrial-scale."""

    n_neighbors: int = 50
    # genre mode
    n_songs: int = 500
    min_plays: int = 10_000
    top_genres: int = 10
    # artist mode
    n_artists: int = 125
    min_songs_per_artist: int = 25
    songs_per_artist: int = 5
    popularity_strata: int = 5


@dataclass
class CoherenceResult:
    value: float
    n_queries: int
    excluded: int
    strata_sizes: dict


def _sample_genre_queries(
    space: EmbeddingSpace, catalog: Catalog, plan: CoherenceSamplingPlan, rng: np.random.Generator
) -> tuple[list[int], dict]:
    by_genre: dict[str, list[int]] = {}
    genre_plays: dict[str, int] = {}
    for i, sid in enumerate(space.vocabulary.index_to_id):
        entry = catalog.get(sid)
        if entry is None:
            continue
        genre_plays[entry.genre_id] = genre_plays.get(entry.genre_id, 0) + entry.play_count
        if entry.play_count >= plan.min_plays:
            by_genre.setdefault(entry.genre_id, []).append(i)
    top = sorted(genre_plays, key=lambda g: (-genre_plays[g], g))[: plan.top_genres]
    per_genre = max(1, plan.n_songs // max(1, len(top)))
    queries: list[int] = []
    strata: dict[str, int] = {}
    for g in top:
        pool = by_genre.get(g, [])
        take = min(per_genre, len(pool))
        if take:
            chosen = rng.choice(len(pool), size=take, replace=False)
            queries.extend(pool[int(j)] for j in chosen)
        strata[g] = take
    return queries, {"requested": plan.n_songs, "per_stratum": strata}


def _sample_artist_queries(
    space: EmbeddingSpace, catalog: Catalog, plan: CoherenceSamplingPlan, rng: np.random.Generator
) -> tuple[list[int], dict]:
    songs_by_artist: dict[str, list[int]] = {}
    artist_plays: dict[str, int] = {}
    for i, sid in enumerate(space.vocabulary.index_to_id):
        entry = catalog.get(sid)
        if entry is None:
            continue
        songs_by_artist.setdefault(entry.artist_id, []).append(i)
        artist_plays[entry.artist_id] = artist_plays.get(entry.artist_id, 0) + entry.play_count
    eligible = [a for a, songs in songs_by_artist.items() if len(songs) >= plan.min_songs_per_artist]
    eligible.sort(key=lambda a: (-artist_plays[a], a))
    n_strata = min(plan.popularity_strata, max(1, len(eligible)))
    per_stratum = max(1, plan.n_artists // n_strata)
    queries: list[int] = []
    strata: dict[str, int] = {}
    chunks = np.array_split(np.arange(len(eligible)), n_strata)
    n_artists_sampled = 0
    for s, chunk in enumerate(chunks):
        take = min(per_stratum, len(chunk))
        strata[f"stratum_{s}"] = take
        if not take:
            continue
        chosen = rng.choice(len(chunk), size=take, replace=False)
        for j in chosen:
            artist = eligible[int(chunk[int(j)])]
            songs = songs_by_artist[artist]
            n_songs = min(plan.songs_per_artist, len(songs))
            picked = rng.choice(len(songs), size=n_songs, replace=False)
            queries.extend(songs[int(p)] for p in picked)
            n_artists_sampled += 1
    return queries, {
        "requested": plan.n_artists,
        "artists_sampled": n_artists_sampled,
        "per_stratum": strata,
    }


def local_coherence(
    space: EmbeddingSpace,
    catalog: Catalog,
    mode: str,
    plan: CoherenceSamplingPlan | None = None,
    seed: int = 0,
    index: NeighborIndex | None = None,
) -> CoherenceResult:
    """Mean fraction of a query's nearest neighbors sharing its genre/artist."""
    plan = plan or CoherenceSamplingPlan()
    rng = np.random.default_rng(seed)
    if mode == "genre":
        queries, strata = _sample_genre_queries(space, catalog, plan, rng)
        requested = plan.n_songs
    elif mode == "artist":
        queries, strata = _sample_artist_queries(space, catalog, plan, rng)
        requested = plan.n_artists * plan.songs_per_artist
    else:
        raise ValueError("mode must be 'genre' or 'artist'")
    if len(queries) < 0.5 * requested:
        raise ValueError(
            f"too few songs satisfy the coherence plan: got {len(queries)} of {requested}; "
            f"strata: {strata}"
        )
    labels = catalog_labels(space, catalog, mode)
    index = index or NeighborIndex(space)
    fractions = []
    excluded = 0
    for result in index.topk_batch(queries, plan.n_neighbors):
        if result.error or result.query not in labels:
            excluded += 1
            continue
        cls = labels[result.query]
        if not result.neighbors:
            excluded += 1
            continue
        same = sum(1 for i, _ in result.neighbors if labels.get(i) == cls)
        fractions.append(same / len(result.neighbors))
    if not fractions:
        raise ValueError("no usable coherence queries")
    return CoherenceResult(
        value=float(np.mean(fractions)),
        n_queries=len(fractions),
        excluded=excluded,
        strata_sizes=strata,
    )


class Evaluator:
    """Precomputes query-target pairs once and evaluates embedding spaces.

    The reported hitrate/ndcg are the averages of the in-set and out-of-set
    values when both pair sets are available.
    """

    def __init__(
        self,
        ds: SequenceDataset,
        vocab: Vocabulary,
        catalog: Catalog | None = None,
        k: int = 100,
        split_label: str = VALIDATION,
        pair_mode: str = "adjacent",
        max_inset_pairs: int | None = 10_000,
        max_outset_pairs: int | None = None,
        include_inset: bool = True,
        hard_negatives=None,
        coherence_plan: CoherenceSamplingPlan | None = None,
        coherence_modes: tuple = (),
        seed: int = 0,
    ):
        self.vocab = vocab
        self.catalog = catalog
        self.k = k
        self.hard_negatives = hard_negatives
        self.coherence_plan = coherence_plan
        self.coherence_modes = coherence_modes
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.counts: dict[str, int] = {}
        self.inset_pairs: list[QueryTargetPair] = []
        if include_inset:
            pairs, dropped = make_inset_pairs(ds, vocab)
            self.counts["inset_dropped"] = dropped
            self.inset_pairs = _cap_pairs(pairs, max_inset_pairs, rng)
        pairs, dropped = make_outset_pairs(ds, vocab, split_label, pair_mode)
        self.counts["outset_dropped"] = dropped
        self.outset_pairs = _cap_pairs(pairs, max_outset_pairs, rng)
        self.counts["inset_pairs"] = len(self.inset_pairs)
        self.counts["outset_pairs"] = len(self.outset_pairs)

    def evaluate(self, space: EmbeddingSpace) -> MetricReport:
        index = NeighborIndex(space)
        report = MetricReport(counts=dict(self.counts))
        rates, ndcgs = [], []
        if self.inset_pairs:
            hr, nd = hitrate_ndcg(index, self.inset_pairs, self.k)
            report.hitrate_inset, report.ndcg_inset = hr, nd
            rates.append(hr)
            ndcgs.append(nd)
        if self.outset_pairs:
            hr, nd = hitrate_ndcg(index, self.outset_pairs, self.k)
            report.hitrate_outset, report.ndcg_outset = hr, nd
            rates.append(hr)
            ndcgs.append(nd)
        if rates:
            report.hitrate = float(np.mean(rates))
            report.ndcg = float(np.mean(ndcgs))
        if self.catalog is not None:
            for mode, attr in (("genre", "vrc_genre"), ("artist", "vrc_artist")):
                labels = catalog_labels(space, self.catalog, mode)
                if len(set(labels.values())) >= 2 and len(labels) > len(set(labels.values())):
                    setattr(report, attr, vrc(space, labels))
            for mode in self.coherence_modes:
                result = local_coherence(
                    space, self.catalog, mode, self.coherence_plan, self.seed, index
                )
                setattr(report, f"coherence_{mode}", result.value)
        if self.hard_negatives is not None and len(self.hard_negatives):
            from songvec.hardneg import hardneg_metric

            queries = sorted({p.query for p in self.inset_pairs + self.outset_pairs})
            report.hardneg = hardneg_metric(index, self.hard_negatives, queries, self.k)
        return report


def _cap_pairs(pairs: list[QueryTargetPair], cap: int | None, rng) -> list[QueryTargetPair]:
    if cap is None or len(pairs) <= cap:
        return pairs
    chosen = rng.choice(len(pairs), size=cap, replace=False)
    chosen.sort()
    return [pairs[int(i)] for i in chosen]
