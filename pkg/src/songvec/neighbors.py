"""Exact top-k cosine nearest-neighbor retrieval over an embedding space."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from songvec.trainer import EmbeddingSpace


@dataclass
class NeighborList:
    query: int
    neighbors: list[tuple[int, float]] = field(default_factory=list)
    error: str | None = None


class NeighborIndex:
    """Blocked exact scan over row-normalized vectors.

    Zero-norm rows (possible after budget-truncated training) are excluded
    from candidacy and flagged; querying one is an error.
    """

    def __init__(self, space: EmbeddingSpace):
        self.space = space
        vectors = space.vectors.astype(np.float32)
        norms = np.linalg.norm(vectors, axis=1)
        self.zero_norm = norms == 0.0
        safe = np.where(self.zero_norm, 1.0, norms)
        self.normalized = vectors / safe[:, None].astype(np.float32)

    def __len__(self) -> int:
        return self.normalized.shape[0]

    def similarities(self, query: int) -> np.ndarray:
        """Cosine similarity of every song to the query; excluded rows get -inf."""
        sims = self.normalized @ self.normalized[query]
        sims[self.zero_norm] = -np.inf
        sims[query] = -np.inf
        return sims

    def similarity_block(self, queries: np.ndarray) -> np.ndarray:
        sims = self.normalized[queries] @ self.normalized.T
        sims[:, self.zero_norm] = -np.inf
        sims[np.arange(len(queries)), queries] = -np.inf
        return sims

    def topk(self, query: int, k: int) -> NeighborList:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not (0 <= query < len(self)):
            raise KeyError(f"query index {query} out of range")
        if self.zero_norm[query]:
            raise ValueError(f"query index {query} has a zero-norm vector")
        sims = self.similarities(query)
        return NeighborList(query=query, neighbors=_select_topk(sims, k))

    def topk_batch(self, queries, k: int, block: int = 1024) -> list[NeighborList]:
        """Element-wise identical to topk; failures are reported per query."""
        results: list[NeighborList] = []
        valid: list[int] = []
        positions: dict[int, int] = {}
        for pos, q in enumerate(queries):
            q = int(q)
            if not (0 <= q < len(self)):
                results.append(NeighborList(query=q, error="unknown query index"))
            elif self.zero_norm[q]:
                results.append(NeighborList(query=q, error="zero-norm query vector"))
            else:
                results.append(NeighborList(query=q))
                positions[pos] = len(valid)
                valid.append(q)
        valid_arr = np.asarray(valid, dtype=np.int64)
        out_positions = [p for p in range(len(results)) if p in positions]
        for lo in range(0, len(valid_arr), block):
            qs = valid_arr[lo : lo + block]
            sims = self.similarity_block(qs)
            for row, pos in enumerate(out_positions[lo : lo + block]):
                results[pos].neighbors = _select_topk(sims[row], k)
        return results


def _select_topk(sims: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k by descending similarity, ties broken by ascending index."""
    n_candidates = int(np.isfinite(sims).sum())
    k_eff = min(k, n_candidates)
    if k_eff == 0:
        return []
    if k_eff < len(sims) // 2:
        # partition splits value ties arbitrarily; take everything at or
        # above the cutoff and resolve ties by exact sort below
        part = np.argpartition(-sims, k_eff - 1)[:k_eff]
        cutoff = sims[part].min()
        pool = np.flatnonzero(sims >= cutoff)
    else:
        pool = np.flatnonzero(np.isfinite(sims))
    order = np.lexsort((pool, -sims[pool]))
    chosen = pool[order][:k_eff]
    return [(int(i), float(sims[i])) for i in chosen]


def topk(space: EmbeddingSpace, query: int, k: int) -> NeighborList:
    return NeighborIndex(space).topk(query, k)


def topk_batch(space: EmbeddingSpace, queries, k: int) -> list[NeighborList]:
    return NeighborIndex(space).topk_batch(queries, k)


def dump_neighbors(index: NeighborIndex, queries, k: int, path: str | Path) -> None:
    """TSV `query_id<TAB>rank<TAB>neighbor_id<TAB>score` for offline inspection."""
    ids = index.space.vocabulary.index_to_id
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id\trank\tneighbor_id\tscore\n")
        for nl in index.topk_batch(queries, k):
            if nl.error:
                continue
            for rank, (idx, score) in enumerate(nl.neighbors, start=1):
                fh.write(f"{ids[nl.query]}\t{rank}\t{ids[idx]}\t{score:.6f}\n")
