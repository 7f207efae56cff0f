"""Sequence/catalog ingestion, train/val/test splitting, subsampling and vocabulary building."""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAIN, VALIDATION, TEST = "train", "validation", "test"
SPLITS = (TRAIN, VALIDATION, TEST)


@dataclass(frozen=True)
class CatalogEntry:
    artist_id: str
    genre_id: str
    play_count: int


@dataclass
class Catalog:
    """song-id -> (artist, primary genre, total play count) mapping."""

    entries: dict[str, CatalogEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, song_id: str) -> CatalogEntry | None:
        return self.entries.get(song_id)


@dataclass
class SequenceDataset:
    """Ordered play sequences with optional per-sequence split labels.

    Sequences of length < 2 are never stored; they carry no adjacency signal
    and are dropped at load time (``dropped`` keeps the count).
    """

    sequences: list[list[str]]
    split_labels: list[str] | None = None
    seed: int | None = None
    dropped: int = 0

    def __post_init__(self):
        if self.split_labels is not None and len(self.split_labels) != len(self.sequences):
            raise ValueError("split_labels length must match sequences")

    def __len__(self) -> int:
        return len(self.sequences)

    def indices(self, label: str) -> list[int]:
        if self.split_labels is None:
            raise ValueError("dataset has no split labels; call split() first")
        return [i for i, lab in enumerate(self.split_labels) if lab == label]

    def subset(self, label: str) -> list[list[str]]:
        return [self.sequences[i] for i in self.indices(label)]

    @property
    def train_sequences(self) -> list[list[str]]:
        return self.subset(TRAIN)

    def write_split_manifest(self, path: str | Path) -> None:
        """TSV `sequence_index<TAB>split` for reproducibility audits."""
        if self.split_labels is None:
            raise ValueError("dataset has no split labels")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sequence_index\tsplit\n")
            for i, lab in enumerate(self.split_labels):
                fh.write(f"{i}\t{lab}\n")


@dataclass
class Vocabulary:
    """Bijection song-id <-> dense index, with training-split frequencies.

    Indices are assigned in descending-frequency order, ties broken
    lexicographically by song-id.
    """

    index_to_id: list[str]
    frequency: np.ndarray  # int64, per index
    id_to_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id_to_index:
            self.id_to_index = {sid: i for i, sid in enumerate(self.index_to_id)}

    def __len__(self) -> int:
        return len(self.index_to_id)

    def __contains__(self, song_id: str) -> bool:
        return song_id in self.id_to_index

    @property
    def total_events(self) -> int:
        return int(self.frequency.sum())

    def encode(self, sequence: list[str]) -> list[int]:
        """Map tokens to indices, skipping out-of-vocabulary tokens."""
        idx = self.id_to_index
        return [idx[t] for t in sequence if t in idx]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("song_id\tfrequency\n")
            for i, sid in enumerate(self.index_to_id):
                fh.write(f"{sid}\t{int(self.frequency[i])}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        ids, freqs = [], []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("song_id"):
                raise ValueError(f"not a vocabulary file: {path}")
            for line in fh:
                sid, freq = line.rstrip("\n").split("\t")
                ids.append(sid)
                freqs.append(int(freq))
        return cls(index_to_id=ids, frequency=np.asarray(freqs, dtype=np.int64))


def load_sequences(path: str | Path) -> SequenceDataset:
    """Read one whitespace-separated sequence per line; `#` lines are comments.

    Lines with fewer than 2 tokens are dropped and counted.
    """
    path = Path(path)
    sequences: list[list[str]] = []
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 2:
                dropped += 1
                continue
            sequences.append(tokens)
    if not sequences:
        raise ValueError(f"zero usable sequences in {path}")
    return SequenceDataset(sequences=sequences, dropped=dropped)


def load_catalog(path: str | Path) -> Catalog:
    """Read TSV with header `song_id artist_id genre_id play_count`."""
    entries: dict[str, CatalogEntry] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        expected = ["song_id", "artist_id", "genre_id", "play_count"]
        if header != expected:
            raise ValueError(f"catalog header must be {expected}, got {header}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            song_id, artist_id, genre_id, play_count = parts
            count = int(play_count)
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative play count")
            entries[song_id] = CatalogEntry(artist_id, genre_id, count)
    return Catalog(entries=entries)


def _split_counts(n: int, ratios: tuple[float, float, float]) -> list[int]:
    # Largest-remainder apportionment; then guarantee every split non-empty.
    floors = [int(np.floor(r * n)) for r in ratios]
    remainders = [r * n - f for r, f in zip(ratios, floors)]
    short = n - sum(floors)
    for i in sorted(range(3), key=lambda i: -remainders[i])[:short]:
        floors[i] += 1
    for i in range(3):
        if floors[i] == 0:
            donor = int(np.argmax(floors))
            floors[donor] -= 1
            floors[i] += 1
    return floors


def split(
    ds: SequenceDataset,
    ratios: tuple[float, float, float] = (0.98, 0.01, 0.01),
    seed: int = 0,
) -> SequenceDataset:
    """Assign train/validation/test labels by seeded sampling without replacement."""
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    n = len(ds.sequences)
    if n < 3:
        raise ValueError("fewer sequences than 3: cannot populate all splits")
    counts = _split_counts(n, ratios)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    labels = [""] * n
    pos = 0
    for label, count in zip(SPLITS, counts):
        for i in order[pos : pos + count]:
            labels[int(i)] = label
        pos += count
    return SequenceDataset(
        sequences=ds.sequences, split_labels=labels, seed=seed, dropped=ds.dropped
    )


def subsample(ds: SequenceDataset, rate: float, seed: int = 0) -> SequenceDataset:
    """Keep round(rate * n_train) training sequences; validation/test untouched.

    A single seeded permutation with prefix truncation makes smaller rates
    subsets of larger rates at the same seed.
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError("rate must be in (0, 1]")
    if ds.split_labels is None:
        raise ValueError("dataset has no split labels; call split() first")
    train_idx = ds.indices(TRAIN)
    n_keep = int(round(rate * len(train_idx)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train_idx))
    kept = {train_idx[int(i)] for i in perm[:n_keep]}
    sequences, labels = [], []
    for i, (seq, lab) in enumerate(zip(ds.sequences, ds.split_labels)):
        if lab == TRAIN and i not in kept:
            continue
        sequences.append(seq)
        labels.append(lab)
    return SequenceDataset(
        sequences=sequences, split_labels=labels, seed=ds.seed, dropped=ds.dropped
    )


def build_vocabulary(ds: SequenceDataset, min_count: int = 5) -> Vocabulary:
    """Count tokens over the training split and filter by min_count."""
    if ds.split_labels is not None:
        train = ds.train_sequences
    else:
        train = ds.sequences
    if not train:
        raise ValueError("dataset has no training sequences")
    counts = collections.Counter()
    for seq in train:
        counts.update(seq)
    items = [(sid, c) for sid, c in counts.items() if c >= min_count]
    if not items:
        raise ValueError(f"empty vocabulary after min_count={min_count} filtering")
    items.sort(key=lambda x: (-x[1], x[0]))
    ids = [sid for sid, _ in items]
    freqs = np.asarray([c for _, c in items], dtype=np.int64)
    return Vocabulary(index_to_id=ids, frequency=freqs)
