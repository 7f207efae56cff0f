"""Skip-gram negative-sampling training over item sequences.

Training runs a numba-compiled inner loop; multiple workers share the
parameter matrices without locks (benign races), so bit-determinism holds
only at workers=1.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from songvec import _kernels
from songvec.corpus import SequenceDataset, Vocabulary

LR_FLOOR_FRAC = 1e-4  # learning rate decays linearly from lambda to lambda * 1e-4
_CHUNK = 256  # sequences per kernel call; budget is checked between chunks


@dataclass(frozen=True)
class HyperParams:
    """The searched 5-tuple plus fixed training settings."""

    dim: int = 100
    window: int = 5
    ns_exponent: float = 0.75
    negatives: int = 5
    learning_rate: float = 0.025
    epochs: int = 5
    seed: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("dim, window and negatives must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


@dataclass
class NegativeSamplingTable:
    """Draws index i with probability frequency[i]^exponent / sum_j frequency[j]^exponent."""

    cumulative_weights: np.ndarray  # float64 cumsum of frequency**exponent
    exponent: float

    @property
    def probabilities(self) -> np.ndarray:
        w = np.diff(self.cumulative_weights, prepend=0.0)
        return w / self.cumulative_weights[-1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n) * self.cumulative_weights[-1]
        return np.searchsorted(self.cumulative_weights, u, side="right")


def build_negative_table(vocab: Vocabulary, exponent: float) -> NegativeSamplingTable:
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")
    weights = np.asarray(vocab.frequency, dtype=np.float64) ** exponent
    return NegativeSamplingTable(cumulative_weights=np.cumsum(weights), exponent=exponent)


def _softplus(x: np.ndarray | float) -> np.ndarray | float:
    return np.logaddexp(0.0, x)


def sgns_pair_loss(v_q: np.ndarray, v_t: np.ndarray, negs) -> float:
    """-log sigma(q.t) - sum_k log sigma(-q.k), numerically stable."""
    v_q = np.asarray(v_q, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if v_q.shape != v_t.shape:
        raise ValueError("dimension mismatch between query and target")
    loss = float(_softplus(-v_q @ v_t))
    for v_k in negs:
        v_k = np.asarray(v_k, dtype=np.float64)
        if v_k.shape != v_q.shape:
            raise ValueError("dimension mismatch in negatives")
        loss += float(_softplus(v_q @ v_k))
    return loss


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def gradient(v_q: np.ndarray, v_t: np.ndarray, negs):
    """Analytic gradients of sgns_pair_loss w.r.t. query, target and negatives."""
    v_q = np.asarray(v_q, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if v_q.shape != v_t.shape:
        raise ValueError("dimension mismatch between query and target")
    coef_t = _sigmoid(float(v_q @ v_t)) - 1.0
    grad_q = coef_t * v_t
    grad_t = coef_t * v_q
    grad_negs = []
    for v_k in negs:
        v_k = np.asarray(v_k, dtype=np.float64)
        if v_k.shape != v_q.shape:
            raise ValueError("dimension mismatch in negatives")
        s_k = _sigmoid(float(v_q @ v_k))
        grad_q = grad_q + s_k * v_k
        grad_negs.append(s_k * v_q)
    return grad_q, grad_t, grad_negs


@dataclass
class EmbeddingSpace:
    """Input vectors of a trained SGNS model, one row per vocabulary index."""

    vectors: np.ndarray  # float32, |V| x d
    vocabulary: Vocabulary
    hyperparams: HyperParams
    train_time: float = 0.0
    budget_truncated: bool = False
    epoch_losses: list = field(default_factory=list)  # mean pair loss per epoch

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.vocabulary):
            raise ValueError("row count must equal vocabulary size")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, song_id: str) -> np.ndarray:
        return self.vectors[self.vocabulary.id_to_index[song_id]]

    def save_text(self, path: str | Path) -> None:
        """Header `|V| d`, then `song_id v1 ... vd` with 6-decimal floats."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.vectors.shape[0]} {self.vectors.shape[1]}\n")
            for i, sid in enumerate(self.vocabulary.index_to_id):
                vals = " ".join(f"{v:.6f}" for v in self.vectors[i])
                fh.write(f"{sid} {vals}\n")

    def save_binary(self, path: str | Path) -> None:
        """Raw little-endian float32 matrix plus a JSON sidecar for exact round-trips."""
        path = Path(path)
        self.vectors.astype("<f4").tofile(path)
        sidecar = {
            "n_vectors": int(self.vectors.shape[0]),
            "dim": int(self.vectors.shape[1]),
            "dtype": "<f4",
            "song_ids": self.vocabulary.index_to_id,
            "frequency": [int(f) for f in self.vocabulary.frequency],
            "hyperparams": self.hyperparams.to_dict(),
            "train_time": self.train_time,
            "budget_truncated": self.budget_truncated,
            "epoch_losses": self.epoch_losses,
        }
        with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)


def load_embeddings_binary(path: str | Path) -> EmbeddingSpace:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json"), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    vectors = np.fromfile(path, dtype=sidecar["dtype"]).reshape(
        sidecar["n_vectors"], sidecar["dim"]
    )
    vocab = Vocabulary(
        index_to_id=sidecar["song_ids"],
        frequency=np.asarray(sidecar["frequency"], dtype=np.int64),
    )
    return EmbeddingSpace(
        vectors=vectors,
        vocabulary=vocab,
        hyperparams=HyperParams.from_dict(sidecar["hyperparams"]),
        train_time=sidecar["train_time"],
        budget_truncated=sidecar["budget_truncated"],
        epoch_losses=sidecar["epoch_losses"],
    )


def load_embeddings_text(path: str | Path) -> EmbeddingSpace:
    with open(path, encoding="utf-8") as fh:
        n, d = (int(x) for x in fh.readline().split())
        ids, rows = [], []
        for line in fh:
            parts = line.split()
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    vectors = np.asarray(rows, dtype=np.float32)
    if vectors.shape != (n, d):
        raise ValueError(f"embedding file shape {vectors.shape} does not match header ({n}, {d})")
    vocab = Vocabulary(index_to_id=ids, frequency=np.ones(n, dtype=np.int64))
    return EmbeddingSpace(vectors=vectors, vocabulary=vocab, hyperparams=HyperParams())


def _encode_training(
    ds: SequenceDataset, vocab: Vocabulary, mask_last: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Flatten in-vocabulary training token indices into (tokens, offsets)."""
    train = ds.train_sequences if ds.split_labels is not None else ds.sequences
    if not train:
        raise ValueError("empty training split")
    encoded = []
    for seq in train:
        if mask_last:
            seq = seq[:-1]
        idx = vocab.encode(seq)
        if len(idx) >= 2:
            encoded.append(idx)
    if not encoded:
        raise ValueError("no usable training sequences after vocabulary filtering")
    tokens = np.asarray([t for seq in encoded for t in seq], dtype=np.int32)
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in encoded])
    return tokens, offsets


def expected_pairs(lengths: np.ndarray, window: int) -> float:
    """Expected positive pairs per pass, with window length uniform in {1..L}.

    For a center at distance m from a sequence edge the expected one-sided
    context count is E[min(m, w)] = (sum_{w=1..L} min(m, w)) / L.
    """
    max_len = int(lengths.max())
    m = np.arange(max_len)
    f = np.minimum.outer(m, np.arange(1, window + 1)).sum(axis=1) / window
    prefix = np.concatenate([[0.0], np.cumsum(f)])
    counts = np.bincount(lengths, minlength=max_len + 1)
    total = 0.0
    for n, c in enumerate(counts):
        if c:
            total += c * 2.0 * prefix[n]
    return total


def train(
    ds: SequenceDataset,
    vocab: Vocabulary,
    hp: HyperParams,
    budget: float | None = None,
    workers: int = 1,
    mask_last: bool = False,
) -> EmbeddingSpace:
    """Train SGNS embeddings; stops at a sequence-chunk boundary if budget is exceeded."""
    start = time.monotonic()
    tokens, offsets = _encode_training(ds, vocab, mask_last)
    n_seq = len(offsets) - 1
    rng = np.random.default_rng(hp.seed)
    w_in = ((rng.random((len(vocab), hp.dim)) - 0.5) / hp.dim).astype(np.float32)
    w_out = np.zeros((len(vocab), hp.dim), dtype=np.float32)
    table = build_negative_table(vocab, hp.ns_exponent)
    cum = table.cumulative_weights

    if budget is not None and budget <= 0:
        return EmbeddingSpace(
            vectors=w_in,
            vocabulary=vocab,
            hyperparams=hp,
            train_time=time.monotonic() - start,
            budget_truncated=True,
        )

    lengths = np.diff(offsets).astype(np.int64)
    schedule = max(1.0, hp.epochs * expected_pairs(lengths, hp.window))
    deadline = None if budget is None else start + budget
    workers = max(1, min(workers, n_seq))
    pair_counts = np.zeros(workers, dtype=np.int64)
    truncated = [False]

    def run_worker(w: int):
        seed64 = (hp.seed * 0x9E3779B97F4A7C15 + (w + 1) * 0xD1B54A32D192ED03) % (1 << 64)
        state = np.array([seed64], dtype=np.uint64)
        shard = np.arange(w, n_seq, workers, dtype=np.int64)
        losses = []
        for _epoch in range(hp.epochs):
            loss_sum, n_pairs = 0.0, 0
            for lo in range(0, len(shard), _CHUNK):
                ls, npr = _kernels.train_chunk(
                    tokens,
                    offsets,
                    shard[lo : lo + _CHUNK],
                    w_in,
                    w_out,
                    cum,
                    hp.window,
                    hp.negatives,
                    hp.learning_rate,
                    LR_FLOOR_FRAC,
                    schedule,
                    pair_counts,
                    w,
                    state,
                )
                loss_sum += ls
                n_pairs += npr
                if deadline is not None and time.monotonic() > deadline:
                    truncated[0] = True
                if truncated[0]:
                    losses.append((loss_sum, n_pairs))
                    return losses
            losses.append((loss_sum, n_pairs))
        return losses

    if workers == 1:
        per_worker = [run_worker(0)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_worker = list(pool.map(run_worker, range(workers)))

    epoch_losses = []
    for e in range(hp.epochs):
        s = sum(losses[e][0] for losses in per_worker if e < len(losses))
        n = sum(losses[e][1] for losses in per_worker if e < len(losses))
        if n:
            epoch_losses.append(s / n)

    return EmbeddingSpace(
        vectors=w_in,
        vocabulary=vocab,
        hyperparams=hp,
        train_time=time.monotonic() - start,
        budget_truncated=truncated[0],
        epoch_losses=epoch_losses,
    )
