import numpy as np
import pytest

from songvec.corpus import SequenceDataset, Vocabulary
from songvec.hardneg import (
    BigramStats,
    HardNegativeSet,
    chi_squared,
    collect_bigrams,
    default_threshold,
    hardneg_metric,
    load_hard_negatives,
    mine_hard_negatives,
    save_hard_negatives,
)
from songvec.neighbors import NeighborIndex

from conftest import make_space, random_space


def _vocab(ids):
    return Vocabulary(index_to_id=list(ids), frequency=np.ones(len(ids), dtype=np.int64))


def _stats(pair_counts):
    occurrence = {}
    for (a, b), c in pair_counts.items():
        occurrence[a] = occurrence.get(a, 0) + c
        occurrence[b] = occurrence.get(b, 0) + c
    return BigramStats(
        pair_counts=pair_counts,
        occurrence=occurrence,
        total_bigrams=sum(pair_counts.values()),
        total_tokens=sum(pair_counts.values()) + len(pair_counts),
    )


class TestCollectBigrams:
    def test_aba(self):
        stats = collect_bigrams(SequenceDataset(sequences=[["a", "b", "a"]]), _vocab("ab"))
        assert stats.pair_counts == {(0, 1): 2}
        # slot accounting: each bigram contributes one slot per member
        assert stats.occurrence == {0: 2, 1: 2}
        assert stats.total_bigrams == 2

    def test_single_bigram(self):
        stats = collect_bigrams(SequenceDataset(sequences=[["a", "b"]]), _vocab("ab"))
        assert stats.total_bigrams == 1

    def test_two_sequences_accumulate(self):
        stats = collect_bigrams(
            SequenceDataset(sequences=[["a", "b"], ["a", "b"]]), _vocab("ab")
        )
        assert stats.pair_counts == {(0, 1): 2}

    def test_unordered(self):
        stats = collect_bigrams(
            SequenceDataset(sequences=[["a", "b"], ["b", "a"]]), _vocab("ab")
        )
        assert stats.pair_counts == {(0, 1): 2}

    def test_margins_consistent(self):
        rng = np.random.default_rng(0)
        seqs = [[f"t{j}" for j in rng.integers(0, 6, size=8)] for _ in range(30)]
        stats = collect_bigrams(SequenceDataset(sequences=seqs), _vocab([f"t{i}" for i in range(6)]))
        assert sum(stats.pair_counts.values()) == stats.total_bigrams
        assert sum(stats.occurrence.values()) == 2 * stats.total_bigrams


class TestChiSquared:
    def test_diagonal_association(self):
        # O = [[10,0],[0,10]], n=20 -> X^2 = 20*(100)^2/10^4 = 20
        stats = _stats({(0, 1): 10, (2, 3): 10})
        assert chi_squared(stats, (0, 1)) == pytest.approx(20.0, abs=1e-12)

    def test_independence_is_zero(self):
        # margins chosen so O11 = row*col/n exactly
        stats = BigramStats(
            pair_counts={(0, 1): 4},
            occurrence={0: 8, 1: 10},
            total_bigrams=20,
            total_tokens=40,
        )
        assert chi_squared(stats, (0, 1)) <= 1e-9 * 20

    def test_symmetry(self):
        stats = _stats({(0, 1): 7, (1, 2): 3, (0, 2): 2})
        assert chi_squared(stats, (0, 1)) == chi_squared(stats, (1, 0))

    def test_relabel_invariance(self):
        a = _stats({(0, 1): 7, (1, 2): 3, (0, 2): 2})
        b = _stats({(5, 9): 7, (9, 7): 3, (5, 7): 2})
        assert chi_squared(a, (0, 1)) == pytest.approx(chi_squared(b, (5, 9)), rel=1e-12)

    def test_degenerate_margins(self):
        # every bigram is {i, j}: one margin fills the table -> statistic 0
        stats = _stats({(0, 1): 10})
        assert chi_squared(stats, (0, 1)) == 0.0


class TestMining:
    def test_zero_threshold_empty(self):
        stats = _stats({(0, 1): 10, (2, 3): 10})
        assert len(mine_hard_negatives(stats, threshold=0.0)) == 0

    def test_huge_min_cooccurrence_empty(self):
        stats = _stats({(0, 1): 10, (2, 3): 10})
        assert len(mine_hard_negatives(stats, threshold=1e9, min_cooccurrence=10**9)) == 0

    def test_self_pairs_never_mined(self):
        stats = _stats({(0, 0): 50, (1, 2): 6})
        mined = mine_hard_negatives(stats, threshold=1e12, min_cooccurrence=1)
        assert (0, 0) not in mined.pairs

    def test_default_threshold_bases(self):
        stats = _stats({(0, 1): 10})
        assert default_threshold(stats, "slots") == pytest.approx(1e-7 * 20)
        assert default_threshold(stats, "tokens") == pytest.approx(1e-7 * stats.total_tokens)
        with pytest.raises(ValueError):
            default_threshold(stats, "plays")

    def test_planted_corpus_matches_contingency_oracle(self):
        # h0/h1 co-occur exactly as often as independence predicts -> mined;
        # p0/p1 only ever appear together -> real association, not mined.
        # Length-2 sequences give one bigram each, so the contingency table
        # for (h0, h1) is [[10, 20], [30, 60]]: determinant zero, X^2 = 0.
        seqs = (
            [["h0", "h1"]] * 10
            + [["h0", "x"]] * 20
            + [["h1", "y"]] * 30
            + [["x", "y"]] * 20
            + [["p0", "p1"]] * 40
        )
        ids = ["h0", "h1", "x", "y", "p0", "p1"]
        vocab = _vocab(ids)
        ds = SequenceDataset(sequences=seqs)
        stats = collect_bigrams(ds, vocab)
        threshold = default_threshold(stats)
        mined = mine_hard_negatives(stats, threshold=threshold, min_cooccurrence=5)

        # from-scratch contingency oracle over all counted pairs
        n = stats.total_bigrams
        expected = set()
        for (a, b), c in stats.pair_counts.items():
            if a == b or c < 5:
                continue
            o11 = c
            o12 = stats.occurrence[a] - c
            o21 = stats.occurrence[b] - c
            o22 = n - o11 - o12 - o21
            r1, r2, c1, c2 = o11 + o12, o21 + o22, o11 + o21, o12 + o22
            if min(r1, r2, c1, c2) <= 0:
                x2 = 0.0
            else:
                x2 = n * (o11 * o22 - o12 * o21) ** 2 / (r1 * r2 * c1 * c2)
            if x2 < threshold:
                expected.add((min(a, b), max(a, b)))
        assert mined.pairs == expected
        h = (vocab.id_to_index["h0"], vocab.id_to_index["h1"])
        p = (vocab.id_to_index["p0"], vocab.id_to_index["p1"])
        assert (min(h), max(h)) in mined.pairs
        assert (min(p), max(p)) not in mined.pairs


class TestHardnegMetric:
    def test_empty_set_is_zero(self):
        space = random_space(20, 4, seed=0)
        hns = HardNegativeSet(pairs=set(), threshold_used=1.0, min_cooccurrence_used=5)
        assert hardneg_metric(NeighborIndex(space), hns, range(20), k=5) == 0.0

    def test_all_neighbors_hard(self):
        space = random_space(6, 3, seed=1)
        pairs = {(i, j) for i in range(6) for j in range(i + 1, 6)}
        hns = HardNegativeSet(pairs=pairs, threshold_used=1.0, min_cooccurrence_used=5)
        assert hardneg_metric(NeighborIndex(space), hns, range(6), k=5) == 1.0

    def test_matches_brute_force_scan(self):
        space = random_space(100, 8, seed=3)
        rng = np.random.default_rng(5)
        pairs = set()
        while len(pairs) < 10:
            a, b = sorted(rng.integers(0, 100, size=2).tolist())
            if a != b:
                pairs.add((a, b))
        hns = HardNegativeSet(pairs=pairs, threshold_used=1.0, min_cooccurrence_used=5)
        index = NeighborIndex(space)
        k = 15
        got = hardneg_metric(index, hns, range(100), k=k)
        fractions = []
        for q in range(100):
            nn = [i for i, _ in index.topk(q, k).neighbors]
            hard = sum(1 for i in nn if (min(q, i), max(q, i)) in pairs)
            fractions.append(hard / k)
        assert got == pytest.approx(float(np.mean(fractions)), abs=1e-12)

    def test_bounded(self):
        space = random_space(30, 4, seed=9)
        pairs = {(0, 1), (2, 5), (7, 8)}
        hns = HardNegativeSet(pairs=pairs, threshold_used=1.0, min_cooccurrence_used=5)
        v = hardneg_metric(NeighborIndex(space), hns, range(30), k=10)
        assert 0.0 <= v <= 1.0


def test_save_load_roundtrip(tmp_path):
    vocab = _vocab([f"x{i}" for i in range(6)])
    seqs = [["x0", "x1", "x2"], ["x0", "x1"], ["x3", "x4"]] * 5
    stats = collect_bigrams(SequenceDataset(sequences=seqs), vocab)
    hns = mine_hard_negatives(stats, threshold=1e9, min_cooccurrence=1)
    save_hard_negatives(hns, stats, vocab, tmp_path / "hn.tsv")
    back = load_hard_negatives(tmp_path / "hn.tsv", vocab)
    assert back.pairs == hns.pairs
