from itertools import combinations, product

import numpy as np
import pandas as pd
import pytest

from evaluation import ari, likelihood_ari_correlation, partition_views, structure_error, summarize_aris
from exceptions import InvalidInputError
from model_core import CoClusterStructure, PartitionPair


def pair_counting_ari(a, b):
    """Hubert-Arabie ARI from the four pair counts."""
    n = len(a)
    same_a = same_b = both = 0
    for i, j in combinations(range(n), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        same_a += sa
        same_b += sb
        both += sa and sb
    pairs = n * (n - 1) / 2
    expected = same_a * same_b / pairs
    maximum = (same_a + same_b) / 2
    if maximum == expected:
        return 1.0
    return (both - expected) / (maximum - expected)


def set_partitions(n):
    """Every labeling in restricted-growth form."""
    def grow(prefix):
        if len(prefix) == n:
            yield list(prefix)
            return
        for label in range(max(prefix) + 2):
            yield from grow(prefix + [label])
    yield from grow([0])


def test_ari_examples():
    assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)


def test_trivial_partitions_agree():
    assert ari([0, 0, 0], [4, 4, 4]) == 1.0


def test_ari_errors():
    with pytest.raises(InvalidInputError):
        ari([0, 1, 1], [0, 1])
    with pytest.raises(InvalidInputError):
        ari([0], [0])


@pytest.mark.parametrize("n", range(2, 7))
def test_ari_matches_pair_counting(n):
    partitions = list(set_partitions(n))
    for a, b in product(partitions, repeat=2):
        assert ari(a, b) == pytest.approx(pair_counting_ari(a, b), abs=1e-12)
        assert ari(a, b) == ari(b, a)


@pytest.mark.parametrize("n", [7, 8])
def test_ari_matches_pair_counting_on_every_partition(n):
    references = [
        [0] * n,
        list(range(n)),
        [i // 2 for i in range(n)],
        [i % 2 for i in range(n)],
        [min(i // 3, 2) for i in range(n)],
    ]
    partitions = list(set_partitions(n))
    assert len(partitions) == {7: 877, 8: 4140}[n]
    for a, b in product(partitions, references):
        assert ari(a, b) == pytest.approx(pair_counting_ari(a, b), abs=1e-12)


def test_random_partitions_score_near_zero():
    scores = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        scores.append(ari(rng.integers(0, 4, 1000), rng.integers(0, 4, 1000)))
    assert -0.05 <= np.mean(scores) <= 0.05
    assert max(abs(s) for s in scores) < 0.05


def test_views_of_identical_and_relabeled_partitions():
    truth = PartitionPair([0, 0, 1, 1, 1], [[0, 1, 1, 0, 2, 2], [1, 0, 1, 0, 1, 0]])
    assert partition_views(truth, truth) == pytest.approx({"row_ari": 1.0, "col_ari": 1.0, "block_ari": 1.0})

    # swap the column clusters and relabel rows inside each
    relabeled = PartitionPair([1, 1, 0, 0, 0], [[0, 1, 0, 1, 0, 1], [2, 0, 0, 2, 1, 1]])
    assert partition_views(relabeled, truth) == pytest.approx({"row_ari": 1.0, "col_ari": 1.0, "block_ari": 1.0})


def test_scrambled_rows_lower_block_ari_only():
    truth = PartitionPair([0, 0, 0, 1, 1, 1], [[0, 0, 0, 1, 1, 1], [0, 1, 0, 1, 0, 1]])
    est = PartitionPair([0, 0, 0, 1, 1, 1], [[0, 1, 0, 1, 0, 1], [0, 1, 0, 1, 0, 1]])
    views = partition_views(est, truth)
    assert views["col_ari"] == 1.0
    assert views["block_ari"] < 1.0
    assert views["row_ari"] < 1.0


def test_views_need_equal_sizes():
    with pytest.raises(InvalidInputError):
        partition_views(PartitionPair([0, 1], [[0, 1, 1]]), PartitionPair([0, 1, 1], [[0, 1, 1]]))


def test_structure_error():
    truth = CoClusterStructure(L=3, K=(3, 2, 2))
    assert structure_error(CoClusterStructure(L=3, K=(2, 3, 2)), truth) == 0
    assert structure_error(CoClusterStructure(L=3, K=(3, 3, 2)), truth) == 1
    assert structure_error(CoClusterStructure(L=2, K=(3, 2)), truth) == 2


def test_likelihood_ari_correlation():
    logliks = np.arange(10.0)
    stats = likelihood_ari_correlation(logliks, logliks / 10)
    assert stats["pearson"] == pytest.approx(1.0)
    assert stats["kendall_tau"] == pytest.approx(1.0)
    assert stats["kendall_pvalue"] < 0.05
    with pytest.raises(InvalidInputError):
        likelihood_ari_correlation([1.0, 2.0], [0.1, 0.2])


def test_summarize_aris():
    records = pd.DataFrame({
        "strategy": ["a"] * 3 + ["b"] * 2,
        "row_ari": [0.1, 0.2, 0.3, 1.0, 1.0],
        "col_ari": [1.0] * 5,
        "block_ari": [0.0, 0.5, 1.0, 0.8, 0.9],
    })
    summary = summarize_aris(records).set_index("strategy")
    assert summary.loc["a", "block_ari_median"] == pytest.approx(0.5)
    assert summary.loc["a", "block_ari_q90"] == pytest.approx(0.9)
    assert summary.loc["b", "runs"] == 2
