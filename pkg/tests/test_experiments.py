import numpy as np
import pytest

from datagen import benchmark_90x90
from evaluation import VIEWS
from experiments import adequacy_study, compare_initializations, score_runs, stability_study, truth_structure
from inference import SemGibbsConfig
from model_core import CoClusterStructure, PartitionPair
from signal_transform import transform_dataset


def test_truth_structure():
    partition = PartitionPair([0, 1, 1], [[0, 2, 1, 0], [1, 0, 0, 1]])
    assert truth_structure(partition) == CoClusterStructure(L=2, K=(3, 2))


def test_score_runs_skips_failed_runs(small_grid, small_truth, fast_sem):
    records, _ = compare_initializations(small_grid, small_truth, fast_sem, n_runs=1, strategies=["random"])
    assert len(score_runs([None], small_truth)) == 0
    assert list(records.columns) == ["strategy", "run", "seed", "loglik", "converged", *VIEWS]


def test_compare_initializations(small_grid, small_truth, fast_sem):
    records, summary = compare_initializations(small_grid, small_truth, fast_sem, n_runs=2,
                                               strategies=["random", "kmeans"])
    assert set(records["strategy"]) == {"random", "kmeans"}
    assert records.groupby("strategy")["seed"].apply(sorted).tolist() == [[0, 1], [0, 1]]
    assert set(summary["strategy"]) == {"random", "kmeans"}
    for view in VIEWS:
        assert summary[f"{view}_median"].between(-1, 1).all()
    assert summary["runs"].max() <= 2


def test_adequacy_study(small_grid, small_truth, fast_sem):
    records, correlations = adequacy_study(small_grid, small_truth, fast_sem, n_runs=4)
    assert len(records) <= 4
    assert set(correlations) == set(VIEWS)
    for stats in correlations.values():
        assert set(stats) == {"pearson", "kendall_tau", "kendall_pvalue"}


def test_stability_study(small_grid, small_truth, fast_sem):
    table = stability_study(small_grid, small_truth, fast_sem, launches=(1, 2), repetitions=2)
    assert table["launches"].tolist() == [1, 2]
    assert (table["min_block_ari"] <= table["median_block_ari"]).all()
    assert table["repetitions"].max() <= 2


@pytest.mark.slow
def test_more_launches_do_not_hurt_on_the_benchmark():
    dataset, truth = benchmark_90x90(seed=0)
    grid = transform_dataset(dataset)
    sem = SemGibbsConfig(max_iterations=60, burn_in=15, seed=0)
    table = stability_study(grid, truth, sem, launches=(1, 8), repetitions=4).set_index("launches")
    assert table.loc[8, "median_block_ari"] >= table.loc[1, "median_block_ari"]
    assert table.loc[8, "median_block_ari"] >= 0.95


@pytest.mark.slow
def test_likelihood_tracks_block_ari_on_the_benchmark():
    dataset, truth = benchmark_90x90(seed=0)
    grid = transform_dataset(dataset)
    _, correlations = adequacy_study(grid, truth, SemGibbsConfig(max_iterations=60, burn_in=15), n_runs=30)
    stats = correlations["block_ari"]
    assert np.nan_to_num(stats["pearson"]) >= 0.5
    assert stats["kendall_pvalue"] < 0.05


@pytest.mark.slow
def test_every_initialization_beats_chance_on_the_benchmark():
    dataset, truth = benchmark_90x90(seed=2)
    grid = transform_dataset(dataset)
    _, summary = compare_initializations(grid, truth, SemGibbsConfig(max_iterations=60, burn_in=15), n_runs=30)
    assert len(summary) == 4
    assert (summary["block_ari_median"] > 0).all()
