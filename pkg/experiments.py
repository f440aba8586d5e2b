"""
Experiments Module
Repeated-fit harnesses on data with a known partition: initialization
comparison, log-likelihood / ARI adequacy and concurrent-launch stability.
"""

import logging
from dataclasses import replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from evaluation import VIEWS, likelihood_ari_correlation, partition_views, summarize_aris
from exceptions import DegenerateStructureError
from inference import SemGibbsConfig, SemGibbsResult, best_of, run_many
from initialization import KINDS, InitStrategy, make_initializer
from model_core import CoClusterStructure, PartitionPair
from signal_transform import CoefficientGrid

logger = logging.getLogger(__name__)


def truth_structure(partition: PartitionPair) -> CoClusterStructure:
    """Smallest structure holding every label of the partition."""
    return CoClusterStructure(
        L=partition.row_labels.shape[0],
        K=tuple(int(labels.max()) + 1 for labels in partition.row_labels),
    )


def score_runs(results: Sequence[Optional[SemGibbsResult]], truth: PartitionPair) -> pd.DataFrame:
    """One line per successful run: seed, loglik, convergence and the three ARIs."""
    records = []
    for index, result in enumerate(results):
        if result is None:
            continue
        records.append({
            "run": index,
            "seed": result.seed,
            "loglik": result.best_log_likelihood,
            "converged": result.converged,
            **partition_views(result.best_partition, truth),
        })
    skipped = len(results) - len(records)
    if skipped:
        logger.warning(f"{skipped} of {len(results)} runs degenerated and were left out.")
    return pd.DataFrame(records, columns=["run", "seed", "loglik", "converged", *VIEWS])


def compare_initializations(grid: CoefficientGrid, truth: PartitionPair, config: SemGibbsConfig,
                            structure: CoClusterStructure = None, n_runs: int = 30,
                            strategies: Sequence[str] = KINDS, n_jobs: int = 1,
                            progress: bool = False) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    n_runs SEM-Gibbs runs per initialization strategy, all from the same
    base seed.
    Returns:
        (records, summary): per-run ARIs, and median / 0.9-quantile per strategy.
    """
    structure = structure or truth_structure(truth)
    frames = []
    for kind in tqdm(strategies, desc="strategies", disable=not progress):
        initializer = make_initializer(InitStrategy(kind=kind), config)
        results = run_many(grid, structure, config, n_runs, initializer, n_jobs=n_jobs)
        records = score_runs(results, truth)
        records.insert(0, "strategy", InitStrategy(kind=kind).kind)
        frames.append(records)
        logger.info(f"Initialization {kind}: median block ARI {records['block_ari'].median():.3f}")

    records = pd.concat(frames, ignore_index=True)
    return records, summarize_aris(records, by="strategy")


def adequacy_study(grid: CoefficientGrid, truth: PartitionPair, config: SemGibbsConfig,
                   structure: CoClusterStructure = None, n_runs: int = 30,
                   init: InitStrategy = None, n_jobs: int = 1) -> Tuple[pd.DataFrame, Dict[str, Dict[str, float]]]:
    """
    Single-run fits from randomized starts; correlates the final
    log-likelihood with each ARI view.
    """
    structure = structure or truth_structure(truth)
    initializer = make_initializer(init or InitStrategy(kind="random"), config)
    records = score_runs(run_many(grid, structure, config, n_runs, initializer, n_jobs=n_jobs), truth)
    correlations = {view: likelihood_ari_correlation(records["loglik"], records[view]) for view in VIEWS}
    for view, stats in correlations.items():
        logger.info(f"loglik vs {view}: pearson {stats['pearson']:.3f}, "
                    f"kendall tau {stats['kendall_tau']:.3f} (p={stats['kendall_pvalue']:.3g})")
    return records, correlations


def stability_study(grid: CoefficientGrid, truth: PartitionPair, config: SemGibbsConfig,
                    structure: CoClusterStructure = None, launches: Sequence[int] = (1, 4, 8),
                    repetitions: int = 10, init: InitStrategy = None, n_jobs: int = 1,
                    progress: bool = False) -> pd.DataFrame:
    """
    Block ARI of the best of k concurrent launches, for every k in
    `launches`, over independent repetitions. Repetition r launches
    max(launches) runs once; the best of the first k is kept for each k.
    """
    structure = structure or truth_structure(truth)
    initializer = make_initializer(init or InitStrategy(kind="random"), config)
    widest = max(launches)

    records = []
    for r in tqdm(range(repetitions), desc="repetitions", disable=not progress):
        rep_config = replace(config, seed=config.seed + r * widest)
        results = run_many(grid, structure, rep_config, widest, initializer, n_jobs=n_jobs)
        for k in launches:
            try:
                best = best_of(results[:k])
            except DegenerateStructureError:
                records.append({"repetition": r, "launches": k, "block_ari": np.nan})
                continue
            records.append({"repetition": r, "launches": k,
                            "block_ari": partition_views(best.best_partition, truth)["block_ari"]})

    df = pd.DataFrame(records)
    return df.groupby("launches").agg(
        median_block_ari=("block_ari", "median"),
        min_block_ari=("block_ari", "min"),
        repetitions=("block_ari", "count"),
    ).reset_index()
