"""
Evaluation Module
Adjusted Rand Index and the row / column / block comparison views of two
co-clustering partitions.
"""

import logging
import warnings
from typing import Dict, Sequence

import numpy as np
import pandas as pd
from scipy.stats import kendalltau, pearsonr
from sklearn.metrics import adjusted_rand_score

from exceptions import InvalidInputError
from model_core import CoClusterStructure, PartitionPair

logger = logging.getLogger(__name__)

VIEWS = ("row_ari", "col_ari", "block_ari")


def ari(a: Sequence[int], b: Sequence[int]) -> float:
    """
    Chance-corrected pair agreement. Two single-cluster partitions are
    identical and score 1.0.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1 or a.size != b.size:
        raise InvalidInputError(f"label vectors must have equal lengths, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise InvalidInputError("ARI needs at least two items")
    if np.unique(a).size == 1 and np.unique(b).size == 1:
        return 1.0
    return float(adjusted_rand_score(a, b))


def _block_labels(partition: PartitionPair, col_labels: np.ndarray) -> np.ndarray:
    """(n, p) codes of (col_labels[j], row cluster of i in j's own cluster)."""
    base = int(partition.row_labels.max()) + 1
    return col_labels[None, :] * base + partition.cell_row_labels()


def partition_views(est: PartitionPair, truth: PartitionPair) -> Dict[str, float]:
    """
    col_ari compares the p column labels. block_ari compares the n*p cell
    labels (column cluster, row cluster). row_ari pairs each cell's row
    cluster with the true column cluster, so it scores row grouping alone.
    """
    if est.n != truth.n or est.p != truth.p:
        raise InvalidInputError(f"partitions differ in size: {est.n}x{est.p} vs {truth.n}x{truth.p}")

    true_cols = truth.col_labels
    return {
        "row_ari": ari(_block_labels(est, true_cols).ravel(), _block_labels(truth, true_cols).ravel()),
        "col_ari": ari(est.col_labels, truth.col_labels),
        "block_ari": ari(_block_labels(est, est.col_labels).ravel(), _block_labels(truth, true_cols).ravel()),
    }


def structure_error(est: CoClusterStructure, truth: CoClusterStructure) -> int:
    """|L - L'| plus mismatching entries of the decreasingly sorted K lists."""
    width = max(est.L, truth.L)
    a = sorted(est.K, reverse=True) + [0] * (width - est.L)
    b = sorted(truth.K, reverse=True) + [0] * (width - truth.L)
    return abs(est.L - truth.L) + sum(x != y for x, y in zip(a, b))


def likelihood_ari_correlation(logliks: Sequence[float], aris: Sequence[float]) -> Dict[str, float]:
    """Pearson correlation and Kendall's tau test between final log-likelihood and ARI."""
    x = np.asarray(logliks, dtype=float)
    y = np.asarray(aris, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise InvalidInputError("need at least three paired log-likelihood / ARI values")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        logger.warning("Constant log-likelihoods or ARIs: correlation is undefined.")
        return {"pearson": float("nan"), "kendall_tau": float("nan"), "kendall_pvalue": float("nan")}

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r, _ = pearsonr(x, y)
        tau, pvalue = kendalltau(x, y)
    return {"pearson": float(r), "kendall_tau": float(tau), "kendall_pvalue": float(pvalue)}


def summarize_aris(records: pd.DataFrame, by: str = "strategy") -> pd.DataFrame:
    """
    Median and 0.9-quantile of every ARI view per group.
    Returns:
        pd.DataFrame: one row per group, columns <view>_median and <view>_q90.
    """
    if records.empty:
        return pd.DataFrame()
    aggregations = {}
    for view in VIEWS:
        aggregations[f"{view}_median"] = (view, "median")
        aggregations[f"{view}_q90"] = (view, lambda x: x.quantile(0.9))
    aggregations["runs"] = (VIEWS[0], "count")
    return records.groupby(by, sort=False).agg(**aggregations).reset_index()


if __name__ == "__main__":
    a = [0, 0, 1, 1]
    for b in ([0, 0, 1, 1], [1, 1, 0, 0], [0, 1, 0, 1]):
        print(f"ari({a}, {b}) = {ari(a, b):.3f}")
