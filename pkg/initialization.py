"""
Initialization Module
Starting partitions for SEM-Gibbs: random shuffle, sample-seeded blocks,
k-means, and a shared-row block model fit.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from functools import partial
from typing import Dict

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from exceptions import InvalidInputError
from inference import SemGibbsConfig, Initializer
from model_core import CoClusterStructure, PartitionPair
from signal_transform import CoefficientGrid

logger = logging.getLogger(__name__)

KINDS = ("random", "sample", "kmeans", "funlbm")

# accepted spellings of each strategy
ALIASES = {
    "random": "random",
    "random_partition": "random",
    "sample": "sample",
    "sample_blocks": "sample",
    "kmeans": "kmeans",
    "funlbm": "funlbm",
    "funlbm_seed": "funlbm",
}


@dataclass
class InitStrategy:
    kind: str = "random"
    kmeans_iters: int = 20
    kmeans_restarts: int = 5

    def __post_init__(self):
        if self.kind not in ALIASES:
            raise InvalidInputError(f"unknown initialization '{self.kind}', expected one of {KINDS}")
        self.kind = ALIASES[self.kind]
        if self.kmeans_iters < 1 or self.kmeans_restarts < 1:
            raise InvalidInputError("k-means iterations and restarts must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


def _balance(labels: np.ndarray, n_clusters: int) -> np.ndarray:
    """Moves surplus items of the largest clusters into empty ones."""
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=n_clusters)
    for c in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        item = np.flatnonzero(labels == donor)[-1]
        labels[item] = c
        sizes[donor] -= 1
        sizes[c] += 1
    return labels


def _check(n: int, p: int, structure: CoClusterStructure):
    structure.check_fits(n, p)


def init_random(n: int, p: int, structure: CoClusterStructure, rng: np.random.Generator) -> PartitionPair:
    """Uniform labels in every dimension, then empty clusters are filled."""
    _check(n, p, structure)
    cols = _balance(rng.integers(0, structure.L, size=p), structure.L)
    rows = np.stack([_balance(rng.integers(0, K, size=n), K) for K in structure.K])
    return PartitionPair(cols, rows)


def _seeded_assignment(features: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """
    Seeds each cluster with a few random items; every other item joins the
    cluster whose seed mean is nearest.
    """
    size = features.shape[0]
    per_cluster = max(2, math.ceil(size / (5 * n_clusters)))
    per_cluster = max(1, min(per_cluster, size // n_clusters))

    order = rng.permutation(size)
    labels = np.full(size, -1)
    for c in range(n_clusters):
        labels[order[c * per_cluster:(c + 1) * per_cluster]] = c

    seeded = labels >= 0
    centroids = np.stack([features[labels == c].mean(axis=0) for c in range(n_clusters)])
    rest = np.flatnonzero(~seeded)
    if rest.size:
        labels[rest] = np.argmin(cdist(features[rest], centroids), axis=1)
    return labels


def init_sample_blocks(grid: CoefficientGrid, structure: CoClusterStructure, rng: np.random.Generator) -> PartitionPair:
    """Populate blocks with samples, then nearest seeded-cluster mean."""
    _check(grid.n, grid.p, structure)
    cols = _seeded_assignment(grid.column_features(), structure.L, rng)
    rows = np.stack([
        _seeded_assignment(grid.row_features(np.flatnonzero(cols == ell)), K, rng)
        for ell, K in enumerate(structure.K)
    ])
    return PartitionPair(cols, rows)


def _kmeans_labels(features: np.ndarray, n_clusters: int, strategy: InitStrategy, rng: np.random.Generator) -> np.ndarray:
    model = KMeans(
        n_clusters=n_clusters,
        init="k-means++",
        n_init=strategy.kmeans_restarts,
        max_iter=strategy.kmeans_iters,
        random_state=int(rng.integers(2 ** 31 - 1)),
    )
    labels = model.fit_predict(features)
    return _balance(labels.astype(int), n_clusters)


def init_kmeans(grid: CoefficientGrid, structure: CoClusterStructure, rng: np.random.Generator,
                strategy: InitStrategy = None) -> PartitionPair:
    """
    Columns by k-means on their row-averaged coefficient vectors, then
    rows of each column cluster by k-means on the concatenated cells.
    """
    strategy = strategy or InitStrategy(kind="kmeans")
    _check(grid.n, grid.p, structure)
    cols = _kmeans_labels(grid.column_features(), structure.L, strategy, rng)
    rows = np.stack([
        _kmeans_labels(grid.row_features(np.flatnonzero(cols == ell)), K, strategy, rng)
        for ell, K in enumerate(structure.K)
    ])
    return PartitionPair(cols, rows)


def _truncate(labels: np.ndarray, K: int, features: np.ndarray) -> np.ndarray:
    """Items labeled >= K move to the nearest retained cluster centroid."""
    labels = labels.copy()
    dropped = labels >= K
    if not dropped.any():
        return labels
    retained = [c for c in range(K) if np.any(labels == c)]
    if retained:
        centroids = np.stack([features[labels == c].mean(axis=0) for c in retained])
        nearest = np.argmin(cdist(features[dropped], centroids), axis=1)
        labels[dropped] = np.asarray(retained)[nearest]
    else:
        labels[dropped] = 0
    return _balance(labels, K)


def init_funlbm(grid: CoefficientGrid, structure: CoClusterStructure, config: SemGibbsConfig,
                rng: np.random.Generator) -> PartitionPair:
    """
    Fits the shared-row block model with K = max K_l and copies its row
    partition to every column cluster, truncated to K_l clusters.
    """
    from model_selection import funlbm_fit

    _check(grid.n, grid.p, structure)
    seeded = replace(config, seed=int(rng.integers(2 ** 31 - 1)))
    result = funlbm_fit(grid, structure.max_K, structure.L, seeded)
    cols = result.best_partition.col_labels.copy()
    shared = result.best_partition.row_labels[0]
    rows = np.stack([
        _truncate(shared, K, grid.row_features(np.flatnonzero(cols == ell)))
        for ell, K in enumerate(structure.K)
    ])
    return PartitionPair(cols, rows)


def initialize(strategy: InitStrategy, config: SemGibbsConfig, grid: CoefficientGrid,
               structure: CoClusterStructure, rng: np.random.Generator) -> PartitionPair:
    if strategy.kind == "random":
        return init_random(grid.n, grid.p, structure, rng)
    if strategy.kind == "sample":
        return init_sample_blocks(grid, structure, rng)
    if strategy.kind == "kmeans":
        return init_kmeans(grid, structure, rng, strategy)
    return init_funlbm(grid, structure, config, rng)


def make_initializer(strategy: InitStrategy, config: SemGibbsConfig = None) -> Initializer:
    """Picklable callable (grid, structure, rng) -> PartitionPair."""
    return partial(initialize, strategy, config or SemGibbsConfig())
