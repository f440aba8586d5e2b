"""
Inference Module
SEM-Gibbs for the conditional latent block model: stochastic draws of the
row partitions (one per column cluster) and of the column partition,
alternated with block-wise PCA parameter re-estimation.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import eigh
from scipy.special import softmax
from tqdm import tqdm

from exceptions import DegenerateStructureError, InvalidInputError, NumericError
from model_core import (
    BlockParams,
    CoClusterStructure,
    ModelState,
    PartitionPair,
    cell_log_densities,
    complete_log_likelihood_from,
)
from signal_transform import CoefficientGrid

logger = logging.getLogger(__name__)

# Substream phases: a random draw is keyed by (iteration, phase, index...)
PHASE_ROWS = 0
PHASE_COLUMNS = 1
PHASE_REPAIR = 2
PHASE_INIT = 3

REGULARIZATION = 1e-6

Initializer = Callable[[CoefficientGrid, CoClusterStructure, np.random.Generator], PartitionPair]


@dataclass
class SemGibbsConfig:
    """
    subspace_dim follows the PCA n_components convention: an int >= 1 fixes
    d, a float in (0, 1) is the variance-explained threshold (capped by
    max_subspace_dim).
    """
    max_iterations: int = 100
    burn_in: int = 20
    convergence_tol: float = 1e-6
    convergence_window: int = 5
    seed: int = 0
    subspace_dim: Union[int, float] = 0.9
    max_subspace_dim: int = 10
    max_consecutive_repairs: int = 20

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be positive")
        if not 0 <= self.burn_in < self.max_iterations:
            raise InvalidInputError("burn_in must be nonnegative and below max_iterations")
        if self.convergence_tol <= 0 or self.convergence_window < 1:
            raise InvalidInputError("convergence tolerance and window must be positive")
        if self.seed < 0:
            raise InvalidInputError("seed must be a nonnegative integer")
        if isinstance(self.subspace_dim, float) and not self.subspace_dim.is_integer():
            if not 0 < self.subspace_dim < 1:
                raise InvalidInputError("a variance threshold must lie in (0, 1)")
        else:
            self.subspace_dim = int(self.subspace_dim)
            if self.subspace_dim < 1:
                raise InvalidInputError("a fixed subspace dimension must be >= 1")
        if self.max_subspace_dim < 1:
            raise InvalidInputError("max_subspace_dim must be >= 1")

    @property
    def fixed_dim(self) -> bool:
        return isinstance(self.subspace_dim, int)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "SemGibbsConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class SemGibbsResult:
    best_state: ModelState
    best_partition: PartitionPair
    best_log_likelihood: float
    likelihood_trace: List[float]
    iterations_run: int
    degeneracy_events: int
    converged: bool = False
    seed: int = 0

    @property
    def structure(self) -> CoClusterStructure:
        return self.best_state.structure

    def summary(self) -> Dict:
        return {
            "seed": self.seed,
            "log_likelihood": self.best_log_likelihood,
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "degeneracy_events": self.degeneracy_events,
            "structure": self.structure.to_dict(),
            "partition": self.best_partition.to_dict(),
        }


@dataclass(frozen=True)
class Substreams:
    """
    Independent generators keyed by (iteration, phase, index...). A draw
    depends only on its key, so rows/columns can be sampled in any order
    or in parallel with identical results.
    """
    seed: int

    def sequence(self, *key) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))

    def generator(self, *key) -> np.random.Generator:
        return np.random.default_rng(self.sequence(*key))

    def uniforms(self, *key, count: int) -> np.ndarray:
        """U[0, 1) per index, 53 bits hashed straight from the key."""
        words = np.array([self.sequence(*key, index).generate_state(1, np.uint64)[0] for index in range(count)],
                         dtype=np.uint64)
        return (words >> np.uint64(11)).astype(float) * 2.0 ** -53


def draw_labels(posteriors: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw, one uniform per row of `posteriors`."""
    cumulative = np.cumsum(posteriors, axis=1)
    labels = (uniforms[:, None] >= cumulative).sum(axis=1)
    return np.minimum(labels, posteriors.shape[1] - 1)


def _normalize(logits: np.ndarray) -> np.ndarray:
    posteriors = softmax(logits, axis=1)
    if not np.all(np.isfinite(posteriors)):
        raise NumericError("posterior probabilities underflowed")
    return posteriors


def row_posteriors(grid: CoefficientGrid, partition: PartitionPair, state: ModelState,
                   log_densities: List[np.ndarray] = None, shared_rows: bool = False) -> List[np.ndarray]:
    """
    out[l][i, k] = P(z_i^l = k | c_i., w; theta), normalized in log space.
    With shared_rows all column clusters vote on a single row partition.
    """
    if log_densities is None:
        log_densities = cell_log_densities(grid.coeffs, state)
    w = partition.col_labels

    evidence = []
    for ell, dens in enumerate(log_densities):
        columns = w == ell
        evidence.append(dens[:, :, columns].sum(axis=2).T)

    if shared_rows:
        shared = _normalize(np.log(state.pi[0]) + sum(evidence))
        return [shared] * state.structure.L
    return [_normalize(np.log(state.pi[ell]) + evidence[ell]) for ell in range(state.structure.L)]


def column_posteriors(grid: CoefficientGrid, partition: PartitionPair, state: ModelState,
                      log_densities: List[np.ndarray] = None) -> np.ndarray:
    """(p, L) matrix: P(w_j = l | c_.j, z; theta)."""
    if log_densities is None:
        log_densities = cell_log_densities(grid.coeffs, state)
    z = partition.row_labels
    rows = np.arange(z.shape[1])
    evidence = np.stack([dens[z[ell], rows, :].sum(axis=0) for ell, dens in enumerate(log_densities)], axis=1)
    return _normalize(np.log(state.rho) + evidence)


def se_step_rows(grid: CoefficientGrid, partition: PartitionPair, state: ModelState, streams: Substreams,
                 iteration: int = 0, log_densities: List[np.ndarray] = None,
                 shared_rows: bool = False) -> np.ndarray:
    """Draws new row labels for every column cluster given w^(q)."""
    posteriors = row_posteriors(grid, partition, state, log_densities, shared_rows)
    n = partition.n
    if shared_rows:
        labels = draw_labels(posteriors[0], streams.uniforms(iteration, PHASE_ROWS, 0, count=n))
        return np.tile(labels, (state.structure.L, 1))
    return np.stack([
        draw_labels(post, streams.uniforms(iteration, PHASE_ROWS, ell, count=n))
        for ell, post in enumerate(posteriors)
    ])


def se_step_columns(grid: CoefficientGrid, partition: PartitionPair, state: ModelState, streams: Substreams,
                    iteration: int = 0, log_densities: List[np.ndarray] = None) -> np.ndarray:
    """Draws new column labels given the freshly drawn row partitions z^(q+1)."""
    posteriors = column_posteriors(grid, partition, state, log_densities)
    return draw_labels(posteriors, streams.uniforms(iteration, PHASE_COLUMNS, count=partition.p))


def choose_subspace_dim(eigenvalues: np.ndarray, n_cells: int, config: SemGibbsConfig) -> int:
    """eigenvalues sorted in decreasing order."""
    m = eigenvalues.size
    top = eigenvalues[0]
    rank = int(np.sum(eigenvalues > top * 1e-12)) if top > 0 else 0
    limit = max(1, min(m, n_cells - 1, rank))

    if config.fixed_dim:
        return min(config.subspace_dim, limit)

    total = eigenvalues.sum()
    if total <= 0:
        return 1
    explained = np.cumsum(eigenvalues) / total
    d = int(np.searchsorted(explained, config.subspace_dim)) + 1
    return max(1, min(d, config.max_subspace_dim, limit))


def fit_block(cells: np.ndarray, config: SemGibbsConfig) -> BlockParams:
    """
    Block-wise PCA: loadings are the top-d eigenvectors of the centered
    covariance; mean and biased covariance are taken on the uncentered
    projections v = c A, then regularized.
    """
    n_cells = cells.shape[0]
    if n_cells < 2:
        raise DegenerateStructureError(f"block with {n_cells} cell(s) cannot be estimated")

    cov = np.atleast_2d(np.cov(cells, rowvar=False, bias=True))
    eigenvalues, eigenvectors = eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]

    d = choose_subspace_dim(eigenvalues, n_cells, config)
    loadings = eigenvectors[:, :d]
    # deterministic sign: largest-magnitude entry of each axis is positive
    signs = np.sign(loadings[np.argmax(np.abs(loadings), axis=0), np.arange(d)])
    loadings = loadings * np.where(signs == 0, 1.0, signs)

    projected = cells @ loadings
    mean = projected.mean(axis=0)
    sigma = np.atleast_2d(np.cov(projected, rowvar=False, bias=True))
    sigma = 0.5 * (sigma + sigma.T)
    trace = np.trace(sigma)
    lam = REGULARIZATION * trace / d if trace > 0 else REGULARIZATION
    return BlockParams(loadings=loadings, mean=mean, covariance=sigma + lam * np.eye(d))


def m_step(grid: CoefficientGrid, partition: PartitionPair, config: SemGibbsConfig,
           structure: CoClusterStructure = None) -> ModelState:
    """Mixing proportions from label counts, block parameters from block-wise PCA."""
    if structure is None:
        structure = CoClusterStructure(
            L=partition.row_labels.shape[0],
            K=tuple(int(labels.max()) + 1 for labels in partition.row_labels),
        )
    col_sizes, row_sizes = partition.cluster_sizes(structure)
    if np.any(col_sizes == 0) or any(np.any(sizes == 0) for sizes in row_sizes):
        raise DegenerateStructureError("m_step needs every row and column cluster populated")

    rho = col_sizes / partition.p
    pi = [sizes / partition.n for sizes in row_sizes]
    blocks = []
    for ell in range(structure.L):
        columns = partition.columns_of(ell)
        row_blocks = []
        for k in range(structure.K[ell]):
            rows = np.flatnonzero(partition.row_labels[ell] == k)
            cells = grid.coeffs[np.ix_(rows, columns)].reshape(-1, grid.m)
            row_blocks.append(fit_block(cells, config))
        blocks.append(row_blocks)
    return ModelState(structure=structure, rho=rho, pi=pi, blocks=blocks)


def _refill(labels: np.ndarray, n_clusters: int, min_size: int, order: np.ndarray) -> List[int]:
    """
    Moves items, taken in `order`, into clusters below `min_size`, never
    pulling a donor cluster below `min_size`. Returns the repaired clusters.
    """
    size = labels.size
    sizes = np.bincount(labels, minlength=n_clusters)
    quota = max(1, math.ceil(size / (2 * n_clusters)))
    repaired = []
    for c in range(n_clusters):
        if sizes[c] >= min_size:
            continue
        wanted = max(quota, min_size - sizes[c])
        moved = 0
        for item in order:
            if moved == wanted:
                break
            source = labels[item]
            if source != c and sizes[source] > min_size:
                labels[item] = c
                sizes[source] -= 1
                sizes[c] += 1
                moved += 1
        if sizes[c] < min_size:
            raise DegenerateStructureError(f"cannot populate cluster {c}: {size} items for {n_clusters} clusters")
        repaired.append(c)
    return repaired


def _refill_order(fit: Optional[np.ndarray], generator: np.random.Generator, size: int) -> np.ndarray:
    """Worst-fitting items first, ties and missing scores in random order."""
    tiebreak = generator.permutation(size)
    if fit is None:
        return tiebreak
    return np.lexsort((tiebreak, fit))


def column_fit(log_densities: List[np.ndarray], partition: PartitionPair) -> np.ndarray:
    """(p,) log-density of every column under its own column cluster's blocks."""
    z = partition.row_labels
    rows = np.arange(z.shape[1])
    per_cluster = np.stack([dens[z[ell], rows, :].sum(axis=0) for ell, dens in enumerate(log_densities)])
    return per_cluster[partition.col_labels, np.arange(partition.p)]


def row_fit(log_densities: List[np.ndarray], col_labels: np.ndarray, row_labels: np.ndarray, ell: int) -> np.ndarray:
    """(n,) log-density of every row of column cluster ell under its own block."""
    dens = log_densities[ell][row_labels, np.arange(row_labels.size), :]
    return dens[:, col_labels == ell].sum(axis=1)


def repair_partition(partition: PartitionPair, structure: CoClusterStructure, streams: Substreams,
                     iteration: int = 0, shared_rows: bool = False,
                     log_densities: List[np.ndarray] = None) -> Tuple[PartitionPair, List[Tuple]]:
    """
    Repopulates empty column clusters, and row clusters whose blocks would
    hold fewer than two cells. Given the cell log-densities of the state the
    partition was drawn from, the refill takes the items worst explained by
    their current cluster; otherwise it takes random items.
    """
    cols = partition.col_labels.copy()
    rows = partition.row_labels.copy()
    repaired = []

    fit = column_fit(log_densities, partition) if log_densities is not None else None
    order = _refill_order(fit, streams.generator(iteration, PHASE_REPAIR, structure.L), cols.size)
    repaired += [("col", c) for c in _refill(cols, structure.L, 1, order)]
    col_sizes = np.bincount(cols, minlength=structure.L)

    if shared_rows:
        min_size = 1 if col_sizes.min() >= 2 else 2
        fit = None
        if log_densities is not None:
            fit = sum(row_fit(log_densities, cols, rows[0], ell) for ell in range(structure.L))
        order = _refill_order(fit, streams.generator(iteration, PHASE_REPAIR, 0), rows.shape[1])
        repaired += [("row", 0, k) for k in _refill(rows[0], structure.K[0], min_size, order)]
        rows[:] = rows[0]
    else:
        for ell, K in enumerate(structure.K):
            min_size = 1 if col_sizes[ell] >= 2 else 2
            fit = row_fit(log_densities, cols, rows[ell], ell) if log_densities is not None else None
            order = _refill_order(fit, streams.generator(iteration, PHASE_REPAIR, ell), rows.shape[1])
            repaired += [("row", ell, k) for k in _refill(rows[ell], K, min_size, order)]

    if repaired:
        logger.debug(f"Iteration {iteration}: repaired clusters {repaired}")
    return PartitionPair(cols, rows), repaired


def _converged(trace: List[float], config: SemGibbsConfig) -> bool:
    w = config.convergence_window
    if len(trace) < max(config.burn_in + w, 2 * w):
        return False
    last = np.mean(trace[-w:])
    previous = np.mean(trace[-2 * w:-w])
    delta = abs(last - previous)
    return delta == 0 or delta < config.convergence_tol * abs(previous)


def run_sem_gibbs(grid: CoefficientGrid, initial_partition: PartitionPair, structure: CoClusterStructure,
                  config: SemGibbsConfig, shared_rows: bool = False) -> SemGibbsResult:
    """
    M step -> SE rows -> SE columns until max_iterations or convergence.
    Returns the post-burn-in sampled state with the highest complete-data
    log-likelihood.
    """
    structure.check_fits(grid.n, grid.p)
    initial_partition.validate(structure, n=grid.n, p=grid.p)
    if shared_rows and len(set(structure.K)) != 1:
        raise InvalidInputError("a shared row partition needs equal row-cluster counts")

    streams = Substreams(config.seed)
    partition = initial_partition.copy()
    trace = []
    best = None
    events = 0
    streak: Dict[Tuple, int] = {}
    densities = None
    converged = False

    for q in range(config.max_iterations):
        partition, repaired = repair_partition(partition, structure, streams, q, shared_rows, densities)
        events += len(repaired)
        streak = {key: streak.get(key, 0) + 1 for key in repaired}
        if streak and max(streak.values()) > config.max_consecutive_repairs:
            raise DegenerateStructureError(
                f"structure L={structure.L}, K=({structure.key()}) keeps emptying clusters {sorted(streak)}"
            )

        state = m_step(grid, partition, config, structure)
        densities = cell_log_densities(grid.coeffs, state)
        loglik = complete_log_likelihood_from(densities, partition, state, shared_rows)
        trace.append(loglik)
        logger.debug(f"Iteration {q}: loglik {loglik:.6f}")

        if q >= config.burn_in and (best is None or loglik > best[0]):
            best = (loglik, state, partition.copy())

        if _converged(trace, config):
            converged = True
            break
        if q == config.max_iterations - 1:
            break

        rows = se_step_rows(grid, partition, state, streams, q, densities, shared_rows)
        partition = PartitionPair(partition.col_labels, rows)
        cols = se_step_columns(grid, partition, state, streams, q, densities)
        partition = PartitionPair(cols, rows)

    return SemGibbsResult(
        best_state=best[1],
        best_partition=best[2],
        best_log_likelihood=best[0],
        likelihood_trace=trace,
        iterations_run=len(trace),
        degeneracy_events=events,
        converged=converged,
        seed=config.seed,
    )


def init_generator(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, PHASE_INIT)))


def _single_run(grid, structure, config, initializer, run_index, shared_rows=False) -> Optional[SemGibbsResult]:
    run_config = replace(config, seed=config.seed + run_index)
    try:
        partition = initializer(grid, structure, init_generator(run_config.seed))
        return run_sem_gibbs(grid, partition, structure, run_config, shared_rows)
    except DegenerateStructureError as e:
        logger.warning(f"Run {run_index} (seed {run_config.seed}) degenerated: {e}")
        return None


def run_many(grid: CoefficientGrid, structure: CoClusterStructure, config: SemGibbsConfig, n_runs: int,
             initializer: Initializer, n_jobs: int = 1, progress: bool = False,
             shared_rows: bool = False) -> List[Optional[SemGibbsResult]]:
    """
    n_runs independent chains, run i seeded with config.seed + i. Failed
    runs are returned as None. Results do not depend on n_jobs.
    """
    if n_runs < 1:
        raise InvalidInputError("n_runs must be >= 1")
    indices = tqdm(range(n_runs), desc="runs", disable=not progress)
    if n_jobs > 1 and n_runs > 1:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_single_run)(grid, structure, config, initializer, i, shared_rows) for i in indices
        )
    else:
        results = [_single_run(grid, structure, config, initializer, i, shared_rows) for i in indices]

    for i, result in enumerate(results):
        if result is not None:
            logger.info(f"Run {i}: loglik {result.best_log_likelihood:.4f} after {result.iterations_run} iterations")
    return results


def best_of(results: List[Optional[SemGibbsResult]]) -> SemGibbsResult:
    """Highest log-likelihood; ties go to the lowest run index."""
    best = None
    for result in results:
        if result is not None and (best is None or result.best_log_likelihood > best.best_log_likelihood):
            best = result
    if best is None:
        raise DegenerateStructureError("every run degenerated")
    return best


def run_concurrent(grid: CoefficientGrid, structure: CoClusterStructure, config: SemGibbsConfig, n_runs: int,
                   initializer: Initializer, n_jobs: int = 1, progress: bool = False,
                   shared_rows: bool = False) -> SemGibbsResult:
    results = run_many(grid, structure, config, n_runs, initializer, n_jobs, progress, shared_rows)
    return best_of(results)
