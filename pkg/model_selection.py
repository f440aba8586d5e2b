"""
Model Selection Module
ICL scoring and structure search. Both strategies estimate the number of
column clusters with the shared-row block model (FunLBM), then search the
row-cluster count of each column cluster separately.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement, product
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from exceptions import DegenerateStructureError, InvalidInputError
from inference import SemGibbsConfig, SemGibbsResult, run_concurrent, run_sem_gibbs
from initialization import InitStrategy, init_random, make_initializer
from model_core import CoClusterStructure, ModelState, PartitionPair, complete_log_likelihood
from signal_transform import CoefficientGrid

logger = logging.getLogger(__name__)

STRATEGIES = ("grid", "greedy")


@dataclass
class SelectionConfig:
    L_max: int = 5
    K_max: int = 5
    runs_per_candidate: int = 10
    strategy: str = "grid"
    sem: SemGibbsConfig = field(default_factory=SemGibbsConfig)
    init: InitStrategy = field(default_factory=InitStrategy)
    n_jobs: int = 1
    progress: bool = False

    def __post_init__(self):
        if self.L_max < 1 or self.K_max < 1:
            raise InvalidInputError("L_max and K_max must be >= 1")
        if self.runs_per_candidate < 1:
            raise InvalidInputError("runs_per_candidate must be >= 1")
        if self.strategy not in STRATEGIES:
            raise InvalidInputError(f"unknown selection strategy '{self.strategy}', expected one of {STRATEGIES}")


@dataclass
class ICLRecord:
    structure: CoClusterStructure
    icl: float
    loglik: float
    converged: bool


@dataclass
class SelectionResult:
    best_structure: CoClusterStructure
    best_result: SemGibbsResult
    icl_table: Dict[CoClusterStructure, ICLRecord]
    funlbm_table: Dict[Tuple[int, int], ICLRecord]
    search_fits: int = 0
    refinement_fits: int = 0

    @property
    def candidates_evaluated(self) -> int:
        return self.search_fits + self.refinement_fits

    @property
    def L_hat(self) -> int:
        return self.best_structure.L


def _total_params(block_param_counts) -> int:
    return int(sum(np.sum(np.ravel(row)) for row in block_param_counts))


def icl_score(loglik: float, structure: CoClusterStructure, n: int, p: int, block_param_counts) -> float:
    """
    loglik - (L-1)/2 log p - 1/2 sum_l (K_l - 1) log n - (sum nu)/2 log(np).
    """
    counts = list(block_param_counts)
    if counts and all(np.ndim(row) == 1 for row in counts):
        if [len(row) for row in counts] != list(structure.K):
            raise InvalidInputError("block parameter counts do not match the structure")
    nu = _total_params(counts)
    return (loglik
            - 0.5 * (structure.L - 1) * math.log(p)
            - 0.5 * sum(K - 1 for K in structure.K) * math.log(n)
            - 0.5 * nu * math.log(n * p))


def funlbm_icl(loglik: float, K: int, L: int, n: int, p: int, block_param_counts) -> float:
    """Block-model form: a single shared row partition is penalized once."""
    nu = _total_params(block_param_counts)
    return (loglik
            - 0.5 * (L - 1) * math.log(p)
            - 0.5 * (K - 1) * math.log(n)
            - 0.5 * nu * math.log(n * p))


def count_structures(L_max: int, K_max: int) -> int:
    """Number of unordered K-multisets: sum_l C(K_max + l - 1, l)."""
    if L_max < 1 or K_max < 1:
        raise InvalidInputError("L_max and K_max must be >= 1")
    return sum(math.comb(K_max + ell - 1, ell) for ell in range(1, L_max + 1))


def enumerate_structures(L_max: int, K_max: int) -> List[CoClusterStructure]:
    """Every structure up to relabeling of column clusters (K sorted decreasingly)."""
    structures = []
    for ell in range(1, L_max + 1):
        for K in combinations_with_replacement(range(K_max, 0, -1), ell):
            structures.append(CoClusterStructure(L=ell, K=K))
    return structures


def shared_random_init(grid: CoefficientGrid, structure: CoClusterStructure, rng: np.random.Generator) -> PartitionPair:
    partition = init_random(grid.n, grid.p, structure, rng)
    rows = np.tile(partition.row_labels[0], (structure.L, 1))
    return PartitionPair(partition.col_labels, rows)


def funlbm_fit(grid: CoefficientGrid, K: int, L: int, config: SemGibbsConfig, n_runs: int = 1,
               n_jobs: int = 1) -> SemGibbsResult:
    """SEM-Gibbs with one row partition shared by every column cluster."""
    structure = CoClusterStructure.shared(K, L)
    return run_concurrent(grid, structure, config, n_runs, shared_random_init, n_jobs=n_jobs, shared_rows=True)


class _Search:
    """Bookkeeping shared by both strategies: seeds, fit counters, tables."""

    def __init__(self, grid: CoefficientGrid, config: SelectionConfig):
        self.grid = grid
        self.config = config
        self.initializer = make_initializer(config.init, config.sem)
        self.index = 0
        self.search_fits = 0
        self.refinement_fits = 0
        self.funlbm_table: Dict[Tuple[int, int], ICLRecord] = {}
        self.funlbm_results: Dict[Tuple[int, int], SemGibbsResult] = {}
        self.icl_table: Dict[CoClusterStructure, ICLRecord] = {}
        self.results: Dict[CoClusterStructure, SemGibbsResult] = {}

    def next_config(self) -> SemGibbsConfig:
        # candidate seed = base seed + candidate index
        sem = replace(self.config.sem, seed=self.config.sem.seed + self.index)
        self.index += 1
        return sem

    def fits(self, structure: CoClusterStructure) -> bool:
        return structure.L <= self.grid.p and structure.max_K <= self.grid.n

    def fit_funlbm(self, K: int, L: int) -> float:
        """FunLBM ICL of (K, L); -inf when the fit degenerates."""
        key = (K, L)
        if key in self.funlbm_table:
            return self.funlbm_table[key].icl
        structure = CoClusterStructure.shared(K, L)
        if not self.fits(structure):
            self.funlbm_table[key] = ICLRecord(structure, -math.inf, math.nan, False)
            return -math.inf

        sem = self.next_config()
        self.search_fits += 1
        try:
            result = funlbm_fit(self.grid, K, L, sem, self.config.runs_per_candidate, self.config.n_jobs)
        except DegenerateStructureError as e:
            logger.warning(f"FunLBM K={K} L={L} skipped: {e}")
            self.funlbm_table[key] = ICLRecord(structure, -math.inf, math.nan, False)
            return -math.inf

        icl = funlbm_icl(result.best_log_likelihood, K, L, self.grid.n, self.grid.p,
                         result.best_state.block_param_counts())
        logger.info(f"FunLBM K={K} L={L}: loglik {result.best_log_likelihood:.2f}, ICL {icl:.2f}")
        self.funlbm_table[key] = ICLRecord(structure, icl, result.best_log_likelihood, result.converged)
        self.funlbm_results[key] = result
        return icl

    def record(self, result: SemGibbsResult):
        structure = result.structure
        icl = icl_score(result.best_log_likelihood, structure, self.grid.n, self.grid.p,
                        result.best_state.block_param_counts())
        current = self.icl_table.get(structure)
        if current is None or icl > current.icl:
            self.icl_table[structure] = ICLRecord(structure, icl, result.best_log_likelihood, result.converged)
            self.results[structure] = result
        return icl

    def assemble(self, col_labels: np.ndarray, parts: Sequence[SemGibbsResult]) -> SemGibbsResult:
        """Full conditional model from per-column-cluster single-cluster fits."""
        L = len(parts)
        structure = CoClusterStructure(L=L, K=tuple(part.structure.K[0] for part in parts))
        state = ModelState(
            structure=structure,
            rho=np.bincount(col_labels, minlength=L) / col_labels.size,
            pi=[part.best_state.pi[0] for part in parts],
            blocks=[part.best_state.blocks[0] for part in parts],
        )
        partition = PartitionPair(col_labels, np.stack([part.best_partition.row_labels[0] for part in parts]))
        loglik = complete_log_likelihood(self.grid, partition, state)
        return SemGibbsResult(
            best_state=state,
            best_partition=partition,
            best_log_likelihood=loglik,
            likelihood_trace=[],
            iterations_run=0,
            degeneracy_events=sum(part.degeneracy_events for part in parts),
            converged=all(part.converged for part in parts),
            seed=self.config.sem.seed,
        )

    def columnwise(self, seed_result: SemGibbsResult) -> SelectionResult:
        """
        Freezes the column partition of the FunLBM winner and searches each
        column cluster's row-cluster count independently, then refits the
        assembled structure with a full SEM-Gibbs run.
        """
        col_labels = seed_result.best_partition.col_labels
        L_hat = seed_result.structure.L
        K_hat = seed_result.structure.K[0]
        logger.info(f"Column-wise search on L={L_hat} column clusters (FunLBM K={K_hat}).")

        parts: List[Dict[int, SemGibbsResult]] = []
        for ell in range(L_hat):
            sub = self.grid.subgrid(np.flatnonzero(col_labels == ell))
            found = {}
            for k in range(1, self.config.K_max + 1):
                if k > sub.n:
                    continue
                sem = self.next_config()
                self.refinement_fits += 1
                try:
                    found[k] = run_concurrent(sub, CoClusterStructure(L=1, K=(k,)), sem,
                                              self.config.runs_per_candidate, self.initializer,
                                              n_jobs=self.config.n_jobs)
                except DegenerateStructureError as e:
                    logger.warning(f"Column cluster {ell} with K={k} skipped: {e}")
            if not found:
                raise DegenerateStructureError(f"no row-cluster count could be fitted for column cluster {ell}")
            parts.append(found)

        def part_icl(part: SemGibbsResult) -> float:
            # this column cluster's share of the full ICL
            return (part.best_log_likelihood
                    - 0.5 * (part.structure.K[0] - 1) * math.log(self.grid.n)
                    - 0.5 * _total_params(part.best_state.block_param_counts()) * math.log(self.grid.n * self.grid.p))

        baseline = [found[K_hat] if K_hat in found else max(found.values(), key=part_icl) for found in parts]
        for ell, found in enumerate(parts):
            for k, part in found.items():
                candidate = list(baseline)
                candidate[ell] = part
                self.record(self.assemble(col_labels, candidate))

        chosen = [max(found.values(), key=part_icl) for found in parts]
        assembled = self.assemble(col_labels, chosen)
        self.record(assembled)

        sem = self.next_config()
        self.refinement_fits += 1
        try:
            refit = run_sem_gibbs(self.grid, assembled.best_partition, assembled.structure, sem)
            icl = self.record(refit)
            logger.info(f"Refit of L={refit.structure.L}, K=({refit.structure.key()}): ICL {icl:.2f}")
        except DegenerateStructureError as e:
            logger.warning(f"Final refit degenerated, keeping the assembled model: {e}")

        best_structure = max(self.icl_table, key=lambda s: self.icl_table[s].icl)
        return SelectionResult(
            best_structure=best_structure,
            best_result=self.results[best_structure],
            icl_table=self.icl_table,
            funlbm_table=self.funlbm_table,
            search_fits=self.search_fits,
            refinement_fits=self.refinement_fits,
        )

    def winner(self, keys) -> Tuple[int, int]:
        scored = [key for key in keys if math.isfinite(self.funlbm_table[key].icl)]
        if not scored:
            raise DegenerateStructureError("every FunLBM candidate degenerated")
        return max(scored, key=lambda key: self.funlbm_table[key].icl)


def select_grid(grid: CoefficientGrid, config: SelectionConfig) -> SelectionResult:
    """
    Exhaustive FunLBM search over [1, K_max] x [1, L_max], then column-wise
    search of each K_l on the winner's column partition.
    """
    search = _Search(grid, config)
    candidates = list(product(range(1, config.K_max + 1), range(1, config.L_max + 1)))
    for K, L in tqdm(candidates, desc="FunLBM grid", disable=not config.progress):
        search.fit_funlbm(K, L)

    K, L = search.winner(candidates)
    logger.info(f"Grid search: FunLBM winner K={K}, L={L}.")
    return search.columnwise(search.funlbm_results[(K, L)])


def select_greedy(grid: CoefficientGrid, config: SelectionConfig) -> SelectionResult:
    """
    Starting at (K, L) = (1, 1), moves to the better of (K+1, L) and
    (K, L+1) while the FunLBM ICL improves.
    """
    search = _Search(grid, config)
    K, L = 1, 1
    current = search.fit_funlbm(K, L)
    if not math.isfinite(current):
        raise DegenerateStructureError("the single-block model could not be fitted")

    while True:
        moves = []
        if K < config.K_max:
            moves.append((K + 1, L))
        if L < config.L_max:
            moves.append((K, L + 1))
        if not moves:
            break
        scores = [search.fit_funlbm(*move) for move in moves]
        best = int(np.argmax(scores))
        if scores[best] <= current:
            break
        (K, L), current = moves[best], scores[best]
        logger.info(f"Greedy search moved to K={K}, L={L} (ICL {current:.2f}).")

    return search.columnwise(search.funlbm_results[(K, L)])


def select(grid: CoefficientGrid, config: SelectionConfig) -> SelectionResult:
    if config.strategy == "greedy":
        return select_greedy(grid, config)
    return select_grid(grid, config)


def icl_frame(table: Dict) -> pd.DataFrame:
    """Table as rows of L, K_list, icl, loglik, converged, best ICL first."""
    records = [
        {
            "L": record.structure.L,
            "K_list": record.structure.key(),
            "icl": record.icl,
            "loglik": record.loglik,
            "converged": bool(record.converged),
        }
        for record in table.values()
    ]
    df = pd.DataFrame(records, columns=["L", "K_list", "icl", "loglik", "converged"])
    return df.sort_values(by=["icl", "L", "K_list"], ascending=[False, True, True], na_position="last").reset_index(drop=True)
