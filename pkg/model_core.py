"""
Model Core Module
Parameterization of the conditional latent block model: per-block Gaussian
densities in a low-dimensional subspace, row/column conditional densities
and the complete-data log-likelihood.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import multivariate_normal

from exceptions import InvalidInputError, InvalidStructureError, NumericError
from signal_transform import CoefficientGrid

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-10


@dataclass(frozen=True)
class CoClusterStructure:
    """L column clusters; column cluster l owns K[l] row clusters."""
    L: int
    K: Tuple[int, ...]

    def __post_init__(self):
        K = tuple(int(k) for k in self.K)
        object.__setattr__(self, "K", K)
        if int(self.L) != self.L or self.L < 1:
            raise InvalidStructureError(f"L must be a positive integer, got {self.L}")
        object.__setattr__(self, "L", int(self.L))
        if len(K) != self.L:
            raise InvalidStructureError(f"expected {self.L} row-cluster counts, got {len(K)}")
        if any(k < 1 for k in K):
            raise InvalidStructureError(f"row-cluster counts must be >= 1, got {K}")

    @classmethod
    def parse(cls, L, K) -> "CoClusterStructure":
        """Accepts K as a sequence or a comma-separated string ('3,2,2')."""
        if isinstance(K, str):
            try:
                K = [int(k) for k in K.split(",") if k.strip()]
            except ValueError as e:
                raise InvalidStructureError(f"cannot parse row-cluster counts '{K}'") from e
        return cls(L=int(L), K=tuple(K))

    @classmethod
    def shared(cls, K: int, L: int) -> "CoClusterStructure":
        """Structure of a plain block model: every column cluster has K row clusters."""
        return cls(L=L, K=(K,) * L)

    @property
    def n_blocks(self) -> int:
        return sum(self.K)

    @property
    def max_K(self) -> int:
        return max(self.K)

    def key(self) -> str:
        return ",".join(str(k) for k in self.K)

    def check_fits(self, n: int, p: int):
        if p < self.L or n < self.max_K:
            raise InvalidStructureError(
                f"structure L={self.L}, K=({self.key()}) is larger than the {n}x{p} data"
            )

    def to_dict(self) -> Dict:
        return {"L": self.L, "K": list(self.K)}


@dataclass(eq=False)
class BlockParams:
    """
    Gaussian density of block (k, l) in the subspace spanned by the
    orthonormal columns of `loadings` (m x d). `mean` and `covariance`
    live in that d-dimensional subspace.
    """
    loadings: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m, d = self.loadings.shape
        if self.mean.shape != (d,) or self.covariance.shape != (d, d):
            raise InvalidInputError(f"block parameter shapes disagree: loadings {m}x{d}, "
                                    f"mean {self.mean.shape}, covariance {self.covariance.shape}")
        self._frozen = None

    @property
    def d(self) -> int:
        return self.loadings.shape[1]

    @property
    def m(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_params(self) -> int:
        """m*d loadings + d mean + d(d+1)/2 covariance entries."""
        m, d = self.m, self.d
        return m * d + d + d * (d + 1) // 2

    def check(self, tol: float = 1e-8):
        gram = self.loadings.T @ self.loadings
        if not np.allclose(gram, np.eye(self.d), atol=tol):
            raise NumericError("block loadings are not orthonormal")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-10):
            raise NumericError("block covariance is not symmetric")
        if np.linalg.eigvalsh(self.covariance).min() <= 0:
            raise NumericError("block covariance is not positive definite")

    def project(self, cells: np.ndarray) -> np.ndarray:
        return np.asarray(cells, dtype=float) @ self.loadings

    def log_density(self, cells: np.ndarray) -> np.ndarray:
        """Log-density of every m-vector along the last axis of `cells`."""
        cells = np.asarray(cells, dtype=float)
        lead = cells.shape[:-1]
        if self._frozen is None:
            try:
                self._frozen = multivariate_normal(mean=self.mean, cov=self.covariance)
            except (np.linalg.LinAlgError, ValueError) as e:
                raise NumericError(f"block covariance is not invertible: {e}") from e
        v = self.project(cells.reshape(-1, cells.shape[-1]))
        return np.reshape(self._frozen.logpdf(v), lead)

    def to_dict(self) -> Dict:
        return {
            "m": self.m,
            "d": self.d,
            "loadings": self.loadings.ravel().tolist(),
            "mean": self.mean.tolist(),
            "covariance": self.covariance.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "BlockParams":
        m, d = int(data["m"]), int(data["d"])
        return cls(
            loadings=np.asarray(data["loadings"], dtype=float).reshape(m, d),
            mean=np.asarray(data["mean"], dtype=float).reshape(d),
            covariance=np.asarray(data["covariance"], dtype=float).reshape(d, d),
        )


@dataclass(eq=False)
class ModelState:
    """
    theta = (rho, pi, blocks). blocks[l][k] holds the parameters of
    row cluster k inside column cluster l.
    """
    structure: CoClusterStructure
    rho: np.ndarray
    pi: List[np.ndarray]
    blocks: List[List[BlockParams]]

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.pi = [np.asarray(p, dtype=float) for p in self.pi]
        s = self.structure
        if self.rho.shape != (s.L,) or len(self.pi) != s.L or len(self.blocks) != s.L:
            raise InvalidInputError("model state does not match its structure")
        for ell in range(s.L):
            if self.pi[ell].shape != (s.K[ell],) or len(self.blocks[ell]) != s.K[ell]:
                raise InvalidInputError(f"column cluster {ell} does not match K={s.K[ell]}")
        _check_simplex(self.rho, "rho")
        for ell, p in enumerate(self.pi):
            _check_simplex(p, f"pi[{ell}]")

    def block(self, k: int, ell: int) -> BlockParams:
        return self.blocks[ell][k]

    def block_param_counts(self) -> List[List[int]]:
        return [[b.n_params for b in row] for row in self.blocks]

    def to_dict(self) -> Dict:
        return {
            "structure": self.structure.to_dict(),
            "rho": self.rho.tolist(),
            "pi": [p.tolist() for p in self.pi],
            "blocks": [[b.to_dict() for b in row] for row in self.blocks],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelState":
        try:
            return cls(
                structure=CoClusterStructure.parse(data["structure"]["L"], data["structure"]["K"]),
                rho=data["rho"],
                pi=data["pi"],
                blocks=[[BlockParams.from_dict(b) for b in row] for row in data["blocks"]],
            )
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"malformed model file: {e}") from e


@dataclass(eq=False)
class PartitionPair:
    """
    col_labels[j] in [0, L); row_labels[l, i] in [0, K_l) is the row
    cluster of observation i inside column cluster l.
    """
    col_labels: np.ndarray
    row_labels: np.ndarray

    def __post_init__(self):
        self.col_labels = np.asarray(self.col_labels, dtype=int)
        self.row_labels = np.atleast_2d(np.asarray(self.row_labels, dtype=int))
        if self.col_labels.ndim != 1:
            raise InvalidInputError("column labels must be a vector")

    @property
    def n(self) -> int:
        return self.row_labels.shape[1]

    @property
    def p(self) -> int:
        return self.col_labels.size

    def validate(self, structure: CoClusterStructure, n: int = None, p: int = None):
        if self.row_labels.shape[0] != structure.L:
            raise InvalidInputError(f"expected {structure.L} row partitions, got {self.row_labels.shape[0]}")
        if (n is not None and self.n != n) or (p is not None and self.p != p):
            raise InvalidInputError(f"partition is {self.n}x{self.p}, data is {n}x{p}")
        if self.col_labels.min() < 0 or self.col_labels.max() >= structure.L:
            raise InvalidInputError("column label out of range")
        for ell, K in enumerate(structure.K):
            labels = self.row_labels[ell]
            if labels.min() < 0 or labels.max() >= K:
                raise InvalidInputError(f"row label out of range in column cluster {ell}")

    def copy(self) -> "PartitionPair":
        return PartitionPair(self.col_labels.copy(), self.row_labels.copy())

    def columns_of(self, ell: int) -> np.ndarray:
        return np.flatnonzero(self.col_labels == ell)

    def cell_row_labels(self) -> np.ndarray:
        """(n, p) row cluster of every cell under its column's cluster."""
        return self.row_labels[self.col_labels, :].T

    def cluster_sizes(self, structure: CoClusterStructure):
        cols = np.bincount(self.col_labels, minlength=structure.L)
        rows = [np.bincount(self.row_labels[ell], minlength=K) for ell, K in enumerate(structure.K)]
        return cols, rows

    def to_dict(self) -> Dict:
        return {"col_labels": self.col_labels.tolist(), "row_labels": self.row_labels.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "PartitionPair":
        return cls(col_labels=data["col_labels"], row_labels=data["row_labels"])


def _check_simplex(weights: np.ndarray, name: str):
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError(f"{name} is not a strictly positive probability vector: {weights}")


def block_log_density(c: np.ndarray, params: BlockParams) -> float:
    """log N(c^T A; mu, Sigma) for a single m-vector c."""
    return float(params.log_density(np.asarray(c, dtype=float)[None, :])[0])


def row_log_density(row: np.ndarray, col_labels: Sequence[int], ell: int, k: int, state: ModelState) -> float:
    """Sum of block (k, ell) log-densities over the row's cells in column cluster ell."""
    columns = np.flatnonzero(np.asarray(col_labels) == ell)
    if columns.size == 0:
        return 0.0
    return float(state.block(k, ell).log_density(np.asarray(row)[columns]).sum())


def column_log_density(col: np.ndarray, row_labels: np.ndarray, ell: int, state: ModelState) -> float:
    """Each row contributes under its own row cluster inside column cluster ell."""
    col = np.asarray(col)
    labels = np.atleast_2d(row_labels)[ell]
    total = 0.0
    for k in np.unique(labels):
        members = labels == k
        total += state.block(k, ell).log_density(col[members]).sum()
    return float(total)


def cell_log_densities(coeffs: np.ndarray, state: ModelState) -> List[np.ndarray]:
    """
    out[l][k, i, j] = log p(c_ij; theta_k^l) for every cell, every block.
    Evaluated once per iteration and shared by both sampling steps.
    """
    return [
        np.stack([block.log_density(coeffs) for block in row_blocks])
        for row_blocks in state.blocks
    ]


def complete_log_likelihood_from(
    log_densities: List[np.ndarray],
    partition: PartitionPair,
    state: ModelState,
    shared_rows: bool = False,
) -> float:
    """Same as complete_log_likelihood, from precomputed cell log-densities."""
    w = partition.col_labels
    z = partition.row_labels
    n, p = z.shape[1], w.size

    col_term = np.log(state.rho)[w].sum()
    if shared_rows:
        # one row partition shared by all column clusters is counted once
        row_term = np.log(state.pi[0])[z[0]].sum()
    else:
        row_term = sum(np.log(state.pi[ell])[z[ell]].sum() for ell in range(state.structure.L))

    cell_term = 0.0
    rows = np.arange(n)
    for ell, dens in enumerate(log_densities):
        columns = np.flatnonzero(w == ell)
        if columns.size:
            cell_term += dens[z[ell], rows, :][:, columns].sum()
    return float(col_term + row_term + cell_term)


def complete_log_likelihood(grid: CoefficientGrid, partition: PartitionPair, state: ModelState,
                            shared_rows: bool = False) -> float:
    """
    sum_j log rho_{w_j} + sum_{i,l} log pi^l_{z_i^l} + sum_{i,j} log p(c_ij; theta).
    """
    coeffs = grid.coeffs if isinstance(grid, CoefficientGrid) else np.asarray(grid)
    partition.validate(state.structure, n=coeffs.shape[0], p=coeffs.shape[1])
    return complete_log_likelihood_from(cell_log_densities(coeffs, state), partition, state, shared_rows)


def describe_structure(partition: PartitionPair, structure: CoClusterStructure,
                       col_ids: Sequence[str] = None) -> List[Dict]:
    """
    One summary per column cluster. A column cluster whose rows all fall
    into a single row cluster carries no observation grouping and is
    flagged uninformative.
    """
    col_sizes, row_sizes = partition.cluster_sizes(structure)
    summary = []
    for ell in range(structure.L):
        columns = partition.columns_of(ell)
        occupied = int(np.count_nonzero(row_sizes[ell]))
        summary.append({
            "col_cluster": ell,
            "n_columns": int(col_sizes[ell]),
            "columns": [col_ids[j] for j in columns] if col_ids is not None else columns.tolist(),
            "row_cluster_sizes": row_sizes[ell].tolist(),
            "uninformative": occupied <= 1,
        })
    return summary
