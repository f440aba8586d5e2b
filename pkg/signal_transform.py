"""
Signal Transform Module
Turns raw variable-length time series into fixed-length, comparable
log-scaled periodogram vectors on a common interpolated frequency grid.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy.fft import rfft
from scipy.interpolate import CubicSpline

from exceptions import DegenerateSignalError, InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_LENGTH = 50
DEFAULT_METHOD = "linear"
MAX_DEGENERATE_FRACTION = 0.1
METHODS = ("linear", "cubic")


@dataclass(frozen=True)
class TimeSeries:
    """A sampled signal with a constant sampling interval."""
    values: np.ndarray
    sample_interval: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise InvalidInputError(f"time series needs at least 2 values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("time series contains non-finite values")
        if not (np.isfinite(self.sample_interval) and self.sample_interval > 0):
            raise InvalidInputError(f"sample interval must be positive, got {self.sample_interval}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sample_interval", float(self.sample_interval))

    @property
    def length(self) -> int:
        return int(self.values.size)


@dataclass
class TimeSeriesDataset:
    """
    n x p grid of time series. series[i][j] is the signal of observation i
    for feature j.
    """
    series: List[List[TimeSeries]]
    row_ids: List[str] = None
    col_ids: List[str] = None

    def __post_init__(self):
        n = len(self.series)
        if n == 0:
            raise InvalidInputError("dataset has no rows")
        p = len(self.series[0])
        if p == 0:
            raise InvalidInputError("dataset has no columns")
        for i, row in enumerate(self.series):
            if len(row) != p:
                raise InvalidInputError(f"row {i} has {len(row)} cells, expected {p}")
            for j, cell in enumerate(row):
                if not isinstance(cell, TimeSeries):
                    raise InvalidInputError(f"cell ({i}, {j}) is missing")
        if self.row_ids is None:
            self.row_ids = [f"r{i}" for i in range(n)]
        if self.col_ids is None:
            self.col_ids = [f"c{j}" for j in range(p)]
        self.row_ids = [str(r) for r in self.row_ids]
        self.col_ids = [str(c) for c in self.col_ids]
        if len(self.row_ids) != n or len(self.col_ids) != p:
            raise InvalidInputError("identifier counts do not match the grid shape")
        if len(set(self.row_ids)) != n or len(set(self.col_ids)) != p:
            raise InvalidInputError("row and column identifiers must be unique")

    @property
    def n(self) -> int:
        return len(self.series)

    @property
    def p(self) -> int:
        return len(self.series[0])

    def cells(self):
        for i, row in enumerate(self.series):
            for j, cell in enumerate(row):
                yield i, j, cell


@dataclass(frozen=True)
class Periodogram:
    frequencies: np.ndarray
    powers: np.ndarray
    n_samples: int = 0

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        powers = np.asarray(self.powers, dtype=float)
        if freqs.shape != powers.shape or freqs.ndim != 1:
            raise InvalidInputError("frequencies and powers must be 1-d arrays of equal length")
        if freqs.size and (freqs[0] != 0 or np.any(np.diff(freqs) <= 0)):
            raise InvalidInputError("frequencies must start at 0 and increase strictly")
        if np.any(powers < 0):
            raise InvalidInputError("powers must be nonnegative")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "powers", powers)

    def total_power(self) -> float:
        """One-sided power with interior bins doubled, per sample.

        Equals the mean squared value of the source series.
        """
        l = self.n_samples
        if l < 2:
            raise InvalidInputError("total power needs the source series length")
        weights = np.full(self.powers.size, 2.0)
        weights[0] = 1.0
        if l % 2 == 0:
            # Nyquist bin has no mirror image
            weights[-1] = 1.0
        return float(np.sum(weights * self.powers) / l)


@dataclass(frozen=True)
class CommonFrequencyGrid:
    gap: float
    length: int

    def __post_init__(self):
        if not (np.isfinite(self.gap) and self.gap > 0):
            raise InvalidInputError(f"grid gap must be positive, got {self.gap}")
        if int(self.length) != self.length or self.length < 2:
            raise InvalidInputError(f"grid length must be an integer >= 2, got {self.length}")
        object.__setattr__(self, "gap", float(self.gap))
        object.__setattr__(self, "length", int(self.length))

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.length) * self.gap

    def to_dict(self) -> Dict:
        return {"gap": self.gap, "length": self.length}


@dataclass
class CoefficientGrid:
    """
    Model input: an n x p x m array of log-normalized periodogram vectors.
    `degenerate[i, j]` marks cells replaced by the zero vector.
    """
    coeffs: np.ndarray
    grid: CommonFrequencyGrid
    degenerate: np.ndarray = None
    row_ids: List[str] = None
    col_ids: List[str] = None
    method: str = DEFAULT_METHOD

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 3:
            raise InvalidInputError("coefficients must form an n x p x m array")
        n, p, m = self.coeffs.shape
        if n < 1 or p < 1:
            raise InvalidInputError("coefficient grid is empty")
        if m != self.grid.length:
            raise InvalidInputError(f"vector length {m} does not match grid length {self.grid.length}")
        if not np.all(np.isfinite(self.coeffs)):
            raise InvalidInputError("coefficient grid contains non-finite values")
        if self.degenerate is None:
            self.degenerate = np.zeros((n, p), dtype=bool)
        self.degenerate = np.asarray(self.degenerate, dtype=bool)
        if self.row_ids is None:
            self.row_ids = [f"r{i}" for i in range(n)]
        if self.col_ids is None:
            self.col_ids = [f"c{j}" for j in range(p)]
        if len(self.row_ids) != n or len(self.col_ids) != p or self.degenerate.shape != (n, p):
            raise InvalidInputError("grid metadata does not match the coefficient shape")

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def p(self) -> int:
        return self.coeffs.shape[1]

    @property
    def m(self) -> int:
        return self.coeffs.shape[2]

    @property
    def n_degenerate(self) -> int:
        return int(self.degenerate.sum())

    def column_features(self) -> np.ndarray:
        """(p, m) matrix: each column's coefficient vectors averaged over rows."""
        return self.coeffs.mean(axis=0)

    def row_features(self, columns: Sequence[int]) -> np.ndarray:
        """(n, |columns| * m) matrix: each row's cells in `columns`, concatenated."""
        columns = np.asarray(columns, dtype=int)
        return self.coeffs[:, columns, :].reshape(self.n, -1)

    def subgrid(self, columns: Sequence[int]) -> "CoefficientGrid":
        columns = np.asarray(columns, dtype=int)
        return CoefficientGrid(
            coeffs=self.coeffs[:, columns, :],
            grid=self.grid,
            degenerate=self.degenerate[:, columns],
            row_ids=list(self.row_ids),
            col_ids=[self.col_ids[j] for j in columns],
            method=self.method,
        )

    def to_dict(self) -> Dict:
        return {
            "grid": self.grid.to_dict(),
            "method": self.method,
            "shape": list(self.coeffs.shape),
            "row_ids": list(self.row_ids),
            "col_ids": list(self.col_ids),
            "degenerate": self.degenerate.astype(int).ravel().tolist(),
            "coeffs": self.coeffs.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CoefficientGrid":
        try:
            shape = tuple(int(s) for s in data["shape"])
            return cls(
                coeffs=np.asarray(data["coeffs"], dtype=float).reshape(shape),
                grid=CommonFrequencyGrid(**data["grid"]),
                degenerate=np.asarray(data["degenerate"], dtype=bool).reshape(shape[:2]),
                row_ids=[str(r) for r in data["row_ids"]],
                col_ids=[str(c) for c in data["col_ids"]],
                method=data.get("method", DEFAULT_METHOD),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed coefficient grid: {e}") from e


def compute_periodogram(ts: TimeSeries) -> Periodogram:
    """
    One-sided periodogram |DFT|^2 / l for bins 0 .. floor(l/2), DC kept.
    """
    if not isinstance(ts, TimeSeries):
        ts = TimeSeries(np.asarray(ts, dtype=float))
    l = ts.length
    spectrum = rfft(ts.values)
    powers = np.abs(spectrum) ** 2 / l
    frequencies = np.arange(powers.size) / (l * ts.sample_interval)
    return Periodogram(frequencies=frequencies, powers=powers, n_samples=l)


def common_frequency_grid(dataset: TimeSeriesDataset, length: int = DEFAULT_LENGTH) -> CommonFrequencyGrid:
    """Grid with the sample-average frequency gap over every series of the dataset."""
    if length < 2:
        raise InvalidInputError(f"grid length must be >= 2, got {length}")
    gaps = [1.0 / (cell.length * cell.sample_interval) for _, _, cell in dataset.cells()]
    return CommonFrequencyGrid(gap=float(np.mean(gaps)), length=length)


def interpolate_periodogram(p: Periodogram, grid: CommonFrequencyGrid, method: str = DEFAULT_METHOD) -> np.ndarray:
    """
    Power at every grid frequency. Beyond the source's last frequency the
    last power is repeated. Negative spline overshoots are floored at 0.
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown interpolation method '{method}'")
    n_points = p.frequencies.size
    needed = 2 if method == "linear" else 4
    if n_points < needed:
        raise InvalidInputError(f"{method} interpolation needs {needed} source points, got {n_points}")

    targets = np.minimum(grid.frequencies, p.frequencies[-1])
    if method == "linear":
        values = np.interp(targets, p.frequencies, p.powers)
    else:
        values = CubicSpline(p.frequencies, p.powers)(targets)
    return np.maximum(values, 0.0)


def log_normalize(interpolated: np.ndarray) -> np.ndarray:
    """z(log(P + eps)) with eps = 1e-12 * (1 + max(P)); sample sd (ddof=1)."""
    values = np.asarray(interpolated, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise InvalidInputError("log_normalize needs a vector of at least 2 entries")
    if np.any(values < 0):
        raise InvalidInputError("periodogram powers must be nonnegative")

    eps = 1e-12 * (1.0 + values.max())
    logs = np.log(values + eps)
    centered = logs - logs.mean()
    sd = centered.std(ddof=1)
    if not sd > 1e-12 * max(1.0, np.abs(logs).max()):
        raise DegenerateSignalError("log-periodogram has zero variance")
    return centered / sd


def transform_cell(ts: TimeSeries, grid: CommonFrequencyGrid, method: str = DEFAULT_METHOD) -> np.ndarray:
    # a constant series only has DC power: no spectral shape to compare
    if np.ptp(ts.values) == 0:
        raise DegenerateSignalError("constant series")
    return log_normalize(interpolate_periodogram(compute_periodogram(ts), grid, method))


def transform_dataset(
    dataset: TimeSeriesDataset,
    length: int = DEFAULT_LENGTH,
    method: str = DEFAULT_METHOD,
    max_degenerate_fraction: float = MAX_DEGENERATE_FRACTION,
) -> CoefficientGrid:
    """
    Runs the periodogram -> interpolation -> log-normalization pipeline on
    every cell. Constant cells become zero vectors and are flagged; too many
    of them raises DegenerateSignalError.
    """
    grid = common_frequency_grid(dataset, length)
    logger.info(f"Transforming {dataset.n}x{dataset.p} series onto {length} frequencies (gap {grid.gap:.6g}, {method}).")

    coeffs = np.zeros((dataset.n, dataset.p, grid.length))
    degenerate = np.zeros((dataset.n, dataset.p), dtype=bool)
    for i, j, cell in dataset.cells():
        try:
            coeffs[i, j] = transform_cell(cell, grid, method)
        except DegenerateSignalError:
            degenerate[i, j] = True
        except InvalidInputError as e:
            raise InvalidInputError(f"cell ({dataset.row_ids[i]}, {dataset.col_ids[j]}): {e}") from e

    n_bad = int(degenerate.sum())
    if n_bad:
        fraction = n_bad / degenerate.size
        logger.warning(f"{n_bad} degenerate cells ({fraction:.1%}) replaced by zero vectors.")
        if fraction >= max_degenerate_fraction:
            raise DegenerateSignalError(
                f"{n_bad} of {degenerate.size} cells are degenerate (limit {max_degenerate_fraction:.0%})",
                n_degenerate=n_bad,
            )

    return CoefficientGrid(
        coeffs=coeffs,
        grid=grid,
        degenerate=degenerate,
        row_ids=list(dataset.row_ids),
        col_ids=list(dataset.col_ids),
        method=method,
    )


if __name__ == "__main__":
    t = np.arange(64)
    ts = TimeSeries(np.cos(2 * np.pi * t / 8))
    pg = compute_periodogram(ts)

    print("\n--- Periodogram of a pure tone ---\n")
    peak = int(np.argmax(pg.powers))
    print(f"Peak bin: {peak} at frequency {pg.frequencies[peak]:.4f}")
    print(f"Total power: {pg.total_power():.6f} (mean square {np.mean(ts.values ** 2):.6f})")
