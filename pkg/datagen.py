"""
Datagen Module
Synthetic conditional block datasets: every cell of block (k, l) is a
noisy, randomly shifted sampling of the block's prototype curve.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import square
from scipy.special import expit

from exceptions import InvalidInputError
from model_core import CoClusterStructure, PartitionPair
from signal_transform import TimeSeries, TimeSeriesDataset

logger = logging.getLogger(__name__)

DEFAULT_NOISE_SD = 0.02
DEFAULT_SERIES_LENGTH = 100

# parameter names of every prototype kind, in positional order
PROTOTYPE_PARAMS = {
    "sine": ("freq", "amplitude"),
    "sigmoid": ("center", "slope"),
    "gaussian_bump": ("center", "width"),
    "linear_ramp": ("slope",),
    "constant": ("level",),
    "square_wave": ("freq",),
    "damped_oscillation": ("freq", "decay"),
}


@dataclass(frozen=True)
class Prototype:
    """A parametric curve on [0, 1]. Hashable, so duplicates are easy to spot."""
    kind: str
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in PROTOTYPE_PARAMS:
            raise InvalidInputError(f"unknown prototype '{self.kind}', expected one of {sorted(PROTOTYPE_PARAMS)}")
        params = tuple(float(v) for v in self.params)
        if len(params) != len(PROTOTYPE_PARAMS[self.kind]):
            raise InvalidInputError(f"{self.kind} takes parameters {PROTOTYPE_PARAMS[self.kind]}, got {params}")
        if not np.all(np.isfinite(params)):
            raise InvalidInputError(f"{self.kind} parameters must be finite")
        if self.kind == "gaussian_bump" and params[1] <= 0:
            raise InvalidInputError("gaussian_bump width must be positive")
        object.__setattr__(self, "params", params)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a = self.params
        if self.kind == "sine":
            return a[1] * np.sin(2 * np.pi * a[0] * t)
        if self.kind == "sigmoid":
            return expit(a[1] * (t - a[0]))
        if self.kind == "gaussian_bump":
            return np.exp(-0.5 * ((t - a[0]) / a[1]) ** 2)
        if self.kind == "linear_ramp":
            return a[0] * t
        if self.kind == "constant":
            return np.full_like(t, a[0])
        if self.kind == "square_wave":
            return square(2 * np.pi * a[0] * t)
        return np.exp(-a[1] * t) * np.cos(2 * np.pi * a[0] * t)

    def to_dict(self) -> Dict:
        return {"kind": self.kind, **dict(zip(PROTOTYPE_PARAMS[self.kind], self.params))}

    @classmethod
    def from_dict(cls, data: Dict) -> "Prototype":
        kind = data.get("kind")
        if kind not in PROTOTYPE_PARAMS:
            raise InvalidInputError(f"unknown prototype '{kind}'")
        try:
            return cls(kind, tuple(data[name] for name in PROTOTYPE_PARAMS[kind]))
        except KeyError as e:
            raise InvalidInputError(f"prototype {kind} is missing parameter {e}") from e


@dataclass
class GenerativeSpec:
    """
    prototypes[l][k] is the curve of row cluster k inside column cluster l.
    shift_sd is the standard deviation of the per-cell argument shift and
    defaults to noise_sd.
    """
    structure: CoClusterStructure
    col_sizes: Sequence[int]
    row_sizes: Sequence[Sequence[int]]
    prototypes: Sequence[Sequence[Prototype]]
    noise_sd: float = DEFAULT_NOISE_SD
    series_length: int = DEFAULT_SERIES_LENGTH
    seed: int = 0
    shift_sd: Optional[float] = None

    def __post_init__(self):
        s = self.structure
        self.col_sizes = [int(c) for c in self.col_sizes]
        self.row_sizes = [[int(r) for r in sizes] for sizes in self.row_sizes]
        if self.shift_sd is None:
            self.shift_sd = self.noise_sd
        if len(self.col_sizes) != s.L or any(c < 1 for c in self.col_sizes):
            raise InvalidInputError(f"need {s.L} positive column-cluster sizes, got {self.col_sizes}")
        if len(self.row_sizes) != s.L or len(self.prototypes) != s.L:
            raise InvalidInputError("row sizes and prototypes need one entry per column cluster")
        n = sum(self.row_sizes[0])
        for ell, K in enumerate(s.K):
            sizes = self.row_sizes[ell]
            if len(sizes) != K or any(r < 1 for r in sizes) or sum(sizes) != n:
                raise InvalidInputError(f"column cluster {ell}: need {K} positive row-cluster sizes summing to {n}")
            protos = list(self.prototypes[ell])
            if len(protos) != K:
                raise InvalidInputError(f"column cluster {ell}: need {K} prototypes, got {len(protos)}")
            if len(set(protos)) != K:
                raise InvalidInputError(f"column cluster {ell}: prototypes must be distinct")
        if self.noise_sd <= 0 or self.shift_sd < 0:
            raise InvalidInputError("noise_sd must be positive and shift_sd nonnegative")
        if self.series_length < 2:
            raise InvalidInputError("series_length must be >= 2")
        if self.seed < 0:
            raise InvalidInputError("seed must be nonnegative")

    @property
    def n(self) -> int:
        return sum(self.row_sizes[0])

    @property
    def p(self) -> int:
        return sum(self.col_sizes)

    def truth(self) -> PartitionPair:
        """Contiguous layout: clusters occupy consecutive index ranges."""
        cols = np.repeat(np.arange(self.structure.L), self.col_sizes)
        rows = np.stack([np.repeat(np.arange(K), self.row_sizes[ell]) for ell, K in enumerate(self.structure.K)])
        return PartitionPair(cols, rows)

    def to_dict(self) -> Dict:
        return {
            **self.structure.to_dict(),
            "col_sizes": list(self.col_sizes),
            "row_sizes": [list(sizes) for sizes in self.row_sizes],
            "prototypes": [[proto.to_dict() for proto in protos] for protos in self.prototypes],
            "noise_sd": self.noise_sd,
            "shift_sd": self.shift_sd,
            "series_length": self.series_length,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GenerativeSpec":
        try:
            return cls(
                structure=CoClusterStructure.parse(data["L"], data["K"]),
                col_sizes=data["col_sizes"],
                row_sizes=data["row_sizes"],
                prototypes=[[Prototype.from_dict(p) for p in protos] for protos in data["prototypes"]],
                noise_sd=float(data.get("noise_sd", DEFAULT_NOISE_SD)),
                series_length=int(data.get("series_length", DEFAULT_SERIES_LENGTH)),
                seed=int(data.get("seed", 0)),
                shift_sd=data.get("shift_sd"),
            )
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"malformed generative spec: {e}") from e


def _ids(prefix: str, count: int) -> List[str]:
    width = max(3, len(str(count - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(count)]


def generate(spec: GenerativeSpec):
    """
    Draws every cell from its own substream keyed by (i, j), so the dataset
    depends only on the seed.
    Returns:
        (TimeSeriesDataset, PartitionPair): the series and the true partition.
    """
    truth = spec.truth()
    cell_rows = truth.cell_row_labels()
    length = spec.series_length
    u = np.arange(length) / (length - 1)
    interval = 1.0 / (length - 1)

    series = []
    for i in range(spec.n):
        row = []
        for j in range(spec.p):
            ell = truth.col_labels[j]
            proto = spec.prototypes[ell][cell_rows[i, j]]
            rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(i, j)))
            shift = rng.normal(0.0, spec.shift_sd)
            values = proto(u + shift) + rng.normal(0.0, spec.noise_sd, size=length)
            row.append(TimeSeries(values, interval))
        series.append(row)

    logger.info(f"Generated {spec.n}x{spec.p} dataset with L={spec.structure.L}, K=({spec.structure.key()}).")
    return TimeSeriesDataset(series, _ids("r", spec.n), _ids("c", spec.p)), truth


BENCHMARK_STRUCTURE = CoClusterStructure(L=3, K=(3, 2, 2))
BENCHMARK_COL_SIZES = (45, 15, 30)
BENCHMARK_ROW_SIZES = ((20, 40, 30), (60, 30), (40, 50))
BENCHMARK_PROTOTYPES = (
    (Prototype("sine", (3, 1)), Prototype("square_wave", (5,)), Prototype("gaussian_bump", (0.5, 0.08))),
    (Prototype("damped_oscillation", (10, 4)), Prototype("linear_ramp", (1,))),
    (Prototype("sine", (15, 1)), Prototype("sigmoid", (0.5, 20))),
)


def benchmark_spec(seed: int = 0, noise_sd: float = DEFAULT_NOISE_SD,
                   series_length: int = DEFAULT_SERIES_LENGTH) -> GenerativeSpec:
    return GenerativeSpec(
        structure=BENCHMARK_STRUCTURE,
        col_sizes=BENCHMARK_COL_SIZES,
        row_sizes=BENCHMARK_ROW_SIZES,
        prototypes=BENCHMARK_PROTOTYPES,
        noise_sd=noise_sd,
        series_length=series_length,
        seed=seed,
    )


def benchmark_90x90(seed: int = 0):
    """90x90 dataset, column clusters (45, 15, 30), seven distinct prototypes."""
    return generate(benchmark_spec(seed))


if __name__ == "__main__":
    dataset, truth = benchmark_90x90(seed=0)
    print("\n--- 90x90 benchmark ---\n")
    print(f"Shape: {dataset.n}x{dataset.p}, series length {dataset.series[0][0].length}")
    print(f"Column clusters: {np.bincount(truth.col_labels).tolist()}")
    for ell, labels in enumerate(truth.row_labels):
        print(f"  row clusters in column cluster {ell}: {np.bincount(labels).tolist()}")
