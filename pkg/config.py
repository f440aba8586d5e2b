"""
Configuration Module
Run settings layered as: command-line flag > JSON config file > environment
(.env supported) > built-in default.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

from dotenv import load_dotenv

from exceptions import InvalidInputError
from inference import SemGibbsConfig
from initialization import InitStrategy
from model_selection import SelectionConfig
from signal_transform import DEFAULT_LENGTH, DEFAULT_METHOD, METHODS

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

ENV_VARS = {
    "seed": ("FUNCLBM_SEED", int),
    "length": ("FUNCLBM_TRANSFORM_LENGTH", int),
    "n_runs": ("FUNCLBM_N_RUNS", int),
    "n_jobs": ("FUNCLBM_N_JOBS", int),
    "output_dir": ("FUNCLBM_OUTPUT_DIR", str),
}

DEFAULTS = {
    "seed": 0,
    "input": None,
    "output_dir": "output",
    "length": DEFAULT_LENGTH,
    "method": DEFAULT_METHOD,
    "n_runs": 8,
    "n_jobs": 1,
    "init": "random",
    "kmeans_iters": 20,
    "kmeans_restarts": 5,
    "max_iterations": 100,
    "burn_in": 20,
    "convergence_tol": 1e-6,
    "convergence_window": 5,
    "subspace_dim": 0.9,
    "max_subspace_dim": 10,
    "strategy": "grid",
    "L_max": 5,
    "K_max": 5,
    "runs_per_candidate": 10,
    "progress": False,
}


def parse_subspace_dim(value) -> Union[int, float]:
    """'3' fixes d = 3; '0.9' is a variance-explained threshold."""
    if isinstance(value, (int, float)):
        return value
    try:
        return float(value) if any(ch in str(value) for ch in ".eE") else int(value)
    except ValueError as e:
        raise InvalidInputError(f"invalid subspace dimension '{value}'") from e


def env_settings() -> Dict:
    settings = {}
    for key, (name, cast) in ENV_VARS.items():
        raw = os.environ.get(name)
        if raw is None or raw == "":
            continue
        try:
            settings[key] = cast(raw)
        except ValueError as e:
            raise InvalidInputError(f"environment variable {name}={raw!r} is not a valid {cast.__name__}") from e
    return settings


def file_settings(path: Optional[str]) -> Dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise InvalidInputError(f"config file not found: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{path}: invalid JSON ({e.msg})", line=e.lineno) from e
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: expected a JSON object of settings")
    data = {key.replace("-", "_"): value for key, value in data.items()}
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        logger.warning(f"Ignoring unknown config keys: {unknown}")
    return {key: value for key, value in data.items() if key in DEFAULTS}


@dataclass
class RunConfig:
    seed: int = 0
    input_path: Optional[str] = None
    output_dir: str = "output"
    transform_length: int = DEFAULT_LENGTH
    transform_method: str = DEFAULT_METHOD
    n_runs: int = 8
    n_jobs: int = 1
    progress: bool = False
    sem: SemGibbsConfig = field(default_factory=SemGibbsConfig)
    init: InitStrategy = field(default_factory=InitStrategy)
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    def validate(self):
        if self.seed is None:
            raise InvalidInputError("a seed is required")
        if self.input_path and not os.path.exists(self.input_path):
            raise InvalidInputError(f"input not found: {self.input_path}")
        if self.transform_length < 2:
            raise InvalidInputError("transform length must be >= 2")
        if self.transform_method not in METHODS:
            raise InvalidInputError(f"unknown interpolation method '{self.transform_method}'")
        if self.n_runs < 1 or self.n_jobs < 1:
            raise InvalidInputError("n_runs and n_jobs must be >= 1")
        return self

    @classmethod
    def from_settings(cls, settings: Dict) -> "RunConfig":
        s = {**DEFAULTS, **settings}
        try:
            sem = SemGibbsConfig(
                max_iterations=int(s["max_iterations"]),
                burn_in=int(s["burn_in"]),
                convergence_tol=float(s["convergence_tol"]),
                convergence_window=int(s["convergence_window"]),
                seed=int(s["seed"]),
                subspace_dim=parse_subspace_dim(s["subspace_dim"]),
                max_subspace_dim=int(s["max_subspace_dim"]),
            )
            init = InitStrategy(kind=s["init"], kmeans_iters=int(s["kmeans_iters"]),
                                kmeans_restarts=int(s["kmeans_restarts"]))
            selection = SelectionConfig(
                L_max=int(s["L_max"]),
                K_max=int(s["K_max"]),
                runs_per_candidate=int(s["runs_per_candidate"]),
                strategy=s["strategy"],
                sem=sem,
                init=init,
                n_jobs=int(s["n_jobs"]),
                progress=bool(s["progress"]),
            )
            return cls(
                seed=int(s["seed"]),
                input_path=s["input"],
                output_dir=s["output_dir"],
                transform_length=int(s["length"]),
                transform_method=s["method"],
                n_runs=int(s["n_runs"]),
                n_jobs=int(s["n_jobs"]),
                progress=bool(s["progress"]),
                sem=sem,
                init=init,
                selection=selection,
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, InvalidInputError):
                raise
            raise InvalidInputError(f"invalid setting: {e}") from e


def resolve(flags: Dict, config_path: Optional[str] = None) -> RunConfig:
    """flags holds parsed command-line values; None means 'not given'."""
    settings = {**env_settings(), **file_settings(config_path)}
    settings.update({key: value for key, value in flags.items() if key in DEFAULTS and value is not None})
    return RunConfig.from_settings(settings).validate()
