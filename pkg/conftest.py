import pytest

from datagen import GenerativeSpec, Prototype, generate
from inference import SemGibbsConfig
from model_core import CoClusterStructure
from signal_transform import transform_dataset


@pytest.fixture(scope="session")
def small_spec():
    """20 observations, 12 features, two column clusters of two row clusters each."""
    return GenerativeSpec(
        structure=CoClusterStructure(L=2, K=(2, 2)),
        col_sizes=(6, 6),
        row_sizes=((10, 10), (12, 8)),
        prototypes=(
            (Prototype("sine", (3, 1)), Prototype("gaussian_bump", (0.5, 0.08))),
            (Prototype("damped_oscillation", (10, 4)), Prototype("linear_ramp", (1,))),
        ),
        series_length=64,
        seed=0,
    )


@pytest.fixture(scope="session")
def small_data(small_spec):
    return generate(small_spec)


@pytest.fixture(scope="session")
def small_dataset(small_data):
    return small_data[0]


@pytest.fixture(scope="session")
def small_truth(small_data):
    return small_data[1]


@pytest.fixture(scope="session")
def small_grid(small_dataset):
    return transform_dataset(small_dataset, length=16)


@pytest.fixture
def fast_sem():
    return SemGibbsConfig(max_iterations=30, burn_in=5, convergence_window=3, seed=0, subspace_dim=2)
