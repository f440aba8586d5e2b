from itertools import combinations

import numpy as np
import pytest

from datagen import (
    BENCHMARK_PROTOTYPES,
    GenerativeSpec,
    Prototype,
    benchmark_90x90,
    benchmark_spec,
    generate,
)
from exceptions import InvalidInputError
from model_core import CoClusterStructure


def one_block_spec(**kwargs):
    defaults = dict(
        structure=CoClusterStructure(L=1, K=(1,)),
        col_sizes=(2,),
        row_sizes=((2,),),
        prototypes=((Prototype("sine", (2, 1)),),),
        series_length=50,
        seed=0,
    )
    return GenerativeSpec(**{**defaults, **kwargs})


def test_prototype_values():
    t = np.array([0.0, 0.25, 0.5])
    np.testing.assert_allclose(Prototype("sine", (1, 2))(t), [0.0, 2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(Prototype("sigmoid", (0.5, 10))(t)[2], 0.5)
    np.testing.assert_allclose(Prototype("gaussian_bump", (0.5, 0.1))(t)[2], 1.0)
    np.testing.assert_allclose(Prototype("linear_ramp", (2,))(t), [0.0, 0.5, 1.0])
    np.testing.assert_allclose(Prototype("constant", (3,))(t), 3.0)
    np.testing.assert_allclose(Prototype("square_wave", (1,))(np.array([0.1, 0.6])), [1.0, -1.0])
    np.testing.assert_allclose(Prototype("damped_oscillation", (1, 2))(t)[0], 1.0)


def test_prototype_validation_and_roundtrip():
    with pytest.raises(InvalidInputError):
        Prototype("chirp", (1,))
    with pytest.raises(InvalidInputError):
        Prototype("sine", (1,))
    proto = Prototype("damped_oscillation", (10, 4))
    assert Prototype.from_dict(proto.to_dict()) == proto


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        one_block_spec(row_sizes=((3,),), col_sizes=(2, 1))
    with pytest.raises(InvalidInputError):
        GenerativeSpec(
            structure=CoClusterStructure(L=1, K=(2,)),
            col_sizes=(3,),
            row_sizes=((2, 2),),
            prototypes=((Prototype("constant", (1,)), Prototype("constant", (1,))),),
        )
    with pytest.raises(InvalidInputError):
        GenerativeSpec(
            structure=CoClusterStructure(L=2, K=(1, 1)),
            col_sizes=(1, 1),
            row_sizes=((4,), (5,)),
            prototypes=((Prototype("constant", (1,)),), (Prototype("constant", (2,)),)),
        )
    with pytest.raises(InvalidInputError):
        one_block_spec(noise_sd=0.0)


def test_vanishing_noise_reproduces_the_prototype():
    spec = one_block_spec(noise_sd=1e-9)
    dataset, _ = generate(spec)
    u = np.arange(50) / 49
    for _, _, cell in dataset.cells():
        assert np.max(np.abs(cell.values - np.sin(2 * np.pi * 2 * u))) < 1e-6
        assert cell.sample_interval == pytest.approx(1 / 49)


def test_noise_is_centered():
    spec = one_block_spec(noise_sd=0.02, shift_sd=0.0, series_length=10000, col_sizes=(1,), row_sizes=((1,),))
    dataset, _ = generate(spec)
    u = np.arange(10000) / 9999
    residual = dataset.series[0][0].values - np.sin(2 * np.pi * 2 * u)
    assert abs(residual.mean()) < 3 * 0.02 / np.sqrt(10000)


def test_same_seed_same_dataset():
    a, _ = generate(one_block_spec(seed=4))
    b, _ = generate(one_block_spec(seed=4))
    c, _ = generate(one_block_spec(seed=5))
    np.testing.assert_array_equal(a.series[1][1].values, b.series[1][1].values)
    assert not np.array_equal(a.series[1][1].values, c.series[1][1].values)


def test_spec_roundtrip():
    spec = benchmark_spec(seed=3)
    restored = GenerativeSpec.from_dict(spec.to_dict())
    assert restored.to_dict() == spec.to_dict()


def test_benchmark_layout():
    dataset, truth = benchmark_90x90(seed=0)
    assert (dataset.n, dataset.p) == (90, 90)
    assert np.bincount(truth.col_labels).tolist() == [45, 15, 30]
    assert np.bincount(truth.row_labels[0]).tolist() == [20, 40, 30]
    assert np.bincount(truth.row_labels[1]).tolist() == [60, 30]
    assert np.bincount(truth.row_labels[2]).tolist() == [40, 50]
    truth.validate(CoClusterStructure(L=3, K=(3, 2, 2)), n=90, p=90)
    assert dataset.row_ids[0] == "r000" and dataset.col_ids[89] == "c089"


def test_benchmark_prototypes_are_far_apart():
    protos = [proto for protos in BENCHMARK_PROTOTYPES for proto in protos]
    assert len(set(protos)) == 7
    u = np.arange(100) / 99
    for a, b in combinations(protos, 2):
        assert np.max(np.abs(a(u) - b(u))) >= 10 * 0.02


def test_benchmark_is_learnable_by_nearest_prototype():
    dataset, truth = benchmark_90x90(seed=1)
    protos = [proto for protos in BENCHMARK_PROTOTYPES for proto in protos]
    block_of = {(ell, k): index for index, (ell, k) in enumerate(
        (ell, k) for ell, protos_l in enumerate(BENCHMARK_PROTOTYPES) for k in range(len(protos_l)))}
    u = np.arange(100) / 99
    # each prototype under a range of argument shifts
    shifts = np.linspace(-0.1, 0.1, 81)
    templates = np.stack([[proto(u + s) for s in shifts] for proto in protos])

    cell_rows = truth.cell_row_labels()
    correct = 0
    for i, j, cell in dataset.cells():
        distances = np.linalg.norm(templates - cell.values, axis=2).min(axis=1)
        correct += int(np.argmin(distances)) == block_of[(truth.col_labels[j], cell_rows[i, j])]
    assert correct >= 0.99 * dataset.n * dataset.p
