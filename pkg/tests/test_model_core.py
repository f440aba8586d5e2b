import numpy as np
import pytest
from scipy.stats import multivariate_normal

from exceptions import InvalidInputError, InvalidStructureError
from model_core import (
    BlockParams,
    CoClusterStructure,
    ModelState,
    PartitionPair,
    block_log_density,
    column_log_density,
    complete_log_likelihood,
    describe_structure,
    row_log_density,
)


def identity_block(m=3, d=2):
    return BlockParams(loadings=np.eye(m)[:, :d], mean=np.zeros(d), covariance=np.eye(d))


def two_by_two_state():
    structure = CoClusterStructure(L=2, K=(2, 1))
    shifted = BlockParams(loadings=np.eye(3)[:, :2], mean=np.array([1.0, -1.0]), covariance=2 * np.eye(2))
    return ModelState(
        structure=structure,
        rho=np.array([0.5, 0.5]),
        pi=[np.array([0.25, 0.75]), np.array([1.0])],
        blocks=[[identity_block(), shifted], [identity_block()]],
    )


def test_structure_parsing_and_counts():
    s = CoClusterStructure.parse(3, "3,2,2")
    assert s.K == (3, 2, 2)
    assert s.n_blocks == 7
    assert s.max_K == 3
    assert s.key() == "3,2,2"
    assert CoClusterStructure.shared(2, 3).K == (2, 2, 2)


def test_structure_validation():
    with pytest.raises(InvalidStructureError):
        CoClusterStructure(L=2, K=(2,))
    with pytest.raises(InvalidStructureError):
        CoClusterStructure(L=1, K=(0,))
    with pytest.raises(InvalidStructureError):
        CoClusterStructure(L=0, K=())
    with pytest.raises(InvalidStructureError):
        CoClusterStructure(L=3, K=(1, 1, 1)).check_fits(n=10, p=2)
    with pytest.raises(InvalidStructureError):
        CoClusterStructure(L=1, K=(5,)).check_fits(n=4, p=2)


def test_block_density_at_the_mean():
    # 2-d standard normal at its mean: -log(2 pi)
    assert block_log_density(np.zeros(3), identity_block()) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)


def test_block_density_projects_before_evaluating():
    loadings = np.array([[1.0], [1.0], [0.0]]) / np.sqrt(2)
    block = BlockParams(loadings=loadings, mean=np.array([0.5]), covariance=np.array([[0.3]]))
    c = np.array([1.0, 2.0, 9.0])
    expected = multivariate_normal(mean=[0.5], cov=[[0.3]]).logpdf(c @ loadings)
    assert block_log_density(c, block) == pytest.approx(expected, abs=1e-12)


def test_block_parameter_count():
    block = BlockParams(loadings=np.eye(5)[:, :2], mean=np.zeros(2), covariance=np.eye(2))
    assert block.n_params == 5 * 2 + 2 + 3


def test_block_shape_mismatch():
    with pytest.raises(InvalidInputError):
        BlockParams(loadings=np.eye(3)[:, :2], mean=np.zeros(3), covariance=np.eye(2))


def test_state_requires_probability_vectors():
    structure = CoClusterStructure(L=1, K=(2,))
    with pytest.raises(InvalidInputError):
        ModelState(structure=structure, rho=[1.0], pi=[[0.6, 0.6]], blocks=[[identity_block(), identity_block()]])
    with pytest.raises(InvalidInputError):
        ModelState(structure=structure, rho=[1.0], pi=[[1.0, 0.0]], blocks=[[identity_block(), identity_block()]])


def test_single_cell_likelihood_is_the_cell_term():
    structure = CoClusterStructure(L=1, K=(1,))
    state = ModelState(structure=structure, rho=[1.0], pi=[[1.0]], blocks=[[identity_block()]])
    partition = PartitionPair([0], [[0]])
    c = np.array([[[0.3, -0.2, 4.0]]])
    expected = block_log_density(c[0, 0], identity_block())
    assert complete_log_likelihood(c, partition, state) == pytest.approx(expected, abs=1e-12)


def test_complete_likelihood_matches_direct_sum():
    state = two_by_two_state()
    rng = np.random.default_rng(0)
    coeffs = rng.normal(size=(4, 3, 3))
    partition = PartitionPair([0, 1, 0], [[0, 1, 1, 0], [0, 0, 0, 0]])

    expected = 3 * np.log(0.5)
    expected += 2 * np.log(0.25) + 2 * np.log(0.75)
    for i in range(4):
        for j in range(3):
            ell = partition.col_labels[j]
            k = partition.row_labels[ell, i]
            expected += block_log_density(coeffs[i, j], state.block(k, ell))
    assert complete_log_likelihood(coeffs, partition, state) == pytest.approx(expected, abs=1e-9)


def test_likelihood_is_invariant_to_relabeling():
    structure = CoClusterStructure(L=2, K=(2, 2))
    shifted = BlockParams(loadings=np.eye(3)[:, :2], mean=np.array([1.0, -1.0]), covariance=2 * np.eye(2))
    tilted = BlockParams(loadings=np.eye(3)[:, 1:], mean=np.array([0.5, 0.0]), covariance=np.diag([0.5, 3.0]))
    state = ModelState(structure=structure, rho=[0.3, 0.7], pi=[[0.25, 0.75], [0.6, 0.4]],
                       blocks=[[identity_block(), shifted], [tilted, identity_block()]])
    coeffs = np.random.default_rng(2).normal(size=(5, 4, 3))
    partition = PartitionPair([0, 1, 1, 0], [[0, 1, 1, 0, 1], [1, 0, 0, 0, 1]])

    # column clusters swapped, and the two row clusters of the first one
    swapped = ModelState(structure=structure, rho=[0.7, 0.3], pi=[[0.6, 0.4], [0.75, 0.25]],
                         blocks=[[tilted, identity_block()], [shifted, identity_block()]])
    relabeled = PartitionPair(1 - partition.col_labels,
                              np.stack([partition.row_labels[1], 1 - partition.row_labels[0]]))
    assert complete_log_likelihood(coeffs, relabeled, swapped) == pytest.approx(
        complete_log_likelihood(coeffs, partition, state), abs=1e-9)


def test_shared_rows_count_the_row_term_once():
    structure = CoClusterStructure.shared(2, 2)
    blocks = [[identity_block(), identity_block()], [identity_block(), identity_block()]]
    state = ModelState(structure=structure, rho=[0.5, 0.5], pi=[[0.5, 0.5], [0.5, 0.5]], blocks=blocks)
    coeffs = np.zeros((2, 2, 3))
    partition = PartitionPair([0, 1], [[0, 1], [0, 1]])
    separate = complete_log_likelihood(coeffs, partition, state)
    shared = complete_log_likelihood(coeffs, partition, state, shared_rows=True)
    assert separate - shared == pytest.approx(2 * np.log(0.5))


def test_row_and_column_densities_decompose_the_cell_term():
    state = two_by_two_state()
    rng = np.random.default_rng(1)
    coeffs = rng.normal(size=(4, 3, 3))
    partition = PartitionPair([0, 1, 0], [[0, 1, 1, 0], [0, 0, 0, 0]])

    by_rows = sum(
        row_log_density(coeffs[i], partition.col_labels, ell, partition.row_labels[ell, i], state)
        for i in range(4) for ell in range(2)
    )
    by_cols = sum(
        column_log_density(coeffs[:, j], partition.row_labels, partition.col_labels[j], state)
        for j in range(3)
    )
    assert by_rows == pytest.approx(by_cols, abs=1e-9)


def test_row_density_without_columns_is_zero():
    state = two_by_two_state()
    assert row_log_density(np.zeros((3, 3)), [0, 0, 0], 1, 0, state) == 0.0


def test_partition_validation():
    structure = CoClusterStructure(L=2, K=(2, 1))
    PartitionPair([0, 1], [[0, 1, 1], [0, 0, 0]]).validate(structure, n=3, p=2)
    with pytest.raises(InvalidInputError):
        PartitionPair([0, 2], [[0, 1, 1], [0, 0, 0]]).validate(structure)
    with pytest.raises(InvalidInputError):
        PartitionPair([0, 1], [[0, 2, 1], [0, 0, 0]]).validate(structure)
    with pytest.raises(InvalidInputError):
        PartitionPair([0, 1], [[0, 1, 1]]).validate(structure)


def test_cell_row_labels_follow_column_clusters():
    partition = PartitionPair([1, 0], [[0, 1, 2], [1, 1, 0]])
    np.testing.assert_array_equal(partition.cell_row_labels(), [[1, 0], [1, 1], [0, 2]])


def test_state_serialization_roundtrip():
    state = two_by_two_state()
    restored = ModelState.from_dict(state.to_dict())
    assert restored.structure == state.structure
    np.testing.assert_array_equal(restored.block(1, 0).mean, state.block(1, 0).mean)
    np.testing.assert_array_equal(restored.pi[0], state.pi[0])


def test_describe_flags_single_row_cluster():
    structure = CoClusterStructure(L=2, K=(2, 2))
    partition = PartitionPair([0, 0, 1], [[0, 1, 1, 0], [1, 1, 1, 1]])
    summary = describe_structure(partition, structure, col_ids=["a", "b", "c"])
    assert summary[0]["columns"] == ["a", "b"]
    assert summary[0]["row_cluster_sizes"] == [2, 2]
    assert not summary[0]["uninformative"]
    assert summary[1]["uninformative"]
