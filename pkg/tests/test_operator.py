import numpy as np
import pytest

from vml_lab import operator as ops


def test_from_matrix_reconstructs(dense_op):
    assert np.allclose(dense_op.matrix, [[1.0, 0.5], [-0.3, 2.0], [0.7, 0.1]], atol=1e-14)


def test_mask_apply_and_adjoint():
    op = ops.LinearOperator.mask(5, [3, 0])
    x = np.arange(5.0)
    assert np.array_equal(ops.apply(op, x), [3.0, 0.0])
    assert np.array_equal(ops.adjoint(op, np.array([1.0, 2.0])), [2.0, 0, 0, 1.0, 0])
    assert np.allclose(ops.svd_apply(op, x), ops.apply(op, x))
    assert np.array_equal(ops.preconditioner_solve(op, x), x)


@pytest.mark.parametrize("keep", [[5], [0, 0], []])
def test_mask_rejects_bad_indices(keep):
    with pytest.raises(ValueError):
        ops.LinearOperator.mask(5, keep)


@pytest.mark.parametrize(
    "op",
    [
        ops.LinearOperator.block_average((4, 6), 2),
        ops.LinearOperator.block_average(8, 4),
        ops.LinearOperator.separable_blur((5, 6), 3),
        ops.LinearOperator.separable_blur(9, 4),
    ],
    ids=["block2d", "block1d", "blur2d", "blur1d"],
)
def test_direct_formulas_match_svd(op, rng):
    x = rng.normal(size=op.shape[1])
    v = rng.normal(size=op.shape[0])
    assert np.allclose(ops.apply(op, x), ops.svd_apply(op, x), atol=1e-12)
    assert np.allclose(ops.adjoint(op, v), op.matrix.T @ v, atol=1e-12)
    assert ops.apply(op, x) @ v == pytest.approx(x @ ops.adjoint(op, v))
    assert np.allclose(op.U @ op.U.T, np.eye(op.shape[0]), atol=1e-12)
    assert np.allclose(op.V @ op.V.T, np.eye(op.shape[1]), atol=1e-12)


def test_block_average_values():
    op = ops.LinearOperator.block_average((2, 4), 2)
    x = np.arange(8.0)
    assert np.allclose(ops.apply(op, x), [(0 + 1 + 4 + 5) / 4, (2 + 3 + 6 + 7) / 4])
    with pytest.raises(ValueError):
        ops.LinearOperator.block_average((3, 4), 2)


def test_threshold_reduces_rank_and_drops_direct_path(rng):
    op = ops.LinearOperator.separable_blur((5, 6), 3)
    cut = ops.threshold_singulars(op, 0.2)
    assert cut.rank < op.rank and not cut.direct
    x = rng.normal(size=30)
    assert np.allclose(ops.apply(cut, x), cut.matrix @ x)
    assert ops.threshold_singulars(op, 0.0) is op
    with pytest.raises(ValueError):
        ops.threshold_singulars(op, -1.0)


def test_preconditioner_solve_matches_dense(dense_op, rng):
    g = rng.normal(size=2)
    m = ops.preconditioner_matrix(dense_op)
    assert np.allclose(ops.preconditioner_solve(dense_op, g), np.linalg.solve(m, g), atol=1e-13)


def test_preconditioner_rank_deficient_is_identity_on_null_space():
    op = ops.LinearOperator.from_matrix([[1.0, 1.0, 0.0]])
    m = ops.preconditioner_matrix(op)
    null = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    assert np.allclose(m @ null, null)
    assert np.allclose(m @ np.array([0, 0, 1.0]), [0, 0, 1.0])


def test_zero_operator_and_shape_errors():
    op = ops.LinearOperator.zero(2, 3)
    assert op.rank == 0
    assert np.array_equal(ops.apply(op, np.ones(3)), np.zeros(2))
    with pytest.raises(ValueError):
        ops.apply(op, np.ones(2))
