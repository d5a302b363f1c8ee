import numpy as np
import pytest

import gnngen.tensor as T
from gnngen.rng import Rng
from gnngen.tensor import ShapeError, Tensor
from conftest import finite_difference_check

rng = np.random.default_rng(7)


def t(shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_broadcast_gradients():
    a, b = t((4, 5)), t((1, 5))
    finite_difference_check(lambda: T.sum_all((a + b) * (a + b)), [a, b])


def test_mul_and_sub_gradients():
    a, b = t((3, 4)), t((3, 4))
    finite_difference_check(lambda: T.sum_all((a - b) * a), [a, b])


def test_matmul_gradients():
    a, b = t((4, 6)), t((6, 3))
    finite_difference_check(lambda: T.sum_all((a @ b) * (a @ b)), [a, b])


def test_transpose_reshape_gradients():
    a = t((3, 4))
    finite_difference_check(lambda: T.sum_all(T.transpose(a) @ a), [a])
    finite_difference_check(lambda: T.sum_all(T.reshape(a, (2, 6)) * 2.0), [a])


def test_mean_rows_and_concat_gradients():
    a, b = t((5, 3)), t((5, 2))
    finite_difference_check(lambda: T.sum_all(T.mean_rows(T.concat_cols([a, b]))), [a, b])


def test_relu_leaky_gradients():
    a = t((4, 4))
    a.data += 0.5  # avoid kinks at exactly zero
    finite_difference_check(lambda: T.sum_all(T.relu(a) * a), [a])
    finite_difference_check(lambda: T.sum_all(T.leaky_relu(a, 0.2)), [a])


def test_softmax_cross_entropy_mse_gradients():
    a = t((6, 4))
    labels = rng.integers(0, 4, 6)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    finite_difference_check(lambda: T.sum_all(T.softmax_rows(a) * a), [a])
    finite_difference_check(lambda: T.cross_entropy_masked(a, labels, mask), [a])
    b = t((6, 4))
    finite_difference_check(lambda: T.mse(a, b), [a, b])


def test_instance_norm_gradients():
    a = t((2, 3, 7))
    finite_difference_check(lambda: T.sum_all(T.instance_norm(a) * a), [a])


def test_pad_and_conv_gradients():
    x, k = t((2, 3, 11)), t((4, 3, 3))
    finite_difference_check(lambda: T.sum_all(T.pad_last(x, 1, 2)), [x])
    for stride in (1, 2, 3):
        finite_difference_check(lambda: T.sum_all(T.conv1d(x, k, stride)), [x, k])


def test_conv_transposed_gradients():
    for stride in (1, 2, 3):
        x, k = t((2, 3, 6)), Tensor(rng.standard_normal((3, 4, stride)), requires_grad=True)
        raw = 5 * stride + stride
        for target in (raw - stride + 1, raw, raw + stride):
            finite_difference_check(
                lambda: T.sum_all(T.conv1d_transposed(x, k, stride, target)), [x, k]
            )


def test_conv1d_matches_hand_example():
    x = Tensor([[1.0, 2.0, 3.0]])
    k = Tensor([[[1.0, 0.0]]])  # identity tap on the left sample
    out = T.conv1d(x, k, 1)
    np.testing.assert_allclose(out.data, [[1.0, 2.0]])


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        T.conv1d(Tensor(np.zeros((2, 2))), Tensor(np.zeros((1, 2, 3))), 1)
    with pytest.raises(ShapeError):
        T.conv1d_transposed(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 1, 2))), 2, 100)


def test_dropout_inverted_scaling():
    a = Tensor(np.ones((1000, 4)), requires_grad=True)
    out = T.dropout(a, 0.5, training=True, rng=Rng(3))
    kept = out.data != 0
    assert np.allclose(out.data[kept], 2.0)
    assert abs(kept.mean() - 0.5) < 0.05
    assert T.dropout(a, 0.5, training=False, rng=Rng(3)) is a


def test_backward_requires_scalar():
    a = t((2, 2))
    with pytest.raises(ShapeError):
        (a * 2.0).backward()


def test_grad_accumulates_across_backward_calls():
    a = t((3,))
    T.sum_all(a).backward()
    T.sum_all(a).backward()
    np.testing.assert_allclose(a.grad, 2.0)


def test_no_grad_disables_tape():
    a = t((2, 2))
    with T.no_grad():
        out = a @ a
    assert not out.requires_grad and out._backward is None


def test_instance_norm_output_is_standardized():
    a = Tensor(rng.standard_normal((3, 5, 50)) * 4 + 2)
    out = T.instance_norm(a).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)


def test_cross_entropy_empty_mask_rejected():
    with pytest.raises(ValueError):
        T.cross_entropy_masked(t((3, 2)), np.zeros(3, dtype=int), np.zeros(3, dtype=bool))
