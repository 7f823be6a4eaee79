"""Gradient checks and value contracts for every tensor primitive."""

import numpy as np
import pytest

import spg.autodiff as ad
from spg.autodiff import ShapeError, Tape

from oracles import check_gradients


def rand(rng, *shape):
    return ad.parameter(rng.uniform(-2.0, 2.0, size=shape))


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------


def test_matmul_identity():
    m = ad.constant([[3.0, -1.0], [2.0, 5.0]])
    eye = ad.constant(np.eye(2))
    assert np.array_equal(ad.matmul(eye, m).data, m.data)


def test_matmul_small_example():
    out = ad.matmul(ad.constant([[1.0, 2.0], [3.0, 4.0]]), ad.constant([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.add(ad.constant(np.ones(3)), ad.constant(np.ones(4)))


def test_conv2d_one_by_one_identity(rng):
    x = ad.constant(rng.normal(size=(3, 5, 4)))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = ad.conv2d(x, ad.constant(w), stride=1, padding=0)
    assert np.allclose(out.data, x.data)


def test_conv2d_ones_kernel_on_one_hot():
    x = np.zeros((1, 5, 5))
    x[0, 2, 2] = 1.0
    out = ad.conv2d(ad.constant(x), ad.constant(np.ones((1, 1, 3, 3))), stride=1, padding=1)
    assert out.shape == (1, 5, 5)
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = 1.0
    assert np.array_equal(out.data[0], expected)


def test_conv2d_stride2_output_size(rng):
    x = ad.constant(rng.normal(size=(2, 8, 6)))
    w = ad.constant(rng.normal(size=(4, 2, 3, 3)))
    out = ad.conv2d(x, w, stride=2, padding=1)
    assert out.shape == (4, 4, 3)


def test_setmax_values():
    single, idx = ad.setmax(ad.constant([[4.0, 7.0, -2.0]]))
    assert single.data.tolist() == [4.0, 7.0, -2.0]
    assert idx.tolist() == [0, 0, 0]
    out, idx = ad.setmax(ad.constant([[1.0, 5.0], [3.0, 2.0]]))
    assert out.data.tolist() == [3.0, 5.0]
    assert idx.tolist() == [1, 0]
    with pytest.raises(ShapeError):
        ad.setmax(ad.constant(np.zeros((0, 3))))


def test_setmax_ties_go_to_lowest_row():
    out, idx = ad.setmax(ad.constant([[2.0], [2.0], [1.0]]))
    assert idx.tolist() == [0]


def test_upsample_values():
    x = ad.constant([[[5.0]]])
    assert np.array_equal(ad.upsample_nearest(x, 2).data, np.full((1, 2, 2), 5.0))
    checker = ad.constant([[[1.0, 2.0], [3.0, 4.0]]])
    up = ad.upsample_nearest(checker, 2).data
    assert up.shape == (1, 4, 4)
    assert np.array_equal(up[0, :2, :2], [[1, 1], [1, 1]])
    assert np.array_equal(up[0, 2:, 2:], [[4, 4], [4, 4]])


def test_scatter_then_take_roundtrip(rng):
    x = rand(rng, 4, 3)
    idx = np.array([7, 2, 9, 0])
    dense = ad.scatter_rows(x, idx, 12)
    back = ad.take_rows(dense, idx)
    assert np.array_equal(back.data, x.data)
    untouched = np.setdiff1d(np.arange(12), idx)
    assert np.all(dense.data[untouched] == 0)


def test_smooth_l1_branch_values():
    out = ad.smooth_l1(ad.constant([0.5, 2.0, -2.0, 0.0, 1.0]))
    assert out.data.tolist() == [0.125, 1.5, 1.5, 0.0, 0.5]


def test_clamp_values():
    out = ad.clamp(ad.constant([-1.0, 0.5, 2.0]), 0.0, 1.0)
    assert out.data.tolist() == [0.0, 0.5, 1.0]


# ---------------------------------------------------------------------------
# gradients: every primitive against central finite differences
# ---------------------------------------------------------------------------


def test_grad_add_mul_neg_scale(rng):
    a, b = rand(rng, 4, 3), rand(rng, 4, 3)
    check_gradients(lambda: ad.tensor_sum(ad.mul(ad.add(a, ad.neg(b)), ad.scale(a, 0.7))), [a, b])


def test_grad_matmul(rng):
    a, b = rand(rng, 5, 4), rand(rng, 4, 3)
    check_gradients(lambda: ad.tensor_sum(ad.matmul(a, b)), [a, b])


def test_grad_relu_away_from_kink(rng):
    data = rng.uniform(-2, 2, size=(6, 4))
    data[np.abs(data) < 0.05] = 0.5  # keep clear of the kink at 0
    x = ad.parameter(data)
    check_gradients(lambda: ad.tensor_sum(ad.relu(x)), [x])


def test_grad_sigmoid_log_powc(rng):
    x = ad.parameter(rng.uniform(0.1, 1.9, size=(8,)))
    check_gradients(lambda: ad.tensor_sum(ad.log(x)), [x])
    y = ad.parameter(rng.uniform(-2, 2, size=(8,)))
    check_gradients(lambda: ad.tensor_sum(ad.sigmoid(y)), [y])
    z = ad.parameter(rng.uniform(0.2, 1.8, size=(8,)))
    check_gradients(lambda: ad.tensor_sum(ad.powc(z, 2.0)), [z])
    check_gradients(lambda: ad.tensor_sum(ad.powc(z, 0.5)), [z])
    check_gradients(lambda: ad.tensor_sum(ad.powc(z, 0.0)), [z])


def test_grad_conv2d_stride1_and_2(rng):
    for stride in (1, 2):
        x = rand(rng, 2, 6, 5)
        w = rand(rng, 3, 2, 3, 3)
        check_gradients(
            lambda: ad.tensor_sum(ad.conv2d(x, w, stride=stride, padding=1)), [x, w]
        )


def test_grad_setmax_away_from_ties(rng):
    data = rng.uniform(-2, 2, size=(10, 4))
    x = ad.parameter(data)
    check_gradients(lambda: ad.tensor_sum(ad.setmax(x)[0]), [x])


def test_grad_padded_setmax(rng):
    data = rng.uniform(-2, 2, size=(5, 6, 3))
    mask = rng.random((5, 6)) < 0.6
    mask[:, 0] = True
    x = ad.parameter(data)
    check_gradients(lambda: ad.tensor_sum(ad.padded_setmax(x, mask)), [x])


def test_grad_upsample(rng):
    x = rand(rng, 2, 3, 4)
    check_gradients(lambda: ad.tensor_sum(ad.upsample_nearest(x, 2)), [x])


def test_grad_structure_ops(rng):
    x = rand(rng, 6, 4)
    idx = np.array([1, 3, 3, 0])
    check_gradients(lambda: ad.tensor_sum(ad.take_rows(x, idx)), [x])
    rows = np.array([0, 2, 5])
    cols = np.array([1, 0, 3])
    check_gradients(lambda: ad.tensor_sum(ad.take2d(x, rows, cols)), [x])
    check_gradients(lambda: ad.tensor_sum(ad.transpose2d(x)), [x])
    check_gradients(lambda: ad.tensor_sum(ad.reshape(x, (2, 12))), [x])
    y = rand(rng, 3, 4)
    check_gradients(lambda: ad.tensor_sum(ad.scatter_rows(y, np.array([5, 1, 2]), 8)), [y])


def test_grad_permute_concat_pad_crop(rng):
    x = rand(rng, 2, 3, 4)
    y = rand(rng, 3, 3, 4)
    check_gradients(lambda: ad.tensor_sum(ad.permute(x, (2, 0, 1))), [x])
    check_gradients(lambda: ad.tensor_sum(ad.concat_channels(x, y)), [x, y])
    check_gradients(lambda: ad.tensor_sum(ad.pad2d(x, 1, 2)), [x])
    check_gradients(lambda: ad.tensor_sum(ad.crop2d(x, 2, 3)), [x])


def test_grad_bias_ops(rng):
    x = rand(rng, 5, 3)
    b = rand(rng, 3)
    check_gradients(lambda: ad.tensor_sum(ad.bias_add_rows(x, b)), [x, b])
    m = rand(rng, 3, 4, 2)
    c = rand(rng, 3)
    check_gradients(lambda: ad.tensor_sum(ad.bias_add_channels(m, c)), [m, c])


def test_grad_smooth_l1_away_from_knee(rng):
    data = rng.uniform(-2, 2, size=(12,))
    data[np.abs(np.abs(data) - 1.0) < 0.05] = 0.3  # clear of |x| = 1
    x = ad.parameter(data)
    check_gradients(lambda: ad.tensor_sum(ad.smooth_l1(x)), [x])


def test_grad_clamp_inside_band(rng):
    x = ad.parameter(rng.uniform(0.1, 0.9, size=(8,)))
    check_gradients(lambda: ad.tensor_sum(ad.clamp(x, 0.0, 1.0)), [x])


# ---------------------------------------------------------------------------
# tape semantics
# ---------------------------------------------------------------------------


def test_adjoint_linearity(rng):
    """Backward of a sum equals the sum of per-output backwards."""
    a = rand(rng, 3, 3)
    b = rand(rng, 3, 3)

    with Tape() as tape:
        out = ad.mul(a, b)
        total = ad.tensor_sum(out)
    tape.backward(total)
    grad_sum = a.grad.copy()

    accumulated = np.zeros_like(a.data)
    for i in range(3):
        for j in range(3):
            a.zero_grad()
            b.zero_grad()
            with Tape() as tape:
                out = ad.mul(a, b)
            seed = np.zeros((3, 3))
            seed[i, j] = 1.0
            tape.backward(out, seed=seed)
            accumulated += a.grad
    assert np.allclose(grad_sum, accumulated)


def test_no_tape_means_no_tracking(rng):
    a = rand(rng, 2, 2)
    out = ad.matmul(a, a)
    assert not out.requires_grad


def test_gradients_accumulate_across_uses(rng):
    a = ad.parameter([2.0])
    with Tape() as tape:
        out = ad.tensor_sum(ad.add(a, a))
    tape.backward(out)
    assert a.grad.tolist() == [2.0]


def test_determinism_bitwise(rng):
    a = ad.parameter(rng.normal(size=(4, 4)))
    b = ad.parameter(rng.normal(size=(4, 4)))

    def run():
        a.zero_grad()
        b.zero_grad()
        with Tape() as tape:
            out = ad.tensor_sum(ad.relu(ad.matmul(a, b)))
        tape.backward(out)
        return out.data.copy(), a.grad.copy(), b.grad.copy()

    first = run()
    second = run()
    for x, y in zip(first, second):
        assert np.array_equal(x, y)


def test_float32_fast_path(rng):
    a = ad.parameter(rng.normal(size=(3, 3)), dtype=np.float32)
    b = ad.parameter(rng.normal(size=(3, 3)), dtype=np.float32)
    with Tape() as tape:
        out = ad.tensor_sum(ad.relu(ad.matmul(a, b)))
    tape.backward(out)
    assert out.dtype == np.float32
    assert a.grad.dtype == np.float32
    with pytest.raises(ShapeError):
        ad.add(a, ad.parameter(np.zeros((3, 3))))  # f32 vs f64
