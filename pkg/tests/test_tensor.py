import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from navseg import tensor as T
from navseg.exceptions import ShapeError, TapeError
from navseg.gradcheck import check_function

from oracles import bilinear_scalar

finite = st.floats(-1.0, 1.0, allow_nan=False)


def test_matmul_identity_and_zero():
    b = np.array([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(T.matmul(np.eye(2), b).data, b)
    np.testing.assert_array_equal(T.matmul(np.zeros((2, 3)), np.ones((3, 2))).data, np.zeros((2, 2)))


def test_matmul_hand_oracle():
    out = T.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]).data
    np.testing.assert_array_equal(out, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_rows_examples():
    np.testing.assert_allclose(T.softmax_rows(np.full((1, 4), 7.0)).data, 0.25, rtol=0, atol=1e-15)
    out = T.softmax_rows(np.array([[0.0, math.log(3.0)]])).data
    np.testing.assert_allclose(out, [[0.25, 0.75]], rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                  elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_properties(x, c):
    s = T.softmax_rows(x).data
    assert np.all(s >= 0) and np.all(s <= 1)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(T.softmax_rows(x + c).data, s, rtol=0, atol=1e-12)


def test_softmax_large_logits_stable():
    s = T.softmax_rows(np.array([[1000.0, 0.0, -1000.0]])).data
    assert np.isfinite(s).all()
    np.testing.assert_allclose(s, [[1.0, 0.0, 0.0]], atol=1e-300)


def test_linear_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(T.linear(x, [[1.0, 0.0], [0.0, 2.0]], [1.0, 1.0]).data, [[2.0, 5.0]])
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(T.linear(x, np.eye(3), np.zeros(3)).data, x)
    b = rng.normal(size=4)
    out = T.linear(np.zeros((3, 2)), rng.normal(size=(2, 4)), b).data
    np.testing.assert_array_equal(out, np.tile(b, (3, 1)))


def test_bilinear_identity_and_constant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 7))
    np.testing.assert_array_equal(T.bilinear_resize(x, 5, 7).data, x)
    const = np.full((3, 4, 6), 0.37)
    for h, w in [(1, 1), (8, 12), (3, 5), (17, 2)]:
        up = T.bilinear_resize(const, h, w).data
        assert np.all(up == 0.37)
        back = T.bilinear_resize(up, 4, 6).data
        assert np.all(back == 0.37)


def test_bilinear_2x2_to_4x4_scalar_oracle():
    x = [[0.0, 2.0], [4.0, 6.0]]
    out = T.bilinear_resize(np.array([x]), 4, 4).data[0]
    np.testing.assert_allclose(out, bilinear_scalar(x, 4, 4), rtol=0, atol=1e-15)
    # clamped edges repeat the corner value, interior steps by a quarter
    np.testing.assert_allclose(out[0], [0.0, 0.5, 1.5, 2.0], atol=1e-15)
    np.testing.assert_allclose(out[:, 0], [0.0, 1.0, 3.0, 4.0], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 9), st.integers(1, 9), st.integers(0, 10**6))
def test_bilinear_matches_scalar_oracle(h, w, oh, ow, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, size=(h, w))
    ref = bilinear_scalar(x.tolist(), oh, ow)
    np.testing.assert_allclose(T.bilinear_resize(x, oh, ow).data, ref, rtol=0, atol=1e-12)


def test_bilinear_is_convex_combination():
    x = np.random.default_rng(2).uniform(0, 1, size=(3, 4, 4))
    y = T.bilinear_resize(x, 13, 9).data
    assert y.min() >= x.min() - 1e-15 and y.max() <= x.max() + 1e-15


def test_concat_channels_examples():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4, 4))
    np.testing.assert_array_equal(T.concat_channels([a]).data, a)
    parts = [rng.normal(size=(c, 2, 2)) for c in (32, 64, 160, 256)]
    assert T.concat_channels(parts).shape == (512, 2, 2)


def test_concat_channels_index_oracle():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 2, 5)), rng.normal(size=(4, 2, 5))
    out = T.concat_channels([a, b]).data
    for ch in range(7):
        src = a[ch] if ch < 3 else b[ch - 3]
        np.testing.assert_array_equal(out[ch], src)


def test_concat_associative():
    rng = np.random.default_rng(5)
    a, b, c = (rng.normal(size=(k, 3, 3)) for k in (1, 2, 3))
    left = T.concat_channels([a, T.concat_channels([b, c])]).data
    np.testing.assert_array_equal(left, T.concat_channels([a, b, c]).data)


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        T.concat_channels([np.ones((1, 2, 2)), np.ones((1, 3, 2))])


def test_unfold_window_layout():
    x = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    patches, ho, wo = T.unfold(x, 2, 2)
    assert (ho, wo) == (2, 2)
    np.testing.assert_array_equal(patches.data[1], np.concatenate([x[0, 0:2, 2:4].ravel(), x[1, 0:2, 2:4].ravel()]))


def test_backward_sum_gives_ones():
    tape = T.Tape()
    x = tape.watch(np.random.default_rng(6).normal(size=(3, 4)))
    tape.backward(T.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_zero_scaled_loss():
    tape = T.Tape()
    x = tape.watch(np.random.default_rng(7).normal(size=(2, 3)))
    tape.backward(T.scale(T.sum_all(T.gelu(x)), 0.0))
    np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))


def test_tape_consumed_once():
    tape = T.Tape()
    x = tape.watch(np.ones(3))
    loss = T.sum_all(x)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)
    with pytest.raises(TapeError):
        tape.watch(np.ones(2))


def test_backward_needs_scalar():
    tape = T.Tape()
    x = tape.watch(np.ones(3))
    with pytest.raises(ShapeError):
        tape.backward(T.scale(x, 2.0))


def test_shared_input_accumulates():
    tape = T.Tape()
    x = tape.watch(np.array([1.0, 2.0, 3.0]))
    tape.backward(T.sum_all(T.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_recorded_outputs_are_read_only():
    tape = T.Tape()
    y = T.scale(tape.watch(np.ones(3)), 2.0)
    with pytest.raises(ValueError):
        y.data[0] = 5.0


def test_batched_ops_match_per_item():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(3, 2, 4, 4))
    w = rng.normal(size=(2 * 9, 5))
    batched = T.linear(T.unfold(x, 3, 1, 1)[0], w).data
    for i in range(3):
        np.testing.assert_array_equal(batched[i], T.linear(T.unfold(x[i], 3, 1, 1)[0], w).data)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6))
def test_gradients_random_shapes(c, h, w, seed):
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1, 1, size=(c, h + 1, w + 2))
    rep = check_function(
        lambda x: T.sum_all(T.mul(T.gelu(T.bilinear_resize(x, h + 1, w + 2)), r)),
        {"x": rng.uniform(-1, 1, size=(c, h, w))})
    assert rep.passed, rep.lines()
