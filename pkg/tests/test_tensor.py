import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hybridfss.errors import DimensionError, FormatError, MaskError, TruncatedFileError
from hybridfss.tensor import (
    as_tensor,
    decode_jcat,
    encode_jcat,
    load_jcat,
    masked_product,
    matmul,
    relu,
    save_jcat,
    softmax,
)


def test_matmul_identity_and_zero():
    a = np.arange(9, dtype=np.float32).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3, dtype=np.float32), a), a)
    assert np.array_equal(matmul(a, np.zeros((3, 2), np.float32)), np.zeros((3, 2)))


def test_matmul_hand_case():
    out = matmul(np.array([[1, 2], [3, 4]], np.float32), np.array([[5], [6]], np.float32))
    assert out.tolist() == [[17], [39]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_keeps_float32():
    assert matmul(np.ones((2, 2), np.float32), np.ones((2, 2), np.float32)).dtype == np.float32
    assert matmul(np.ones((2, 2)), np.ones((2, 2), np.float32)).dtype == np.float64


@pytest.mark.parametrize(
    "logits, expected",
    [
        ([0, 0, 0, 0], [0.25, 0.25, 0.25, 0.25]),
        ([1000, 1000], [0.5, 0.5]),
        ([0, math.log(3)], [0.25, 0.75]),
    ],
)
def test_softmax_examples(logits, expected):
    out = softmax(np.array(logits, dtype=np.float64), axis=0)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_softmax_axis_out_of_range():
    with pytest.raises(IndexError):
        softmax(np.zeros((2, 2)), axis=2)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50, width=32)),
       st.integers(0, 2))
def test_softmax_slices_sum_to_one(t, axis):
    axis = axis % t.ndim
    s = softmax(t, axis)
    np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)


def test_relu_examples():
    assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]
    assert not relu(-np.ones((3, 3))).any()
    x = np.abs(np.random.default_rng(0).standard_normal((4, 4)))
    assert np.array_equal(relu(x), x)


def test_masked_product_examples():
    f = np.random.default_rng(1).standard_normal((3, 4, 4)).astype(np.float32)
    assert np.array_equal(masked_product(f, np.ones((4, 4))), f)
    assert not masked_product(f, np.zeros((4, 4))).any()
    m = np.zeros((4, 4))
    m[2, 1] = 1
    out = masked_product(f, m)
    assert np.array_equal(out[:, 2, 1], f[:, 2, 1])
    out[:, 2, 1] = 0
    assert not out.any()


def test_masked_product_rejects_non_binary():
    with pytest.raises(MaskError):
        masked_product(np.ones((1, 2, 2)), np.full((2, 2), 0.5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_masked_product_idempotent(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((3, 5, 4)).astype(np.float32)
    m = (rng.random((5, 4)) < 0.5).astype(np.float32)
    once = masked_product(f, m)
    assert once.tobytes() == masked_product(once, m).tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_matmul_associativity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 65))
    a, b, c = (rng.standard_normal((n, n)).astype(np.float32) for _ in range(3))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-4 * np.max(np.abs(right))


def test_as_tensor_rejects_zero_dims():
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        encode_jcat(np.zeros((0, 3), np.float32))
    assert as_tensor([[1, 2]]).dtype == np.float32


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_jcat_round_trip(tmp_path, dtype):
    t = np.random.default_rng(2).standard_normal((2, 3, 5)).astype(dtype)
    save_jcat(tmp_path / "t.jcat", t)
    back = load_jcat(tmp_path / "t.jcat")
    assert back.dtype == dtype and back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def test_jcat_header_layout():
    buf = encode_jcat(np.ones((2, 3), np.float32))
    assert buf[:4] == b"JCAT"
    assert buf[4:7] == bytes([1, 0, 2])
    assert buf[7:15] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(buf) == 15 + 6 * 4


def test_jcat_special_values_bit_exact():
    t = np.array([np.nan, -0.0, np.inf, 1e-45], dtype=np.float32)
    assert decode_jcat(encode_jcat(t)).tobytes() == t.tobytes()


def test_jcat_errors():
    good = encode_jcat(np.ones((4, 4), np.float32))
    with pytest.raises(FormatError):
        decode_jcat(b"XCAT" + good[4:])
    with pytest.raises(FormatError):
        decode_jcat(good[:4] + bytes([2]) + good[5:])
    with pytest.raises(TruncatedFileError):
        decode_jcat(good[:-3])
    with pytest.raises(TruncatedFileError):
        decode_jcat(good[:9])
