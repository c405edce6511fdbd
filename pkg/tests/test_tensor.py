import itertools
import math
from decimal import Decimal, localcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hhmosaic.errors import DimensionError, NumericError
from hhmosaic.tensor import as_tensor, bilinear_sample, bilinear_sample_grid, conv2d, matmul, softmax

finite = st.floats(-50, 50, allow_nan=False)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv_loops(x, ker, pad):
    c, h, w = x.shape
    f, _, kh, kw = ker.shape
    ph, pw = (kh // 2, kw // 2) if pad == "same_zero" else (0, 0)
    oh, ow = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    out = np.zeros((f, oh, ow))
    for o in range(f):
        for r in range(oh):
            for s in range(ow):
                acc = 0.0
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            rr, ss = r + u - ph, s + v - pw
                            if 0 <= rr < h and 0 <= ss < w:
                                acc += ker[o, ch, u, v] * x[ch, rr, ss]
                out[o, r, s] = acc
    return out


class TestMatmul:
    def test_identity(self):
        np.testing.assert_array_equal(matmul(np.eye(2), [[3, 4], [5, 6]]), [[3, 4], [5, 6]])

    def test_dot(self):
        assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]

    def test_random_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(2, 3, 3))
        np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @given(arrays(np.float64, (3, 3), elements=finite), arrays(np.float64, (3, 3), elements=finite),
           arrays(np.float64, (3, 3), elements=finite))
    def test_associative(self, a, b, c):
        lhs, rhs = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        scale = max(1.0, float(np.abs(a).max() * np.abs(b).max() * np.abs(c).max()) * 9)
        assert np.abs(lhs - rhs).max() <= 1e-9 * scale


def test_as_tensor_rank_limits():
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((1, 1, 1, 1, 1)))
    assert as_tensor([1.0, 2.0]).dtype == np.float64


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 4, 5))
        np.testing.assert_array_equal(conv2d(x, np.ones((1, 1, 1, 1))), x)

    def test_zero_kernel(self, rng):
        assert not conv2d(rng.normal(size=(2, 4, 4)), np.zeros((3, 2, 3, 3))).any()

    @pytest.mark.parametrize("pad", ["same_zero", "valid"])
    def test_matches_six_loops(self, rng, pad):
        x = rng.normal(size=(2, 5, 5))
        ker = rng.normal(size=(3, 2, 3, 3))
        np.testing.assert_allclose(conv2d(x, ker, pad), conv_loops(x, ker, pad), rtol=0, atol=1e-12)

    def test_same_preserves_shape(self, rng):
        assert conv2d(rng.normal(size=(2, 7, 6)), rng.normal(size=(4, 2, 3, 3))).shape == (4, 7, 6)

    def test_one_by_one_is_channel_matmul(self, rng):
        x = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(2, 3))
        expect = matmul(w, x.reshape(3, -1)).reshape(2, 4, 5)
        np.testing.assert_allclose(conv2d(x, w[:, :, None, None]), expect, rtol=0, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv2d(rng.normal(size=(2, 4, 4)), rng.normal(size=(1, 3, 3, 3)))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(DimensionError):
            conv2d(rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 1, 2, 2)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_single(self):
        assert softmax([7.5]).tolist() == [1.0]

    def test_extended_precision(self):
        with localcontext() as ctx:
            ctx.prec = 50
            e = [Decimal(x).exp() for x in (1, 2, 3)]
            expect = [float(v / sum(e)) for v in e]
        np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), expect, rtol=1e-15)

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 700)))
    def test_probability_vector(self, v):
        p = softmax(v)
        assert (p >= 0).all() and abs(p.sum() - 1) <= 1e-12

    def test_non_finite(self):
        with pytest.raises(NumericError):
            softmax([0.0, np.inf])


class TestBilinear:
    def test_lattice_exact(self, rng):
        img = rng.uniform(size=(4, 5))
        for r, c in itertools.product(range(4), range(5)):
            assert bilinear_sample(img, c, r) == img[r, c]

    def test_midpoint(self):
        assert bilinear_sample(np.array([[0.0, 0.0], [1.0, 1.0]]), 0.5, 0.5) == 0.5

    def test_outside_zero(self):
        assert bilinear_sample(np.ones((3, 3)), -5, -5, "zero") == 0.0

    def test_clamp(self):
        img = np.arange(9.0).reshape(3, 3)
        assert bilinear_sample(img, -5, -5, "clamp") == 0.0
        assert bilinear_sample(img, 10, 10, "clamp") == 8.0

    @given(st.floats(0, 3), st.floats(0, 1))
    def test_linear_along_axis(self, x, t):
        img = np.random.default_rng(0).uniform(size=(5, 5))
        x0, x1 = math.floor(x), min(math.floor(x) + 1, 4)
        a, b = bilinear_sample(img, x0, 2), bilinear_sample(img, x1, 2)
        assert abs(bilinear_sample(img, x0 + t * (x1 - x0), 2) - (a + t * (b - a))) < 1e-12

    def test_grid_matches_scalar(self, rng):
        img = rng.uniform(size=(6, 7))
        xs, ys = rng.uniform(-1, 7, 50), rng.uniform(-1, 6, 50)
        grid = bilinear_sample_grid(img, xs, ys)
        assert all(grid[i] == bilinear_sample(img, xs[i], ys[i]) for i in range(50))
