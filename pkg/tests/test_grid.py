import math
from fractions import Fraction

import numpy as np
import pytest

from ntg.errors import NumericError, ShapeMismatchError
from ntg.grid import (
    as_grid,
    avg_pool2,
    bicubic_resample,
    bicubic_resize,
    concat_channels,
    conv2d,
    conv2d_backward,
    upsample_nearest,
)


def naive_conv(x, kernels, bias, stride, padding):
    c, h, w = x.shape
    o, _, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = bias[oc]
                for ic in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            acc += kernels[oc, ic, u, v] * xp[ic, i * stride + u, j * stride + v]
                out[oc, i, j] = acc
    return out


def keys_weight(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def direct_bicubic(x, scale):
    c, h, w = x.shape
    ho, wo = int(math.floor(h * scale + 0.5)), int(math.floor(w * scale + 0.5))
    out = np.zeros((c, ho, wo))
    for ch in range(c):
        for i in range(ho):
            sy = (i + 0.5) / scale - 0.5
            for j in range(wo):
                sx = (j + 0.5) / scale - 0.5
                acc = 0.0
                for u in range(math.floor(sy) - 1, math.floor(sy) + 3):
                    for v in range(math.floor(sx) - 1, math.floor(sx) + 3):
                        uu, vv = min(max(u, 0), h - 1), min(max(v, 0), w - 1)
                        acc += keys_weight(sy - u) * keys_weight(sx - v) * x[ch, uu, vv]
                out[ch, i, j] = acc
    return out


class TestAsGrid:
    def test_adds_channel_axis(self):
        assert as_grid(np.zeros((3, 4))).shape == (1, 3, 4)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            as_grid(np.array([[[np.nan]]]))

    def test_rejects_bad_rank(self):
        with pytest.raises(ShapeMismatchError):
            as_grid(np.zeros(5))


class TestConv2d:
    def test_identity_kernel(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_sum_kernel(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = conv2d(x, np.ones((1, 1, 2, 2)), np.zeros(1))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 10.0

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((3, 9, 9))
        k = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        np.testing.assert_allclose(conv2d(x, k, b), naive_conv(x, k, b, 1, 0), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
    @pytest.mark.parametrize("channels,size", [(1, 4), (2, 5), (4, 8)])
    def test_oracle_over_shapes(self, rng, stride, padding, channels, size):
        x = rng.standard_normal((channels, size, size))
        k = rng.standard_normal((3, channels, 3, 3))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(
            conv2d(x, k, b, stride, padding), naive_conv(x, k, b, stride, padding), rtol=1e-12, atol=1e-12
        )

    def test_linearity(self, rng):
        x, y = rng.standard_normal((2, 2, 7, 7))
        k = rng.standard_normal((3, 2, 3, 3))
        alpha, beta = 1.7, -0.4
        lhs = conv2d(alpha * x + beta * y, k, padding=1)
        rhs = alpha * conv2d(x, k, padding=1) + beta * conv2d(y, k, padding=1)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_channel_mismatch_names_shapes(self, rng):
        with pytest.raises(ShapeMismatchError, match=r"\(4, 2, 3, 3\).*\(3, 5, 5\)"):
            conv2d(rng.standard_normal((3, 5, 5)), rng.standard_normal((4, 2, 3, 3)))

    def test_kernel_too_large(self, rng):
        with pytest.raises(ShapeMismatchError):
            conv2d(rng.standard_normal((1, 2, 2)), rng.standard_normal((1, 1, 3, 3)))

    def test_backward_is_adjoint(self, rng):
        x = rng.standard_normal((2, 6, 6))
        k = rng.standard_normal((3, 2, 3, 3))
        g = rng.standard_normal(conv2d(x, k, stride=2, padding=1).shape)
        gx, gk, gb = conv2d_backward(x, k, g, stride=2, padding=1)
        # <conv(x), g> is bilinear in (x, k)
        inner = float(np.sum(conv2d(x, k, stride=2, padding=1) * g))
        assert float(np.sum(gx * x)) == pytest.approx(inner, rel=1e-12)
        assert float(np.sum(gk * k)) == pytest.approx(inner, rel=1e-12)
        np.testing.assert_allclose(gb, g.sum(axis=(1, 2)))


class TestBicubic:
    @pytest.mark.parametrize("scale", [Fraction(1, 2), 2, Fraction(3, 4), 3])
    def test_constant_preserved(self, scale):
        out = bicubic_resample(np.full((2, 8, 8), 0.7), scale)
        np.testing.assert_allclose(out, 0.7, atol=1e-12)

    def test_shape_contract(self):
        assert bicubic_resample(np.zeros((1, 8, 8)), 2).shape == (1, 16, 16)

    def test_scale_one_is_copy(self, rng):
        x = rng.standard_normal((1, 5, 5))
        out = bicubic_resample(x, 1)
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_down_up_ramp_matches_direct_kernel(self):
        ramp = np.arange(16, dtype=np.float64).reshape(1, 4, 4) / 15.0
        down = bicubic_resample(ramp, Fraction(1, 2))
        np.testing.assert_allclose(down, direct_bicubic(ramp, 0.5), atol=1e-9)
        up = bicubic_resample(down, 2)
        np.testing.assert_allclose(up, direct_bicubic(direct_bicubic(ramp, 0.5), 2.0), atol=1e-9)

    def test_random_matches_direct_kernel(self, rng):
        x = rng.standard_normal((2, 5, 7))
        np.testing.assert_allclose(bicubic_resample(x, 2), direct_bicubic(x, 2.0), atol=1e-12)

    def test_commutes_with_affine(self, rng):
        x = rng.standard_normal((1, 6, 6))
        lhs = bicubic_resample(3.0 * x + 0.25, Fraction(1, 2))
        rhs = 3.0 * bicubic_resample(x, Fraction(1, 2)) + 0.25
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @pytest.mark.parametrize("scale", [0, -1, Fraction(-1, 2)])
    def test_non_positive_scale_rejected(self, scale):
        with pytest.raises(ValueError):
            bicubic_resample(np.zeros((1, 4, 4)), scale)

    def test_resize_to_exact_dims(self, rng):
        out = bicubic_resize(rng.standard_normal((1, 5, 7)), 10, 3)
        assert out.shape == (1, 10, 3)


class TestConcatAndPooling:
    def test_concat_order(self):
        a, b = np.zeros((1, 2, 2)), np.ones((1, 2, 2))
        out = concat_channels(a, b)
        assert out.shape == (2, 2, 2)
        np.testing.assert_array_equal(out[0], a[0])

    def test_concat_channel_count(self, rng):
        out = concat_channels(rng.standard_normal((3, 4, 4)), rng.standard_normal((5, 4, 4)))
        assert out.shape[0] == 8

    def test_concat_round_trip(self, rng):
        a = rng.standard_normal((3, 4, 5))
        out = concat_channels(a, rng.standard_normal((2, 4, 5)))
        assert np.array_equal(out[:3], a)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            concat_channels(np.zeros((1, 2, 2)), np.zeros((1, 3, 2)))

    def test_avg_pool_odd_tail(self):
        x = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
        out = avg_pool2(x)
        assert out.shape == (1, 2, 2)
        assert out[0, 0, 0] == pytest.approx((0 + 1 + 3 + 4) / 4)
        assert out[0, 1, 1] == pytest.approx(8.0)

    def test_upsample_nearest(self):
        out = upsample_nearest(np.array([[[1.0, 2.0]]]))
        np.testing.assert_array_equal(out[0], [[1, 1, 2, 2], [1, 1, 2, 2]])
