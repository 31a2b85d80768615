"""
Dense multi-channel 2-D grids and the numeric primitives built on them.

A grid is a float64 ``numpy`` array shaped ``(channels, height, width)``.
Grids are treated as values: every function returns a new array and never
writes into its inputs.

Resampling, average pooling and nearest upsampling are all separable
linear maps; each is expressed as a pair of small matrices applied along
rows and columns, which gives the autograd engine an exact adjoint for free.
"""

from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ntg.errors import NumericError, ShapeMismatchError

Scale = Union[int, float, Fraction]

CUBIC_A = -0.5


def as_grid(data, what: str = "grid") -> np.ndarray:
    """Coerce to a finite float64 (C, H, W) array; 2-D input gains a channel axis."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeMismatchError(f"{what} must be (channels, height, width)", arr.shape, ("C", "H", "W"))
    ensure_finite(arr, what)
    return arr


def ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(what)
    return arr


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """(C, Ho, Wo, kh, kw) view of every receptive field."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    return sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]


def _check_conv(x: np.ndarray, kernels: np.ndarray, stride: int, padding: int) -> Tuple[int, int]:
    if kernels.ndim != 4 or kernels.shape[1] != x.shape[0]:
        raise ShapeMismatchError("conv2d kernels vs input", kernels.shape, x.shape)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    _, kh, kw = kernels.shape[1:]
    ho = conv_output_size(x.shape[1], kh, stride, padding)
    wo = conv_output_size(x.shape[2], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeMismatchError("conv2d kernel larger than padded input", kernels.shape, x.shape)
    return ho, wo


def conv2d(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlation of ``x`` (C, H, W) with a bank shaped (O, C, kh, kw)."""
    _check_conv(x, kernels, stride, padding)
    _, _, kh, kw = kernels.shape
    cols = _windows(x, kh, kw, stride, padding)
    out = np.tensordot(kernels, cols, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        if bias.shape != (kernels.shape[0],):
            raise ShapeMismatchError("conv2d bias", bias.shape, (kernels.shape[0],))
        out = out + bias[:, np.newaxis, np.newaxis]
    return out


def conv2d_backward(
    x: np.ndarray,
    kernels: np.ndarray,
    grad_out: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a conv2d w.r.t. input, kernels and bias."""
    ho, wo = _check_conv(x, kernels, stride, padding)
    _, c, kh, kw = kernels.shape
    if grad_out.shape != (kernels.shape[0], ho, wo):
        raise ShapeMismatchError("conv2d output gradient", grad_out.shape, (kernels.shape[0], ho, wo))

    cols = _windows(x, kh, kw, stride, padding)
    grad_w = np.tensordot(grad_out, cols, axes=([1, 2], [1, 2]))
    grad_b = grad_out.sum(axis=(1, 2))

    h, w = x.shape[1:]
    grad_xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            grad_xp[:, i:i + row_span:stride, j:j + col_span:stride] += np.tensordot(
                kernels[:, :, i, j], grad_out, axes=(0, 0)
            )
    grad_x = grad_xp[:, padding:padding + h, padding:padding + w]
    return grad_x, grad_w, grad_b


# ============================================================
# Separable linear maps
# ============================================================

def cubic_weight(t, a: float = CUBIC_A):
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    near = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    far = ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def scaled_size(n: int, scale: Scale) -> int:
    """round(n * scale), halves rounded up, computed exactly."""
    return int(Fraction(n) * Fraction(scale) + Fraction(1, 2))


def resample_matrix(n_in: int, n_out: int, scale: Optional[Scale] = None) -> np.ndarray:
    """(n_out, n_in) bicubic interpolation matrix with clamp-to-edge sampling.

    Output sample ``d`` reads source coordinate ``(d + 0.5) / scale - 0.5``.
    """
    scale = Fraction(n_out, n_in) if scale is None else Fraction(scale)
    mat = np.zeros((n_out, n_in))
    if scale == 1 and n_out == n_in:
        return np.eye(n_in)
    for d in range(n_out):
        src = float((d + Fraction(1, 2)) / scale - Fraction(1, 2))
        base = int(np.floor(src))
        for tap in range(base - 1, base + 3):
            weight = float(cubic_weight(src - tap))
            if weight != 0.0:
                mat[d, min(max(tap, 0), n_in - 1)] += weight
    return mat


def pool_matrix(n_in: int) -> np.ndarray:
    """2-to-1 averaging; an odd trailing sample averages alone."""
    n_out = (n_in + 1) // 2
    mat = np.zeros((n_out, n_in))
    for d in range(n_out):
        span = range(2 * d, min(2 * d + 2, n_in))
        mat[d, list(span)] = 1.0 / len(span)
    return mat


def upsample_matrix(n_in: int, factor: int = 2) -> np.ndarray:
    """Nearest-neighbour replication."""
    return np.repeat(np.eye(n_in), factor, axis=0)


def separable(x: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Apply ``rows`` along height and ``cols`` along width of every channel."""
    return np.einsum("ih,chw,jw->cij", rows, x, cols, optimize=True)


def bicubic_resample(x: np.ndarray, scale: Scale) -> np.ndarray:
    if Fraction(scale) <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w = x.shape[1:]
    ho, wo = scaled_size(h, scale), scaled_size(w, scale)
    if ho < 1 or wo < 1:
        raise ShapeMismatchError("bicubic output", (ho, wo), (1, 1))
    if Fraction(scale) == 1:
        return np.array(x, dtype=np.float64, copy=True)
    return separable(x, resample_matrix(h, ho, scale), resample_matrix(w, wo, scale))


def bicubic_resize(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bicubic resampling to exact target dims (per-axis scale = out/in)."""
    if height < 1 or width < 1:
        raise ShapeMismatchError("bicubic output", (height, width), (1, 1))
    h, w = x.shape[1:]
    if (height, width) == (h, w):
        return np.array(x, dtype=np.float64, copy=True)
    return separable(x, resample_matrix(h, height), resample_matrix(w, width))


def avg_pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[1:]
    return separable(x, pool_matrix(h), pool_matrix(w))


def upsample_nearest(x: np.ndarray, factor: int = 2) -> np.ndarray:
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatchError("concat_channels spatial dims", a.shape, b.shape)
    return np.concatenate([a, b], axis=0)
