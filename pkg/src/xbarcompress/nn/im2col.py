"""Patch extraction so that convolution becomes a single matrix product."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ShapeError


def conv_output_size(size, k, stride):
    if size < k or (size - k) % stride:
        raise ShapeError(f"kernel {k} with stride {stride} does not tile input size {size}")
    return (size - k) // stride + 1


def im2col(x, kernel):
    """Rearrange an (B, C, H, W) block into a (B*OH*OW, C*kh*kw) patch matrix.

    Rows run over batch elements, then output positions in row-major order.
    Columns run over channels, then kernel rows, then kernel columns, which
    is also the row order of a conv layer's (fan-in x filters) weight matrix.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"im2col expects a 4-D block, got shape {x.shape}")
    kh, kw, stride = kernel
    B, C, H, W = x.shape
    oh = conv_output_size(H, kh, stride)
    ow = conv_output_size(W, kw, stride)
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, OH, OW, kh, kw) -> (B, OH, OW, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * oh * ow, C * kh * kw)


def col2im(cols, input_shape, kernel):
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the input grid."""
    kh, kw, stride = kernel
    B, C, H, W = input_shape
    oh = conv_output_size(H, kh, stride)
    ow = conv_output_size(W, kw, stride)
    patches = np.ascontiguousarray(cols.reshape(B, oh, ow, C, kh, kw).transpose(4, 5, 0, 3, 1, 2))
    out = np.zeros(input_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += patches[i, j]
    return out
