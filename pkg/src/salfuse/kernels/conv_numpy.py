"""Pure numpy convolution kernels (im2col-style, BLAS-backed).

All three entry points share the contract of the compiled backend:
inputs are contiguous rank-4 arrays of one float dtype, `x` is the
*unpadded* input, and output-size validity has already been checked by
the caller (salfuse.tensor.conv2d).
"""

from __future__ import annotations

import numpy as np


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _patch_view(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
                out_h: int, out_w: int) -> np.ndarray:
    """Strided window view of shape (N, C, kh, kw, out_h, out_w)."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    shape = (n, c, kh, kw, out_h, out_w)
    strides = (sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride)
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides,
                                           writeable=False)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                   dilation: int, out_h: int, out_w: int) -> np.ndarray:
    xp = _pad(x, padding)
    kh, kw = w.shape[2], w.shape[3]
    patches = _patch_view(xp, kh, kw, stride, dilation, out_h, out_w)
    # (Cout, N, out_h, out_w) <- contract over (Cin, kh, kw)
    y = np.tensordot(w, patches, axes=([1, 2, 3], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def conv2d_backward_input(g: np.ndarray, w: np.ndarray, x_shape: tuple,
                          stride: int, padding: int, dilation: int) -> np.ndarray:
    n, c, h, wd = x_shape
    _, _, out_h, out_w = g.shape
    kh, kw = w.shape[2], w.shape[3]
    # per-tap contributions: (N, out_h, out_w, Cin, kh, kw)
    gk = np.tensordot(g, w, axes=([1], [0]))
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :,
                i * dilation: i * dilation + out_h * stride: stride,
                j * dilation: j * dilation + out_w * stride: stride] += \
                gk[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(dxp)


def conv2d_backward_kernel(g: np.ndarray, x: np.ndarray, k_shape: tuple,
                           stride: int, padding: int, dilation: int) -> np.ndarray:
    xp = _pad(x, padding)
    _, _, kh, kw = k_shape
    _, _, out_h, out_w = g.shape
    patches = _patch_view(xp, kh, kw, stride, dilation, out_h, out_w)
    dw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))
    return np.ascontiguousarray(dw)
