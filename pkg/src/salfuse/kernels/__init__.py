"""Convolution kernel backends.

Two interchangeable implementations of the conv2d forward/backward
arithmetic: a compiled Cython extension (direct loops) and a numpy
path (strided im2col views + BLAS contractions). The backend is chosen
once at import via ``SALFUSE_KERNEL``:

* ``numpy`` or ``auto`` (default): the im2col/BLAS path,
* ``compiled``: the extension (ImportError if it was not built).

``benchmarks/bench_conv.py`` times the two on the network's actual
convolution shapes; on every one of them the BLAS contraction beats the
direct loops by 3-8x, which is why ``auto`` resolves to numpy. The
extension stays useful as an independent arithmetic cross-check (the
test suite asserts parity) and for environments with a crippled BLAS.
"""

from __future__ import annotations

import os

import numpy as np

from salfuse.kernels import conv_numpy

_choice = os.environ.get("SALFUSE_KERNEL", "auto").lower()
if _choice not in ("auto", "compiled", "numpy"):
    raise ValueError(f"SALFUSE_KERNEL must be auto|compiled|numpy, got {_choice!r}")

try:
    from salfuse.kernels import _convkern
    HAVE_COMPILED = True
except ImportError:
    _convkern = None
    HAVE_COMPILED = False
    if _choice == "compiled":
        raise

_compiled = _convkern if _choice == "compiled" else None

BACKEND = "compiled" if _compiled is not None else "numpy"


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _require_compiled() -> None:
    if _convkern is None:
        raise RuntimeError("compiled kernel extension is not built")


def compiled_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                     dilation: int, out_h: int, out_w: int) -> np.ndarray:
    _require_compiled()
    xp = _pad(x, padding)
    out = np.zeros((x.shape[0], w.shape[0], out_h, out_w), dtype=x.dtype)
    _convkern.forward(xp, np.ascontiguousarray(w), out, stride, dilation)
    return out


def compiled_backward_input(g: np.ndarray, w: np.ndarray, x_shape: tuple,
                            stride: int, padding: int, dilation: int) -> np.ndarray:
    _require_compiled()
    n, c, h, wd = x_shape
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    _convkern.backward_input(np.ascontiguousarray(g), np.ascontiguousarray(w),
                             dxp, stride, dilation)
    if padding:
        dxp = np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])
    return dxp


def compiled_backward_kernel(g: np.ndarray, x: np.ndarray, k_shape: tuple,
                             stride: int, padding: int, dilation: int) -> np.ndarray:
    _require_compiled()
    xp = _pad(x, padding)
    dw = np.zeros(k_shape, dtype=g.dtype)
    _convkern.backward_kernel(np.ascontiguousarray(g), xp, dw, stride, dilation)
    return dw


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                   dilation: int, out_h: int, out_w: int) -> np.ndarray:
    if _compiled is None:
        return conv_numpy.conv2d_forward(x, w, stride, padding, dilation, out_h, out_w)
    return compiled_forward(x, w, stride, padding, dilation, out_h, out_w)


def conv2d_backward_input(g: np.ndarray, w: np.ndarray, x_shape: tuple,
                          stride: int, padding: int, dilation: int) -> np.ndarray:
    if _compiled is None:
        return conv_numpy.conv2d_backward_input(g, w, x_shape, stride, padding, dilation)
    return compiled_backward_input(g, w, x_shape, stride, padding, dilation)


def conv2d_backward_kernel(g: np.ndarray, x: np.ndarray, k_shape: tuple,
                           stride: int, padding: int, dilation: int) -> np.ndarray:
    if _compiled is None:
        return conv_numpy.conv2d_backward_kernel(g, x, k_shape, stride, padding, dilation)
    return compiled_backward_kernel(g, x, k_shape, stride, padding, dilation)
