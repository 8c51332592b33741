# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct-loop convolution kernels, compiled.

Works on pre-padded inputs so the inner loops carry no bound checks.
The Python-facing wrappers in salfuse.kernels handle padding, output
allocation and dtype policing; these routines only do arithmetic.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def forward(real[:, :, :, ::1] xp, real[:, :, :, ::1] w,
            real[:, :, :, ::1] out, int stride, int dilation):
    cdef Py_ssize_t N = out.shape[0], Cout = out.shape[1]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t Cin = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, co, ci, i, j, oh, ow, ih, jw
    cdef real kval
    with nogil:
        for n in range(N):
            for co in range(Cout):
                for ci in range(Cin):
                    for i in range(KH):
                        for j in range(KW):
                            kval = w[co, ci, i, j]
                            jw = j * dilation
                            for oh in range(Ho):
                                ih = oh * stride + i * dilation
                                for ow in range(Wo):
                                    out[n, co, oh, ow] += kval * xp[n, ci, ih, jw + ow * stride]


def backward_input(real[:, :, :, ::1] g, real[:, :, :, ::1] w,
                   real[:, :, :, ::1] dxp, int stride, int dilation):
    cdef Py_ssize_t N = g.shape[0], Cout = g.shape[1]
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t Cin = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, co, ci, i, j, oh, ow, ih, jw
    cdef real kval
    with nogil:
        for n in range(N):
            for co in range(Cout):
                for ci in range(Cin):
                    for i in range(KH):
                        for j in range(KW):
                            kval = w[co, ci, i, j]
                            jw = j * dilation
                            for oh in range(Ho):
                                ih = oh * stride + i * dilation
                                for ow in range(Wo):
                                    dxp[n, ci, ih, jw + ow * stride] += kval * g[n, co, oh, ow]


def backward_kernel(real[:, :, :, ::1] g, real[:, :, :, ::1] xp,
                    real[:, :, :, ::1] dw, int stride, int dilation):
    cdef Py_ssize_t N = g.shape[0], Cout = g.shape[1]
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t Cin = dw.shape[1], KH = dw.shape[2], KW = dw.shape[3]
    cdef Py_ssize_t n, co, ci, i, j, oh, ow, ih, jw
    cdef real acc
    with nogil:
        for co in range(Cout):
            for ci in range(Cin):
                for i in range(KH):
                    for j in range(KW):
                        jw = j * dilation
                        acc = 0
                        for n in range(N):
                            for oh in range(Ho):
                                ih = oh * stride + i * dilation
                                for ow in range(Wo):
                                    acc += g[n, co, oh, ow] * xp[n, ci, ih, jw + ow * stride]
                        dw[co, ci, i, j] = acc
