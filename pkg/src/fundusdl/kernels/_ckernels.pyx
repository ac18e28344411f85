# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution/pooling kernels (NHWC layout).

Loops are ordered so the innermost runs over the output-channel axis, which
is contiguous for both the weights and the upstream gradient; accumulation
is double precision regardless of the storage dtype.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   floating[::1] b, tuple stride, tuple pads):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wi = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t pt = pads[0], pl = pads[2]
    cdef Py_ssize_t ho = (h + pads[0] + pads[1] - kh) // sh + 1
    cdef Py_ssize_t wo = (wi + pads[2] + pads[3] - kw) // sw + 1

    if floating is float:
        out_np = np.empty((n, ho, wo, cout), dtype=np.float32)
    else:
        out_np = np.empty((n, ho, wo, cout), dtype=np.float64)
    cdef floating[:, :, :, ::1] y = out_np
    acc_np = np.empty(cout, dtype=np.float64)
    cdef double[::1] acc = acc_np

    cdef Py_ssize_t bi, oy, ox, oc, ky, kx, ic, iy, ix
    cdef double xv
    cdef const floating* xrow
    cdef const floating* wrow
    with nogil:
        for bi in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for oc in range(cout):
                        acc[oc] = b[oc]
                    for ky in range(kh):
                        iy = oy * sh + ky - pt
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * sw + kx - pl
                            if ix < 0 or ix >= wi:
                                continue
                            xrow = &x[bi, iy, ix, 0]
                            wrow = &w[ky, kx, 0, 0]
                            for ic in range(cin):
                                xv = xrow[ic]
                                for oc in range(cout):
                                    acc[oc] += xv * wrow[ic * cout + oc]
                    for oc in range(cout):
                        y[bi, oy, ox, oc] = <floating> acc[oc]
    return out_np


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    tuple stride, tuple pads, floating[:, :, :, ::1] dy,
                    bint need_dx=True, bint need_dw=True):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wi = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t pt = pads[0], pl = pads[2]
    cdef Py_ssize_t ho = dy.shape[1], wo = dy.shape[2]

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64

    db_np = np.zeros(cout, dtype=np.float64)
    cdef double[::1] db = db_np
    # dummy 1-cell buffers keep the memoryviews valid when a grad is skipped
    cdef tuple dx_shape = (1, 1, 1, 1)
    cdef tuple dw_shape = (1, 1, 1, 1)
    if need_dx:
        dx_shape = (n, h, wi, cin)
    if need_dw:
        dw_shape = (kh, kw, cin, cout)
    dx_np = np.zeros(dx_shape, dtype=np.float64)
    dw_np = np.zeros(dw_shape, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_np
    cdef double[:, :, :, ::1] dw = dw_np

    cdef Py_ssize_t bi, oy, ox, oc, ky, kx, ic, iy, ix
    cdef double xv, s
    cdef const floating* dyrow
    cdef const floating* xrow
    cdef const floating* wrow
    cdef double* dwrow
    with nogil:
        for bi in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    dyrow = &dy[bi, oy, ox, 0]
                    for oc in range(cout):
                        db[oc] += dyrow[oc]
                    for ky in range(kh):
                        iy = oy * sh + ky - pt
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * sw + kx - pl
                            if ix < 0 or ix >= wi:
                                continue
                            if need_dw:
                                xrow = &x[bi, iy, ix, 0]
                                dwrow = &dw[ky, kx, 0, 0]
                                for ic in range(cin):
                                    xv = xrow[ic]
                                    for oc in range(cout):
                                        dwrow[ic * cout + oc] += xv * dyrow[oc]
                            if need_dx:
                                wrow = &w[ky, kx, 0, 0]
                                for ic in range(cin):
                                    s = 0.0
                                    for oc in range(cout):
                                        s += wrow[ic * cout + oc] * dyrow[oc]
                                    dx[bi, iy, ix, ic] += s
    dx_out = dx_np.astype(dtype) if need_dx else None
    dw_out = dw_np.astype(dtype) if need_dw else None
    return dx_out, dw_out, db_np.astype(dtype)


def maxpool2d_forward(floating[:, :, :, ::1] x, tuple pool, tuple stride):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wi = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ph = pool[0], pw = pool[1]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ho = (h - ph) // sh + 1
    cdef Py_ssize_t wo = (wi - pw) // sw + 1

    if floating is float:
        y_np = np.empty((n, ho, wo, c), dtype=np.float32)
    else:
        y_np = np.empty((n, ho, wo, c), dtype=np.float64)
    arg_np = np.empty((n, ho, wo, c), dtype=np.int32)
    cdef floating[:, :, :, ::1] y = y_np
    cdef int[:, :, :, ::1] arg = arg_np

    cdef Py_ssize_t bi, oy, ox, cc, ky, kx
    cdef floating best, v
    cdef int best_i
    with nogil:
        for bi in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for cc in range(c):
                        best = x[bi, oy * sh, ox * sw, cc]
                        best_i = 0
                        for ky in range(ph):
                            for kx in range(pw):
                                v = x[bi, oy * sh + ky, ox * sw + kx, cc]
                                if v > best:  # strict: ties keep the first
                                    best = v
                                    best_i = <int> (ky * pw + kx)
                        y[bi, oy, ox, cc] = best
                        arg[bi, oy, ox, cc] = best_i
    return y_np, arg_np


def maxpool2d_backward(tuple x_shape, int[:, :, :, ::1] arg, tuple pool,
                       tuple stride, floating[:, :, :, ::1] dy):
    cdef Py_ssize_t n = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2], c = dy.shape[3]
    cdef Py_ssize_t pw = pool[1]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]

    if floating is float:
        dx_np = np.zeros(x_shape, dtype=np.float32)
    else:
        dx_np = np.zeros(x_shape, dtype=np.float64)
    cdef floating[:, :, :, ::1] dx = dx_np

    cdef Py_ssize_t bi, oy, ox, cc
    cdef int a
    with nogil:
        for bi in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for cc in range(c):
                        a = arg[bi, oy, ox, cc]
                        dx[bi, oy * sh + a // pw, ox * sw + a % pw, cc] += dy[bi, oy, ox, cc]
    return dx_np
