"""Pure-numpy implementations of the convolution/pooling hot kernels.

These are the fallback backend when the compiled extension is unavailable.
Array layout is NHWC throughout; conv weights are (kh, kw, cin, cout).
Reductions run through BLAS (tensordot), so accumulation may be wider than
the storage dtype; outputs are returned in the input dtype.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_input(x, pads):
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def _windows(x, kh, kw, sh, sw):
    # (N, H', W', C, kh, kw) view over the padded input
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return win[:, ::sh, ::sw]


def conv2d_forward(x, w, b, stride, pads):
    """Cross-correlate x (N,H,W,Cin) with w (kh,kw,Cin,Cout), add bias.

    Returns (N, H', W', Cout) where H' = (H + pt + pb - kh)//sh + 1.
    """
    kh, kw, _, _ = w.shape
    sh, sw = stride
    xp = _pad_input(np.ascontiguousarray(x), pads)
    win = _windows(xp, kh, kw, sh, sw)
    y = np.tensordot(win, w, axes=([4, 5, 3], [0, 1, 2]))
    y += b
    return np.ascontiguousarray(y.astype(x.dtype, copy=False))


def conv2d_backward(x, w, stride, pads, dy, need_dx=True, need_dw=True):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias.

    Returns (dx or None, dw or None, db).
    """
    kh, kw, _, _ = w.shape
    sh, sw = stride
    pt, pb, pl, pr = pads
    n, h, ww_in, _ = x.shape
    _, ho, wo, _ = dy.shape
    dy = np.ascontiguousarray(dy)

    db = dy.sum(axis=(0, 1, 2)).astype(x.dtype, copy=False)

    dw = None
    if need_dw:
        xp = _pad_input(np.ascontiguousarray(x), pads)
        win = _windows(xp, kh, kw, sh, sw)
        # (N,H',W',C,kh,kw) x (N,H',W',Cout) -> (C,kh,kw,Cout)
        dw = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))
        dw = np.ascontiguousarray(dw.transpose(1, 2, 0, 3).astype(x.dtype, copy=False))

    dx = None
    if need_dx:
        # (N,H',W',Cout) x (kh,kw,Cin,Cout) -> (N,H',W',kh,kw,Cin)
        cols = np.tensordot(dy, w, axes=([3], [3]))
        dxp = np.zeros((n, h + pt + pb, ww_in + pl + pr, x.shape[3]), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + ho * sh : sh, j : j + wo * sw : sw, :] += cols[:, :, :, i, j, :]
        dx = dxp[:, pt : pt + h, pl : pl + ww_in, :].astype(x.dtype, copy=False)
        dx = np.ascontiguousarray(dx)

    return dx, dw, db


def maxpool2d_forward(x, pool, stride):
    """Max over (ph, pw) windows with the given stride.

    Returns (y, arg) where arg holds the flat row-major in-window index of
    the selected maximum (first occurrence on ties).
    """
    ph, pw = pool
    sh, sw = stride
    win = _windows(np.ascontiguousarray(x), ph, pw, sh, sw)
    n, ho, wo, c = win.shape[:4]
    flat = win.reshape(n, ho, wo, c, ph * pw)
    arg = flat.argmax(axis=4).astype(np.int32)
    y = np.take_along_axis(flat, arg[..., None].astype(np.intp), axis=4)[..., 0]
    return np.ascontiguousarray(y), np.ascontiguousarray(arg)


def maxpool2d_backward(x_shape, arg, pool, stride, dy):
    """Route dy to the argmax positions; overlapping windows accumulate."""
    ph, pw = pool
    sh, sw = stride
    n, ho, wo, c = dy.shape
    dx = np.zeros(x_shape, dtype=dy.dtype)
    ns, hs, ws, cs = np.ogrid[0:n, 0:ho, 0:wo, 0:c]
    hi = hs * sh + arg // pw
    wi = ws * sw + arg % pw
    np.add.at(dx, (ns, hi, wi, cs), dy)
    return dx
