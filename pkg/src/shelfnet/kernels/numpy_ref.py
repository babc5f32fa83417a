"""Pure-numpy convolution kernels (im2col / offset-scatter)."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def out_size(h, k, stride, padding, dilation):
    return (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _patch_view(xp, kh, kw, oh, ow, stride, dilation):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d_forward(x, w, stride, padding, dilation):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = out_size(h, kh, stride, padding, dilation)
    ow = out_size(wd, kw, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    view = _patch_view(xp, kh, kw, oh, ow, stride, dilation)
    y = np.einsum("ncuvhw,ocuv->nohw", view, w, optimize=True)
    return np.ascontiguousarray(y)


def conv2d_grad_weight(x, gy, stride, padding, dilation, kh, kw):
    oh, ow = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    view = _patch_view(xp, kh, kw, oh, ow, stride, dilation)
    gw = np.einsum("ncuvhw,nohw->ocuv", view, gy, optimize=True)
    return np.ascontiguousarray(gw)


def conv2d_grad_input(gy, w, stride, padding, dilation, in_h, in_w):
    # Adjoint of the gather: one dense scatter per kernel offset, written as
    # strided slice adds so no index buffers are needed.
    n, _, oh, ow = gy.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    hp, wp = in_h + 2 * padding, in_w + 2 * padding
    gxp = np.zeros((n, cin, hp, wp), dtype=gy.dtype)
    for u in range(kh):
        r0 = u * dilation
        for v in range(kw):
            c0 = v * dilation
            contrib = np.einsum("nohw,oc->nchw", gy, w[:, :, u, v], optimize=True)
            gxp[:, :, r0 : r0 + stride * (oh - 1) + 1 : stride,
                c0 : c0 + stride * (ow - 1) + 1 : stride] += contrib
    if padding:
        gxp = gxp[:, :, padding : padding + in_h, padding : padding + in_w]
    return np.ascontiguousarray(gxp)
