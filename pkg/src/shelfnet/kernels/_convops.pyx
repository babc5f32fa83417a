# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# Compiled convolution kernels: im2col patch extraction plus a hand-rolled
# GEMM whose dot products use four fixed-order lanes, so results are
# bitwise reproducible for any thread count (each output element is reduced
# in one fixed order by exactly one thread).
import numpy as np

cimport cython
from cython.parallel cimport prange

ctypedef fused real:
    float
    double

# below this many multiply-accumulates the OpenMP wake-up costs more than it buys
DEF PAR_THRESHOLD = 1_500_000


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t step) noexcept nogil:
    # smallest k >= 0 with k*step + off >= 0
    if off >= 0:
        return 0
    return (-off + step - 1) // step


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t step, Py_ssize_t limit, Py_ssize_t cap) noexcept nogil:
    # one past the largest k < cap with k*step + off <= limit - 1
    cdef Py_ssize_t h
    if limit - 1 - off < 0:
        return 0
    h = (limit - 1 - off) // step + 1
    if h > cap:
        h = cap
    return h


cdef inline real _dot(real* a, real* b, Py_ssize_t n) noexcept nogil:
    cdef real s0 = 0, s1 = 0, s2 = 0, s3 = 0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 = s0 + a[k] * b[k]
        s1 = s1 + a[k + 1] * b[k + 1]
        s2 = s2 + a[k + 2] * b[k + 2]
        s3 = s3 + a[k + 3] * b[k + 3]
        k = k + 4
    while k < n:
        s0 = s0 + a[k] * b[k]
        k = k + 1
    return (s0 + s1) + (s2 + s3)


cdef void _fill_col(real* xp, real* colp, Py_ssize_t b, Py_ssize_t i,
                    Py_ssize_t cin, Py_ssize_t h, Py_ssize_t wd,
                    Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t oh, Py_ssize_t ow,
                    Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation) noexcept nogil:
    # col layout: (n, oh*ow, cin*kh*kw), zero outside the image; one output
    # row per call so the buffer is written front to back
    cdef Py_ssize_t kk = cin * kh * kw
    cdef Py_ssize_t u, v, j, ci, ih, vlo, vhi, coff
    cdef real* xrow
    cdef real* crow
    for j in range(ow):
        coff = j * stride - padding
        vlo = _lo(coff, dilation)
        vhi = _hi(coff, dilation, wd, kw)
        crow = colp + (b * oh * ow + i * ow + j) * kk
        for ci in range(cin):
            for u in range(kh):
                ih = i * stride - padding + u * dilation
                if 0 <= ih < h:
                    xrow = xp + ((b * cin + ci) * h + ih) * wd + coff
                    if dilation == 1:
                        for v in range(vlo, vhi):
                            crow[(ci * kh + u) * kw + v] = xrow[v]
                    else:
                        for v in range(vlo, vhi):
                            crow[(ci * kh + u) * kw + v] = xrow[v * dilation]


cdef object _zeros(real* probe, tuple shape):
    # dtype follows the fused specialization
    if real is double:
        return np.zeros(shape, dtype=np.float64)
    else:
        return np.zeros(shape, dtype=np.float32)


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    cdef Py_ssize_t kk = cin * kh * kw, pp = oh * ow
    cdef real* xp = &x[0, 0, 0, 0]
    out = _zeros(xp, (n, cout, oh, ow))
    col_arr = _zeros(xp, (n, pp, kk))
    cdef real[:, :, :, ::1] y = out
    cdef real[:, :, ::1] col = col_arr
    cdef real* yp = &y[0, 0, 0, 0]
    cdef real* wp = &w[0, 0, 0, 0]
    cdef real* colp = &col[0, 0, 0]
    cdef Py_ssize_t t, b, o, p
    cdef bint parallel = n * cout * pp * kk >= PAR_THRESHOLD
    if parallel:
        for t in prange(n * oh, nogil=True, schedule='static'):
            _fill_col(xp, colp, t // oh, t % oh, cin, h, wd, kh, kw, oh, ow,
                      stride, padding, dilation)
        for t in prange(n * cout, nogil=True, schedule='static'):
            b = t // cout
            o = t % cout
            for p in range(pp):
                yp[t * pp + p] = _dot(wp + o * kk, colp + (b * pp + p) * kk, kk)
    else:
        with nogil:
            for t in range(n * oh):
                _fill_col(xp, colp, t // oh, t % oh, cin, h, wd, kh, kw, oh, ow,
                          stride, padding, dilation)
            for t in range(n * cout):
                b = t // cout
                o = t % cout
                for p in range(pp):
                    yp[t * pp + p] = _dot(wp + o * kk, colp + (b * pp + p) * kk, kk)
    return out


def conv2d_grad_weight(real[:, :, :, ::1] x, real[:, :, :, ::1] gy,
                       Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation,
                       Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t kk = cin * kh * kw, pp = oh * ow
    cdef real* xp = &x[0, 0, 0, 0]
    out = _zeros(xp, (cout, cin, kh, kw))
    col_arr = _zeros(xp, (n, pp, kk))
    cdef real[:, :, :, ::1] gw = out
    cdef real[:, :, ::1] col = col_arr
    cdef real* gwp = &gw[0, 0, 0, 0]
    cdef real* gyp = &gy[0, 0, 0, 0]
    cdef real* colp = &col[0, 0, 0]
    cdef real* gwrow
    cdef real* crow
    cdef real g
    cdef Py_ssize_t t, b, o, p, k
    cdef bint parallel = n * cout * pp * kk >= PAR_THRESHOLD
    if parallel:
        for t in prange(n * oh, nogil=True, schedule='static'):
            _fill_col(xp, colp, t // oh, t % oh, cin, h, wd, kh, kw, oh, ow,
                      stride, padding, dilation)
        for o in prange(cout, nogil=True, schedule='static'):
            gwrow = gwp + o * kk
            for b in range(n):
                for p in range(pp):
                    g = gyp[(b * cout + o) * pp + p]
                    crow = colp + (b * pp + p) * kk
                    for k in range(kk):
                        gwrow[k] += g * crow[k]
    else:
        with nogil:
            for t in range(n * oh):
                _fill_col(xp, colp, t // oh, t % oh, cin, h, wd, kh, kw, oh, ow,
                          stride, padding, dilation)
            for o in range(cout):
                gwrow = gwp + o * kk
                for b in range(n):
                    for p in range(pp):
                        g = gyp[(b * cout + o) * pp + p]
                        crow = colp + (b * pp + p) * kk
                        for k in range(kk):
                            gwrow[k] += g * crow[k]
    return out


cdef void _scatter_col(real* gxp, real* tmpp, Py_ssize_t b, Py_ssize_t ci,
                       Py_ssize_t cin, Py_ssize_t in_h, Py_ssize_t in_w,
                       Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t oh, Py_ssize_t ow,
                       Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation) noexcept nogil:
    # adjoint of _fill_col: tmp layout (n, cin*kh*kw, oh*ow)
    cdef Py_ssize_t kk = cin * kh * kw, pp = oh * ow
    cdef Py_ssize_t u, v, i, j, ilo, ihi, jlo, jhi, roff, coff
    cdef real* gxrow
    cdef real* trow
    for u in range(kh):
        roff = u * dilation - padding
        ilo = _lo(roff, stride)
        ihi = _hi(roff, stride, in_h, oh)
        for v in range(kw):
            coff = v * dilation - padding
            jlo = _lo(coff, stride)
            jhi = _hi(coff, stride, in_w, ow)
            trow = tmpp + (b * kk + (ci * kh + u) * kw + v) * pp
            for i in range(ilo, ihi):
                gxrow = gxp + ((b * cin + ci) * in_h + i * stride + roff) * in_w + coff
                if stride == 1:
                    for j in range(jlo, jhi):
                        gxrow[j] += trow[i * ow + j]
                else:
                    for j in range(jlo, jhi):
                        gxrow[j * stride] += trow[i * ow + j]


def conv2d_grad_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                      Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation,
                      Py_ssize_t in_h, Py_ssize_t in_w):
    cdef Py_ssize_t n = gy.shape[0], cout = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t kk = cin * kh * kw, pp = oh * ow
    cdef real* gyp = &gy[0, 0, 0, 0]
    out = _zeros(gyp, (n, cin, in_h, in_w))
    tmp_arr = _zeros(gyp, (n, kk, pp))
    cdef real[:, :, :, ::1] gx = out
    cdef real[:, :, ::1] tmp = tmp_arr
    cdef real* gxp = &gx[0, 0, 0, 0]
    cdef real* wp = &w[0, 0, 0, 0]
    cdef real* tmpp = &tmp[0, 0, 0]
    cdef real* trow
    cdef real* gyrow
    cdef real wv
    cdef Py_ssize_t t, b, o, k, p
    cdef bint parallel = n * cout * pp * kk >= PAR_THRESHOLD
    # tmp[b, k, :] = sum_o w2d[o, k] * gy[b, o, :]
    if parallel:
        for t in prange(n * kk, nogil=True, schedule='static'):
            b = t // kk
            k = t % kk
            trow = tmpp + t * pp
            for o in range(cout):
                wv = wp[o * kk + k]
                gyrow = gyp + (b * cout + o) * pp
                for p in range(pp):
                    trow[p] += wv * gyrow[p]
        for t in prange(n * cin, nogil=True, schedule='static'):
            _scatter_col(gxp, tmpp, t // cin, t % cin, cin, in_h, in_w,
                         kh, kw, oh, ow, stride, padding, dilation)
    else:
        with nogil:
            for t in range(n * kk):
                b = t // kk
                k = t % kk
                trow = tmpp + t * pp
                for o in range(cout):
                    wv = wp[o * kk + k]
                    gyrow = gyp + (b * cout + o) * pp
                    for p in range(pp):
                        trow[p] += wv * gyrow[p]
            for t in range(n * cin):
                _scatter_col(gxp, tmpp, t // cin, t % cin, cin, in_h, in_w,
                             kh, kw, oh, ow, stride, padding, dilation)
    return out
