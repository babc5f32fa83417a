"""Primitive differentiable operations.

Exactly the op set the shelf networks need: convolutions (plain and
transposed), batch norm, relu/sigmoid, inverted dropout, bilinear
upsampling, max/global pooling, elementwise add, a per-channel scaling used
by the channel-attention gate, and softmax cross-entropy.  Each op computes
its forward value eagerly and registers a backward closure on the tape.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import kernels as K
from .autograd import Parameter, Tensor4, accumulate, record
from .errors import ConfigError, InputError, ShapeError


def _t(x) -> Tensor4:
    if isinstance(x, Parameter):
        return x.tensor
    if isinstance(x, Tensor4):
        return x
    raise ShapeError(f"expected Tensor4 or Parameter, got {type(x).__name__}")


def _same_dtype(*tensors: Tensor4):
    d = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != d:
            raise ConfigError(f"mixed dtypes in one op: {[str(t.dtype) for t in tensors]}")
    return d


# --- convolutions ----------------------------------------------------------

def conv2d(x, w, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor4:
    """2-D convolution, no bias.  Weight layout (c_out, c_in, kh, kw)."""
    xt, wt = _t(x), _t(w)
    _same_dtype(xt, wt)
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigError(f"bad conv geometry stride={stride} padding={padding} dilation={dilation}")
    n, cin, h, wd = xt.shape
    cout, wcin, kh, kw = wt.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    oh = K.conv_out_size(h, kh, stride, padding, dilation)
    ow = K.conv_out_size(wd, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ConfigError(f"conv2d: non-positive output size ({oh}, {ow}) for input {h}x{wd}")
    out = Tensor4(K.conv2d_forward(xt.data, wt.data, stride, padding, dilation),
                  requires_grad=xt.requires_grad or wt.requires_grad)

    def bwd(gy):
        if xt.requires_grad:
            accumulate(xt, K.conv2d_grad_input(gy, wt.data, stride, padding, dilation, h, wd))
        if wt.requires_grad:
            accumulate(wt, K.conv2d_grad_weight(xt.data, gy, stride, padding, dilation, kh, kw))

    record(out, bwd)
    return out


def conv_transpose2d(x, w, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor4:
    """Transposed 2-D convolution: the linear adjoint of ``conv2d`` with the
    same geometry.  Weight layout (c_in, c_out, kh, kw)."""
    xt, wt = _t(x), _t(w)
    _same_dtype(xt, wt)
    if stride < 1 or padding < 0:
        raise ConfigError(f"bad conv_transpose geometry stride={stride} padding={padding}")
    if not 0 <= output_padding < stride:
        raise ConfigError(f"output_padding must be in [0, stride), got {output_padding}")
    n, cin, h, wd = xt.shape
    wcin, cout, kh, kw = wt.shape
    if cin != wcin:
        raise ShapeError(f"conv_transpose2d: input has {cin} channels, kernel expects {wcin}")
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (wd - 1) * stride - 2 * padding + kw + output_padding
    if oh < 1 or ow < 1:
        raise ConfigError(f"conv_transpose2d: non-positive output size ({oh}, {ow})")
    out = Tensor4(K.conv2d_grad_input(xt.data, wt.data, stride, padding, 1, oh, ow),
                  requires_grad=xt.requires_grad or wt.requires_grad)

    def bwd(gy):
        if xt.requires_grad:
            accumulate(xt, K.conv2d_forward(gy, wt.data, stride, padding, 1))
        if wt.requires_grad:
            accumulate(wt, K.conv2d_grad_weight(gy, xt.data, stride, padding, 1, kh, kw))

    record(out, bwd)
    return out


# --- normalization ---------------------------------------------------------

class BatchNormState:
    """Per-channel running statistics owned by a batch-norm layer."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def copy(self) -> "BatchNormState":
        s = BatchNormState(len(self.mean), dtype=self.mean.dtype)
        s.mean = self.mean.copy()
        s.var = self.var.copy()
        return s


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor4:
    """Batch normalization over (n, h, w) per channel.

    Train mode uses biased batch variance and updates the running stats as
    ``new = (1 - momentum) * old + momentum * batch``; eval mode is a pure
    function of the stored stats.
    """
    xt, gt, bt = _t(x), _t(gamma), _t(beta)
    if eps <= 0:
        raise ConfigError(f"batch_norm eps must be > 0, got {eps}")
    n, c, h, w = xt.shape
    if gt.shape != (1, c, 1, 1) or bt.shape != (1, c, 1, 1):
        raise ShapeError(f"batch_norm: gamma/beta must have shape (1, {c}, 1, 1)")
    if len(state.mean) != c:
        raise ShapeError(f"batch_norm: running stats have {len(state.mean)} channels, input {c}")

    if training:
        mu = xt.data.mean(axis=(0, 2, 3), keepdims=True)
        var = xt.data.var(axis=(0, 2, 3), keepdims=True)  # biased
        state.mean[:] = (1.0 - momentum) * state.mean + momentum * mu.reshape(-1)
        state.var[:] = (1.0 - momentum) * state.var + momentum * var.reshape(-1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xt.data - mu) * inv
        out = Tensor4(gt.data * xhat + bt.data,
                      requires_grad=xt.requires_grad or gt.requires_grad or bt.requires_grad)

        def bwd(gy):
            if gt.requires_grad:
                accumulate(gt, (gy * xhat).sum(axis=(0, 2, 3), keepdims=True))
            if bt.requires_grad:
                accumulate(bt, gy.sum(axis=(0, 2, 3), keepdims=True))
            if xt.requires_grad:
                gmean = gy.mean(axis=(0, 2, 3), keepdims=True)
                gxhat_mean = (gy * xhat).mean(axis=(0, 2, 3), keepdims=True)
                accumulate(xt, gt.data * inv * (gy - gmean - xhat * gxhat_mean))

        record(out, bwd)
        return out

    inv = 1.0 / np.sqrt(state.var.reshape(1, c, 1, 1) + eps)
    xhat = (xt.data - state.mean.reshape(1, c, 1, 1)) * inv
    out = Tensor4(gt.data * xhat + bt.data,
                  requires_grad=xt.requires_grad or gt.requires_grad or bt.requires_grad)

    def bwd_eval(gy):
        if gt.requires_grad:
            accumulate(gt, (gy * xhat).sum(axis=(0, 2, 3), keepdims=True))
        if bt.requires_grad:
            accumulate(bt, gy.sum(axis=(0, 2, 3), keepdims=True))
        if xt.requires_grad:
            accumulate(xt, gt.data * inv * gy)

    record(out, bwd_eval)
    return out


# --- activations and regularizers ------------------------------------------

def relu(x) -> Tensor4:
    xt = _t(x)
    out = Tensor4(np.maximum(xt.data, 0.0), requires_grad=xt.requires_grad)

    def bwd(gy):
        accumulate(xt, gy * (xt.data > 0))  # subgradient 0 at 0

    record(out, bwd)
    return out


def sigmoid(x) -> Tensor4:
    xt = _t(x)
    s = 1.0 / (1.0 + np.exp(-xt.data))
    out = Tensor4(s, requires_grad=xt.requires_grad)

    def bwd(gy):
        accumulate(xt, gy * s * (1.0 - s))

    record(out, bwd)
    return out


def dropout(x, p: float, training: bool, rng_seed) -> Tensor4:
    """Inverted dropout: eval mode is the identity, train mode zeroes each
    element with probability ``p`` and scales survivors by 1/(1-p)."""
    xt = _t(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        out = Tensor4(xt.data.copy(), requires_grad=xt.requires_grad)

        def bwd_id(gy):
            accumulate(xt, gy)

        record(out, bwd_id)
        return out

    rng = np.random.default_rng(rng_seed)
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(xt.shape) >= p).astype(xt.dtype) * scale
    out = Tensor4(xt.data * mask, requires_grad=xt.requires_grad)

    def bwd(gy):
        accumulate(xt, gy * mask)

    record(out, bwd)
    return out


# --- resampling and pooling --------------------------------------------------

def _interp_matrix(out_size: int, in_size: int, dtype=np.float64) -> np.ndarray:
    """Dense 1-D bilinear interpolation matrix, align-corners=false."""
    m = np.zeros((out_size, in_size), dtype=dtype)
    if in_size == 1:
        m[:, 0] = 1.0
        return m
    scale = in_size / out_size
    for o in range(out_size):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        i0 = int(np.floor(src))
        i0 = min(i0, in_size - 2)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i0 + 1] += frac
    return m


def interp_matrix(out_size: int, in_size: int, dtype=np.float64) -> np.ndarray:
    return _interp_matrix(out_size, in_size, dtype)


def bilinear_upsample(x, factor: int) -> Tensor4:
    """Bilinear x``factor`` upsampling (align-corners=false)."""
    xt = _t(x)
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        out = Tensor4(xt.data.copy(), requires_grad=xt.requires_grad)

        def bwd_id(gy):
            accumulate(xt, gy)

        record(out, bwd_id)
        return out
    n, c, h, w = xt.shape
    rh = _interp_matrix(h * factor, h, dtype=xt.dtype)
    rw = _interp_matrix(w * factor, w, dtype=xt.dtype)
    # separable: y = R_h @ x @ R_w^T per (n, c) plane
    y = np.einsum("oh,nchw,pw->ncop", rh, xt.data, rw, optimize=True)
    out = Tensor4(y, requires_grad=xt.requires_grad)

    def bwd(gy):
        accumulate(xt, np.ascontiguousarray(
            np.einsum("oh,ncop,pw->nchw", rh, gy, rw, optimize=True)))

    record(out, bwd)
    return out


def global_avg_pool(x) -> Tensor4:
    xt = _t(x)
    n, c, h, w = xt.shape
    out = Tensor4(xt.data.mean(axis=(2, 3), keepdims=True), requires_grad=xt.requires_grad)

    def bwd(gy):
        accumulate(xt, np.broadcast_to(gy / (h * w), xt.shape).copy())

    record(out, bwd)
    return out


def max_pool2d(x, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor4:
    """Max pooling; backward routes the gradient to the first argmax."""
    xt = _t(x)
    n, c, h, w = xt.shape
    oh = K.conv_out_size(h, kernel, stride, padding, 1)
    ow = K.conv_out_size(w, kernel, stride, padding, 1)
    if oh < 1 or ow < 1:
        raise ConfigError(f"max_pool2d: non-positive output size ({oh}, {ow})")
    neg = np.finfo(xt.dtype).min
    xp = np.pad(xt.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=neg) if padding else xt.data
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, kernel, kernel, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    flat = view.reshape(n, c, kernel * kernel, oh, ow)
    idx = flat.argmax(axis=2)
    out = Tensor4(np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0],
                  requires_grad=xt.requires_grad)

    def bwd(gy):
        gxp = np.zeros_like(xp)
        ku, kv = idx // kernel, idx % kernel
        ohg, owg = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
        rows = ohg[None, None] * stride + ku
        cols = owg[None, None] * stride + kv
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(gxp, (ni, ci, rows, cols), gy)
        accumulate(xt, np.ascontiguousarray(
            gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp))

    record(out, bwd)
    return out


# --- combination -------------------------------------------------------------

def add(x, y) -> Tensor4:
    xt, yt = _t(x), _t(y)
    if xt.shape != yt.shape:
        raise ShapeError(f"add: shape mismatch {xt.shape} vs {yt.shape}")
    out = Tensor4(xt.data + yt.data, requires_grad=xt.requires_grad or yt.requires_grad)

    def bwd(gy):
        if xt.requires_grad:
            accumulate(xt, gy)
        if yt.requires_grad:
            accumulate(yt, gy)

    record(out, bwd)
    return out


def scale_channels(x, gate) -> Tensor4:
    """Multiply each channel of ``x`` by a per-channel gate of shape (n, c, 1, 1)."""
    xt, gt = _t(x), _t(gate)
    n, c = xt.shape[:2]
    if gt.shape != (n, c, 1, 1):
        raise ShapeError(f"scale_channels: gate shape {gt.shape} != ({n}, {c}, 1, 1)")
    out = Tensor4(xt.data * gt.data, requires_grad=xt.requires_grad or gt.requires_grad)

    def bwd(gy):
        if xt.requires_grad:
            accumulate(xt, gy * gt.data)
        if gt.requires_grad:
            accumulate(gt, (gy * xt.data).sum(axis=(2, 3), keepdims=True))

    record(out, bwd)
    return out


def weighted_sum(x, weights: np.ndarray) -> Tensor4:
    """Scalar projection sum(x * weights); the reduction used by gradient checks."""
    xt = _t(x)
    warr = np.asarray(weights, dtype=xt.dtype)
    if warr.shape != xt.data.shape:
        raise ShapeError(f"weighted_sum: weights shape {warr.shape} != {xt.shape}")
    out = Tensor4(np.array((xt.data * warr).sum(), dtype=xt.dtype).reshape(1, 1, 1, 1),
                  requires_grad=xt.requires_grad)

    def bwd(gy):
        accumulate(xt, gy.reshape(()) * warr)

    record(out, bwd)
    return out


# --- loss --------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized log-softmax over the channel axis (plain numpy)."""
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels: np.ndarray, ignore_index: int = 255,
                          keep_mask: Optional[np.ndarray] = None):
    """Mean per-pixel cross-entropy over non-ignored pixels.

    Returns ``(loss, pixel_losses)`` where ``loss`` is a scalar Tensor4 and
    ``pixel_losses`` is a plain (n, h, w) array with zeros at ignored pixels.
    ``keep_mask`` restricts both the mean and the gradient to a subset of
    pixels (used by hard-example mining).
    """
    lt = _t(logits)
    n, kcls, h, w = lt.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != ({n}, {h}, {w})")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= kcls))
    if bad.any():
        raise InputError(f"labels contain values outside [0, {kcls}) at {int(bad.sum())} pixels")
    if keep_mask is not None:
        keep = valid & keep_mask.astype(bool)
    else:
        keep = valid
    count = int(keep.sum())
    if count == 0:
        raise InputError("softmax_cross_entropy: no pixels left to score")

    logp = log_softmax(lt.data)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    pixel_losses = np.where(valid, -picked, 0.0)
    loss_val = pixel_losses[keep].sum() / count
    out = Tensor4(np.array(loss_val, dtype=lt.dtype).reshape(1, 1, 1, 1),
                  requires_grad=lt.requires_grad)

    def bwd(gy):
        g = np.exp(logp)
        onehot_rows = np.zeros_like(g)
        np.put_along_axis(onehot_rows, safe[:, None], 1.0, axis=1)
        g -= onehot_rows
        g *= keep[:, None] / count
        accumulate(lt, g * gy.reshape(()))

    record(out, bwd)
    return out, pixel_losses
