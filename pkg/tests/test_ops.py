"""Forward-value oracles and finite-difference gradient checks for every op."""

import numpy as np
import pytest

from shelfnet import autograd, ops
from shelfnet.autograd import Tensor4, backward
from shelfnet.errors import ConfigError, InputError, ShapeError
from .conftest import bilinear_loops, conv2d_loops, numeric_grad

RTOL, ATOL = 1e-3, 1e-5


def t4(arr, rg=True):
    return Tensor4(np.asarray(arr, dtype=np.float64), requires_grad=rg)


def gradcheck(make_out, tensors, seed=0):
    """Analytic grads of sum(P * out) vs central differences, on 64-bit."""
    out = make_out()
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=out.shape)
    loss = ops.weighted_sum(out, proj)
    backward(loss)
    analytic = [t.grad.copy() for t in tensors]
    for t in tensors:
        t.zero_grad()

    def scalar():
        with autograd.no_grad():
            return float((make_out().data * proj).sum())

    numeric = numeric_grad(scalar, [t.data for t in tensors])
    for a, nu in zip(analytic, numeric):
        np.testing.assert_allclose(a, nu, rtol=RTOL, atol=ATOL)


# --- conv2d ------------------------------------------------------------------

def test_conv2d_scalar_multiply():
    x = t4(np.full((1, 1, 1, 1), 3.0))
    w = t4(np.full((1, 1, 1, 1), 2.0))
    assert ops.conv2d(x, w).item() == pytest.approx(6.0)


def test_conv2d_delta_kernel_identity():
    rng = np.random.default_rng(3)
    x = t4(rng.normal(size=(1, 2, 5, 5)))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    y = ops.conv2d(x, t4(w), padding=1)
    np.testing.assert_allclose(y.data, x.data, atol=1e-15)


def test_conv2d_matches_loop_oracle(kernel_backend):
    rng = np.random.default_rng(11)
    x = t4(rng.normal(size=(2, 3, 5, 5)))
    w = t4(rng.normal(size=(4, 3, 3, 3)))
    y = ops.conv2d(x, w, stride=2, padding=1)
    np.testing.assert_allclose(y.data, conv2d_loops(x.data, w.data, 2, 1, 1), atol=1e-12)


def test_conv2d_errors():
    x = t4(np.zeros((1, 3, 4, 4)))
    w = t4(np.zeros((2, 2, 3, 3)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, w)
    with pytest.raises(ConfigError):
        ops.conv2d(t4(np.zeros((1, 2, 2, 2))), w, stride=1, padding=0)  # 2x2 input, 3x3 kernel
    with pytest.raises(ConfigError):
        ops.conv2d(t4(np.zeros((1, 2, 4, 4))), w, stride=0)


@pytest.mark.parametrize("stride,padding,dilation", [(1, 1, 1), (2, 1, 1), (1, 2, 2), (3, 0, 1)])
def test_conv2d_grad(stride, padding, dilation):
    rng = np.random.default_rng(stride * 100 + padding * 10 + dilation)
    x = t4(rng.normal(size=(2, 2, 7, 7)))
    w = t4(rng.normal(size=(3, 2, 3, 3)))
    gradcheck(lambda: ops.conv2d(x, w, stride, padding, dilation), [x, w])


# --- conv_transpose2d ----------------------------------------------------------

def test_conv_transpose_shape_formula():
    x = t4(np.zeros((1, 4, 8, 8)))
    w = t4(np.zeros((4, 2, 3, 3)))
    y = ops.conv_transpose2d(x, w, stride=2, padding=1, output_padding=1)
    assert y.shape == (1, 2, 16, 16)


def test_conv_transpose_single_pixel_broadcast():
    x = t4(np.full((1, 1, 1, 1), 5.0))
    w = t4(np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2))
    y = ops.conv_transpose2d(x, w, stride=2)
    np.testing.assert_allclose(y.data, 5.0 * w.data)


@pytest.mark.parametrize("case", range(20))
def test_conv_adjointness_random_geometries(case):
    # <conv(x, w), y> == <x, conv_transpose(y, w)> for matched geometry.
    # A conv kernel (c_out, c_in, kh, kw) is read by conv_transpose2d as
    # (c_in', c_out', kh, kw) of the adjoint map, so the same array is used.
    rng = np.random.default_rng(1000 + case)
    s = int(rng.integers(1, 4))
    p = int(rng.integers(0, 3))
    k = int(rng.integers(1, 5))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h = int(rng.integers(max(k - 2 * p, 1), 12))
    x = rng.normal(size=(2, cin, h, h))
    w = rng.normal(size=(cout, cin, k, k))
    y = ops.conv2d(Tensor4(x), Tensor4(w), stride=s, padding=p)
    gy = rng.normal(size=y.shape)
    op = (h + 2 * p - k) - (y.shape[2] - 1) * s  # lands in [0, s)
    back = ops.conv_transpose2d(Tensor4(gy), Tensor4(w), stride=s, padding=p,
                                output_padding=op)
    assert back.shape == x.shape
    lhs = float((y.data * gy).sum())
    rhs = float((x * back.data).sum())
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("case", range(8))
def test_grad_input_adjoint_with_dilation(case):
    rng = np.random.default_rng(2000 + case)
    from shelfnet import kernels
    s, p, d = int(rng.integers(1, 3)), int(rng.integers(0, 3)), int(rng.integers(2, 4))
    kh = int(rng.integers(2, 4))
    h = int(rng.integers(max(d * (kh - 1) + 1 - 2 * p, 1), 14))
    x = rng.normal(size=(1, 2, h, h))
    w = rng.normal(size=(3, 2, kh, kh))
    y = kernels.conv2d_forward(x, w, s, p, d)
    gy = rng.normal(size=y.shape)
    gx = kernels.conv2d_grad_input(gy, w, s, p, d, h, h)
    lhs = float((y * gy).sum())
    rhs = float((x * gx).sum())
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("stride,padding,output_padding", [(1, 0, 0), (2, 1, 1), (2, 0, 0), (3, 1, 2)])
def test_conv_transpose_grad(stride, padding, output_padding):
    rng = np.random.default_rng(stride * 7 + padding * 3 + output_padding)
    x = t4(rng.normal(size=(2, 3, 5, 5)))
    w = t4(rng.normal(size=(3, 2, 3, 3)))
    gradcheck(lambda: ops.conv_transpose2d(x, w, stride, padding, output_padding), [x, w])


# --- batch norm ----------------------------------------------------------------

def bn_oracle(x, gamma, beta, eps):
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def _bn_params(c, gamma=1.0, beta=0.0):
    g = t4(np.full((1, c, 1, 1), gamma))
    b = t4(np.full((1, c, 1, 1), beta))
    return g, b


def test_batch_norm_constant_input_zeros():
    g, b = _bn_params(3)
    state = ops.BatchNormState(3)
    x = t4(np.full((2, 3, 4, 4), 7.0))
    y = ops.batch_norm(x, g, b, state, training=True)
    np.testing.assert_allclose(y.data, 0.0, atol=1e-12)


def test_batch_norm_eval_identity():
    g, b = _bn_params(2)
    state = ops.BatchNormState(2)  # mean 0, var 1
    rng = np.random.default_rng(0)
    x = t4(rng.normal(size=(1, 2, 3, 3)))
    y = ops.batch_norm(x, g, b, state, training=False, eps=1e-12)
    np.testing.assert_allclose(y.data, x.data, rtol=1e-9)


def test_batch_norm_matches_stats_oracle():
    rng = np.random.default_rng(42)
    x = t4(rng.normal(size=(4, 3, 6, 6)))
    g = t4(rng.normal(size=(1, 3, 1, 1)))
    b = t4(rng.normal(size=(1, 3, 1, 1)))
    state = ops.BatchNormState(3)
    y = ops.batch_norm(x, g, b, state, training=True, eps=1e-5)
    np.testing.assert_allclose(y.data, bn_oracle(x.data, g.data, b.data, 1e-5), atol=1e-10)


def test_batch_norm_running_stats_update():
    x = t4(np.random.default_rng(1).normal(size=(2, 2, 4, 4)))
    state = ops.BatchNormState(2)
    g, b = _bn_params(2)
    ops.batch_norm(x, g, b, state, training=True, momentum=0.1)
    mu = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    np.testing.assert_allclose(state.mean, 0.1 * mu, atol=1e-12)
    np.testing.assert_allclose(state.var, 0.9 * 1.0 + 0.1 * var, atol=1e-12)


def test_batch_norm_grad_train_and_eval():
    rng = np.random.default_rng(5)
    x = t4(rng.normal(size=(3, 2, 4, 4)))
    g = t4(rng.normal(size=(1, 2, 1, 1)))
    b = t4(rng.normal(size=(1, 2, 1, 1)))

    def fresh_state():
        s = ops.BatchNormState(2)
        s.mean = np.array([0.3, -0.2])
        s.var = np.array([1.5, 0.7])
        return s

    gradcheck(lambda: ops.batch_norm(x, g, b, fresh_state(), training=True), [x, g, b])
    gradcheck(lambda: ops.batch_norm(x, g, b, fresh_state(), training=False), [x, g, b])


def test_batch_norm_errors():
    g, b = _bn_params(3)
    with pytest.raises(ShapeError):
        ops.batch_norm(t4(np.zeros((1, 2, 2, 2))), g, b, ops.BatchNormState(2), training=True)
    with pytest.raises(ConfigError):
        ops.batch_norm(t4(np.zeros((1, 3, 2, 2))), g, b, ops.BatchNormState(3),
                       training=True, eps=0.0)


# --- activations ----------------------------------------------------------------

def test_relu_values():
    y = ops.relu(t4(np.array([[-1.0, 2.0]]).reshape(1, 1, 1, 2)))
    np.testing.assert_allclose(y.data.reshape(-1), [0.0, 2.0])


def test_sigmoid_at_zero():
    assert ops.sigmoid(t4(np.zeros((1, 1, 1, 1)))).item() == pytest.approx(0.5)


def test_relu_all_negative_zero_grad():
    x = t4(-np.ones((1, 1, 2, 2)))
    y = ops.relu(x)
    backward(ops.weighted_sum(y, np.ones(y.shape)))
    np.testing.assert_allclose(y.data, 0.0)
    np.testing.assert_allclose(x.grad, 0.0)


def test_activation_grads():
    rng = np.random.default_rng(9)
    x = t4(rng.normal(size=(2, 2, 3, 3)) + 0.1)  # keep away from relu kink
    gradcheck(lambda: ops.relu(x), [x])
    x2 = t4(rng.normal(size=(2, 2, 3, 3)))
    gradcheck(lambda: ops.sigmoid(x2), [x2])


# --- dropout ----------------------------------------------------------------

def test_dropout_p0_and_eval_identity():
    rng = np.random.default_rng(2)
    x = t4(rng.normal(size=(1, 2, 3, 3)))
    np.testing.assert_array_equal(ops.dropout(x, 0.0, True, 1).data, x.data)
    np.testing.assert_array_equal(ops.dropout(x, 0.7, False, 1).data, x.data)


def test_dropout_statistics():
    x = t4(np.ones((1, 1, 128, 128)))
    y = ops.dropout(x, 0.5, True, rng_seed=123)
    zero_frac = float((y.data == 0).mean())
    assert 0.45 <= zero_frac <= 0.55
    assert 0.95 <= float(y.data.mean()) <= 1.05


def test_dropout_deterministic_and_p_error():
    x = t4(np.ones((1, 1, 8, 8)))
    a = ops.dropout(x, 0.3, True, rng_seed=5)
    b = ops.dropout(x, 0.3, True, rng_seed=5)
    np.testing.assert_array_equal(a.data, b.data)
    with pytest.raises(ConfigError):
        ops.dropout(x, 1.0, True, 0)


def test_dropout_grad_matches_mask():
    rng = np.random.default_rng(8)
    x = t4(rng.normal(size=(1, 2, 4, 4)))
    gradcheck(lambda: ops.dropout(x, 0.4, True, rng_seed=77), [x])


# --- upsample / pooling ----------------------------------------------------------

def test_upsample_factor1_and_constant():
    rng = np.random.default_rng(4)
    x = t4(rng.normal(size=(1, 2, 3, 3)))
    np.testing.assert_array_equal(ops.bilinear_upsample(x, 1).data, x.data)
    c = t4(np.full((1, 1, 2, 2), 3.5))
    y = ops.bilinear_upsample(c, 3)
    assert y.shape == (1, 1, 6, 6)
    np.testing.assert_allclose(y.data, 3.5, atol=1e-12)


def test_upsample_matches_interpolation_oracle():
    rng = np.random.default_rng(14)
    x = t4(rng.normal(size=(1, 1, 3, 3)))
    y = ops.bilinear_upsample(x, 2)
    np.testing.assert_allclose(y.data, bilinear_loops(x.data, 2), atol=1e-12)


def test_upsample_grad():
    x = t4(np.random.default_rng(6).normal(size=(1, 2, 3, 4)))
    gradcheck(lambda: ops.bilinear_upsample(x, 2), [x])


def test_global_avg_pool_values_and_grad():
    x = t4(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    assert ops.global_avg_pool(x).item() == pytest.approx(2.5)
    c = t4(np.full((2, 3, 4, 4), -1.25))
    np.testing.assert_allclose(ops.global_avg_pool(c).data, -1.25)
    rng = np.random.default_rng(21)
    xr = t4(rng.normal(size=(2, 2, 3, 3)))
    np.testing.assert_allclose(
        ops.global_avg_pool(xr).data,
        xr.data.sum(axis=(2, 3), keepdims=True) / 9.0, atol=1e-12)
    gradcheck(lambda: ops.global_avg_pool(xr), [xr])


def test_max_pool_values_and_grad():
    x = t4(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    y = ops.max_pool2d(x, kernel=2, stride=2, padding=0)
    np.testing.assert_allclose(y.data.reshape(-1), [5, 7, 13, 15])
    rng = np.random.default_rng(33)
    xr = t4(rng.normal(size=(2, 2, 6, 6)))
    gradcheck(lambda: ops.max_pool2d(xr, 3, 2, 1), [xr])


# --- add / scale ------------------------------------------------------------------

def test_add_identities_and_grad():
    rng = np.random.default_rng(17)
    x = t4(rng.normal(size=(1, 2, 3, 3)))
    z = t4(np.zeros((1, 2, 3, 3)))
    np.testing.assert_array_equal(ops.add(x, z).data, x.data)
    neg = t4(-x.data)
    np.testing.assert_allclose(ops.add(x, neg).data, 0.0, atol=1e-15)
    y = t4(rng.normal(size=(1, 2, 3, 3)))
    gradcheck(lambda: ops.add(x, y), [x, y])
    with pytest.raises(ShapeError):
        ops.add(x, t4(np.zeros((1, 2, 3, 4))))


def test_scale_channels_grad():
    rng = np.random.default_rng(19)
    x = t4(rng.normal(size=(2, 3, 4, 4)))
    g = t4(rng.normal(size=(2, 3, 1, 1)))
    y = ops.scale_channels(x, g)
    np.testing.assert_allclose(y.data, x.data * g.data)
    gradcheck(lambda: ops.scale_channels(x, g), [x, g])


# --- softmax cross entropy -----------------------------------------------------------

def sce_oracle(logits, labels, ignore):
    n, k, h, w = logits.shape
    total, count = 0.0, 0
    for b in range(n):
        for i in range(h):
            for j in range(w):
                lab = labels[b, i, j]
                if lab == ignore:
                    continue
                z = logits[b, :, i, j]
                p = np.exp(z - z.max())
                p /= p.sum()
                total += -np.log(p[lab])
                count += 1
    return total / count


def test_sce_uniform_logits():
    k = 21
    logits = t4(np.zeros((1, k, 2, 2)))
    labels = np.random.default_rng(0).integers(0, k, size=(1, 2, 2))
    loss, _ = ops.softmax_cross_entropy(logits, labels)
    assert loss.item() == pytest.approx(np.log(k), abs=1e-12)


def test_sce_saturated_margin():
    logits = np.zeros((1, 3, 1, 1))
    logits[0, 1] = 1000.0
    labels = np.full((1, 1, 1), 1)
    loss, _ = ops.softmax_cross_entropy(t4(logits), labels)
    assert loss.item() < 1e-6


def test_sce_matches_oracle_and_grad():
    rng = np.random.default_rng(77)
    logits = t4(rng.normal(size=(2, 5, 3, 3)))
    labels = rng.integers(0, 5, size=(2, 3, 3))
    labels[0, 0, 0] = 255  # ignored
    loss, pix = ops.softmax_cross_entropy(logits, labels, ignore_index=255)
    assert loss.item() == pytest.approx(sce_oracle(logits.data, labels, 255), abs=1e-10)
    assert pix[0, 0, 0] == 0.0

    backward(loss)
    analytic = logits.grad.copy()
    logits.zero_grad()

    def scalar():
        with autograd.no_grad():
            l2, _ = ops.softmax_cross_entropy(logits, labels, ignore_index=255)
            return l2.item()

    (num,) = numeric_grad(scalar, [logits.data])
    np.testing.assert_allclose(analytic, num, rtol=1e-4, atol=1e-8)


def test_sce_probabilities_sum_to_one():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(2, 7, 4, 4)) * 20
    probs = ops.softmax_probs(logits)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_sce_label_out_of_range():
    logits = t4(np.zeros((1, 3, 2, 2)))
    labels = np.full((1, 2, 2), 3)
    with pytest.raises(InputError):
        ops.softmax_cross_entropy(logits, labels)


def test_sce_keep_mask_restricts_mean():
    rng = np.random.default_rng(31)
    logits = t4(rng.normal(size=(1, 4, 2, 2)))
    labels = rng.integers(0, 4, size=(1, 2, 2))
    keep = np.zeros((1, 2, 2), dtype=bool)
    keep[0, 0, 0] = True
    loss, pix = ops.softmax_cross_entropy(logits, labels, keep_mask=keep)
    assert loss.item() == pytest.approx(pix[0, 0, 0])
