"""Kernel backends against the nested-loop oracle and against each other."""

import numpy as np
import pytest

from shelfnet import kernels
from .conftest import conv2d_loops

GEOMETRIES = [
    # (n, cin, h, w, cout, kh, kw, stride, padding, dilation)
    (2, 3, 5, 5, 4, 3, 3, 2, 1, 1),
    (1, 2, 7, 6, 3, 3, 3, 1, 1, 1),
    (1, 1, 8, 8, 2, 1, 1, 1, 0, 1),
    (2, 2, 9, 9, 2, 3, 3, 1, 2, 2),
    (1, 3, 10, 11, 5, 5, 3, 3, 2, 1),
    (1, 2, 6, 6, 2, 2, 2, 2, 0, 1),
    (2, 4, 5, 7, 3, 3, 3, 2, 0, 1),
]


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_forward_matches_loop_oracle(kernel_backend, geom):
    n, cin, h, w, cout, kh, kw, s, p, d = geom
    rng = np.random.default_rng(hash(geom) % 2**32)
    x = rng.normal(size=(n, cin, h, w))
    wt = rng.normal(size=(cout, cin, kh, kw))
    got = kernels.conv2d_forward(x, wt, s, p, d)
    want = conv2d_loops(x, wt, s, p, d)
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_grad_kernels_are_adjoints(kernel_backend, geom):
    # <conv(x, w), gy> == <x, grad_input(gy, w)> == <w, grad_weight(x, gy)>
    n, cin, h, w, cout, kh, kw, s, p, d = geom
    rng = np.random.default_rng(hash(geom) % 2**31)
    x = rng.normal(size=(n, cin, h, w))
    wt = rng.normal(size=(cout, cin, kh, kw))
    y = kernels.conv2d_forward(x, wt, s, p, d)
    gy = rng.normal(size=y.shape)
    lhs = float((y * gy).sum())
    gx = kernels.conv2d_grad_input(gy, wt, s, p, d, h, w)
    gw = kernels.conv2d_grad_weight(x, gy, s, p, d, kh, kw)
    assert abs(lhs - float((x * gx).sum())) < 1e-10 * max(1.0, abs(lhs))
    assert abs(lhs - float((wt * gw).sum())) < 1e-10 * max(1.0, abs(lhs))


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled backend missing")
@pytest.mark.parametrize("geom", GEOMETRIES)
def test_backends_agree(geom):
    n, cin, h, w, cout, kh, kw, s, p, d = geom
    rng = np.random.default_rng(12345)
    x = rng.normal(size=(n, cin, h, w))
    wt = rng.normal(size=(cout, cin, kh, kw))
    gy_shape = kernels.numpy_ref.conv2d_forward(x, wt, s, p, d).shape
    gy = rng.normal(size=gy_shape)
    results = {}
    for b in kernels.available_backends():
        impl = kernels.get_backend(b)
        results[b] = (
            impl.conv2d_forward(x, wt, s, p, d),
            impl.conv2d_grad_input(gy, wt, s, p, d, h, w),
            impl.conv2d_grad_weight(x, gy, s, p, d, kh, kw),
        )
    a, b = results["numpy"], results["cython"]
    for got, want in zip(b, a):
        np.testing.assert_allclose(got, want, atol=1e-11)


def test_float32_supported(kernel_backend):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    y = kernels.conv2d_forward(x, w, 1, 1, 1)
    assert y.dtype == np.float32
    np.testing.assert_allclose(
        y, conv2d_loops(x.astype(np.float64), w.astype(np.float64), 1, 1, 1), atol=1e-4)
