import numpy as np
import pytest

from shelfnet import autograd, kernels


@pytest.fixture(autouse=True)
def clean_tape():
    autograd.clear_tape()
    yield
    autograd.clear_tape()


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request):
    prev = kernels.backend_name()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


# --- independent oracles ----------------------------------------------------

def conv2d_loops(x, w, stride, padding, dilation):
    """Direct nested-loop convolution; deliberately naive."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    y = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for b in range(n):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride - padding + u * dilation
                                s = j * stride - padding + v * dilation
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b, c, r, s] * w[o, c, u, v]
                    y[b, o, i, j] = acc
    return y


def bilinear_loops(x, factor):
    """Closed-form bilinear interpolation, align-corners=false, per pixel."""
    n, c, h, w = x.shape
    oh, ow = h * factor, w * factor
    y = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for i in range(oh):
        src_i = min(max((i + 0.5) / factor - 0.5, 0.0), h - 1.0)
        i0 = min(int(np.floor(src_i)), h - 2) if h > 1 else 0
        fi = src_i - i0 if h > 1 else 0.0
        for j in range(ow):
            src_j = min(max((j + 0.5) / factor - 0.5, 0.0), w - 1.0)
            j0 = min(int(np.floor(src_j)), w - 2) if w > 1 else 0
            fj = src_j - j0 if w > 1 else 0.0
            j1 = min(j0 + 1, w - 1)
            i1 = min(i0 + 1, h - 1)
            y[:, :, i, j] = ((1 - fi) * (1 - fj) * x[:, :, i0, j0]
                             + (1 - fi) * fj * x[:, :, i0, j1]
                             + fi * (1 - fj) * x[:, :, i1, j0]
                             + fi * fj * x[:, :, i1, j1])
    return y


def numeric_grad(f, arrays, eps=1e-6):
    """Central finite differences of a scalar function of several arrays."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads
