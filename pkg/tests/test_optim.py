import numpy as np
import pytest

from shelfnet.autograd import Parameter, Tensor4
from shelfnet.errors import ShapeError
from shelfnet.optim import SGD, sgd_step


def make_param(val):
    return Parameter("w", Tensor4(np.full((1, 1, 1, 1), val)))


def test_plain_gradient_step():
    p = make_param(2.0)
    p.tensor.grad = np.full((1, 1, 1, 1), 0.5)
    opt = SGD([p], momentum=0.0, weight_decay=0.0)
    opt.step(lr=0.1)
    assert p.data.reshape(-1)[0] == pytest.approx(2.0 - 0.1 * 0.5)


def test_lr_zero_leaves_params_unchanged():
    p = make_param(1.5)
    p.tensor.grad = np.full((1, 1, 1, 1), 123.0)
    opt = SGD([p], momentum=0.9, weight_decay=1e-4)
    opt.step(lr=0.0)
    assert p.data.reshape(-1)[0] == 1.5


def test_momentum_matches_hand_recurrence():
    # two steps on f(w) = 0.5 * a * w^2 (grad = a*w), hand-iterated
    a, lr, mu, wd = 3.0, 0.05, 0.9, 0.01
    w = 1.0
    v = 0.0
    expected = []
    for _ in range(2):
        g = a * w
        v = mu * v + (g + wd * w)
        w = w - lr * v
        expected.append(w)

    p = make_param(1.0)
    opt = SGD([p], momentum=mu, weight_decay=wd)
    for ref in expected:
        p.tensor.grad = a * p.data.copy()
        opt.step(lr)
        assert p.data.reshape(-1)[0] == pytest.approx(ref, abs=0)
        p.zero_grad()


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        sgd_step(np.zeros((2, 2)), np.zeros((3,)), np.zeros((2, 2)), 0.1, 0.9, 0.0)


def test_missing_grad_is_skipped():
    p = make_param(1.0)
    opt = SGD([p])
    opt.step(0.1)  # no grad set: parameter untouched
    assert p.data.reshape(-1)[0] == 1.0
