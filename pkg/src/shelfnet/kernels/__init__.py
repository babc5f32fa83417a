"""Convolution kernel backends.

Two interchangeable implementations of the three hot kernels
(``conv2d_forward``, ``conv2d_grad_input``, ``conv2d_grad_weight``):

* ``cython``  -- compiled direct-loop kernels (``_convops``), used by default
  when the extension built;
* ``numpy``   -- im2col / offset-scatter fallback, always available.

Selection happens at import time and can be forced with the
``SHELFNET_KERNELS`` environment variable (``cython`` or ``numpy``) or at
runtime with :func:`use_backend`.  ``shelfnet bench --kernels`` compares the
two on a grid of geometries.
"""

import os

import numpy as np

from ..errors import ConfigError
from . import numpy_ref

try:
    from . import _convops  # type: ignore[attr-defined]
except ImportError:  # extension not built; numpy fallback only
    _convops = None

_BACKENDS = {"numpy": numpy_ref}
if _convops is not None:
    _BACKENDS["cython"] = _convops

_impl = numpy_ref
_name = "numpy"


def use_backend(name: str):
    """Switch the active kernel backend ('numpy' or 'cython')."""
    global _impl, _name
    if name not in _BACKENDS:
        raise ConfigError(f"kernel backend {name!r} not available; have {sorted(_BACKENDS)}")
    _impl = _BACKENDS[name]
    _name = name


def backend_name() -> str:
    return _name


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name: str):
    if name not in _BACKENDS:
        raise ConfigError(f"kernel backend {name!r} not available; have {sorted(_BACKENDS)}")
    return _BACKENDS[name]


_env = os.environ.get("SHELFNET_KERNELS", "").strip().lower()
if _env in ("", "auto"):
    if "cython" in _BACKENDS:
        use_backend("cython")
elif _env in _BACKENDS:
    use_backend(_env)
else:
    raise ConfigError(
        f"SHELFNET_KERNELS={_env!r} not recognized; available: {sorted(_BACKENDS)} or 'auto'"
    )


def _c(a):
    return a if a.flags["C_CONTIGUOUS"] else np.ascontiguousarray(a)


def conv2d_forward(x, w, stride, padding, dilation):
    return _impl.conv2d_forward(_c(x), _c(w), stride, padding, dilation)


def conv2d_grad_input(gy, w, stride, padding, dilation, in_h, in_w):
    return _impl.conv2d_grad_input(_c(gy), _c(w), stride, padding, dilation, in_h, in_w)


def conv2d_grad_weight(x, gy, stride, padding, dilation, kh, kw):
    return _impl.conv2d_grad_weight(_c(x), _c(gy), stride, padding, dilation, kh, kw)


def conv_out_size(h, k, stride, padding, dilation):
    return numpy_ref.out_size(h, k, stride, padding, dilation)
