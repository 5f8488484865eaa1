"""Backend dispatch for the hot convolution/pooling kernels.

Two interchangeable implementations exist:

* ``numpy``: vectorized reference kernels, im2col plus a single BLAS matmul.
* ``numba``: JIT-compiled explicit loops (requires the optional numba dep).

The active backend is chosen once at import from the ``TRIPATH_KERNELS``
environment variable: ``numpy``, ``numba``, or ``auto`` (the default, which
prefers the numpy path and is what ``benchmarks/bench_kernels.py`` measured
fastest on single-core BLAS-enabled hosts; set ``TRIPATH_KERNELS=numba`` to
opt into the JIT kernels). Tests may swap backends programmatically with
`use_backend`.
"""

import os
from contextlib import contextmanager

from . import reference

_IMPLS = {"numpy": reference}

try:  # numba is optional; the reference path is always available
    from . import jit

    _IMPLS["numba"] = jit
except ImportError:
    jit = None

KERNELS_ENV_VAR = "TRIPATH_KERNELS"


def _resolve(name):
    if name == "auto":
        return reference
    if name not in _IMPLS:
        if name == "numba":
            raise RuntimeError("TRIPATH_KERNELS=numba but numba is not installed")
        raise RuntimeError(f"unknown kernel backend {name!r} (expected auto, numpy, or numba)")
    return _IMPLS[name]


_active = _resolve(os.environ.get(KERNELS_ENV_VAR, "auto").strip().lower())


def active_backend():
    """Name of the backend currently serving kernel calls."""
    return _active.BACKEND_NAME


def available_backends():
    return tuple(sorted(_IMPLS))


def set_backend(name):
    """Switch backends in-process. Prefer `use_backend` in tests."""
    global _active
    _active = _resolve(name)


@contextmanager
def use_backend(name):
    """Temporarily route kernel calls to the named backend."""
    global _active
    previous = _active
    _active = _resolve(name)
    try:
        yield
    finally:
        _active = previous


def conv3d_forward(xp, w, stride):
    return _active.conv3d_forward(xp, w, stride)


def conv3d_backward_input(gy, w, stride, padded_shape):
    return _active.conv3d_backward_input(gy, w, stride, padded_shape)


def conv3d_backward_weight(gy, xp, kernel_shape, stride):
    return _active.conv3d_backward_weight(gy, xp, kernel_shape, stride)


def conv3d_backward(gy, xp, w, stride, padded_shape, need_input=True, need_weight=True):
    return _active.conv3d_backward(gy, xp, w, stride, padded_shape, need_input, need_weight)


def maxpool3d_forward(xp, window, stride):
    return _active.maxpool3d_forward(xp, window, stride)


def maxpool3d_backward(gy, argmax, padded_shape):
    return _active.maxpool3d_backward(gy, argmax, padded_shape)
