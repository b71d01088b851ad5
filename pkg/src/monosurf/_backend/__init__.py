"""Kernel backend selection.

Two interchangeable implementations of the convolution kernels exist: the
compiled ``_conv_core`` extension and the NumPy fallback.  One is picked at
import time; ``MONOSURF_KERNEL_BACKEND`` (``auto``/``cython``/``numpy``)
overrides the default.  ``auto`` prefers NumPy: on typical desktop CPUs the
BLAS-backed im2col path wins for this network's shapes (see
``benchmarks/bench_kernels.py`` to measure both on your machine).

The active kernels are exposed as module attributes; everything upstream
(autodiff, network, trainer) goes through them.
"""

import os

from . import numpy_kernels

try:
    from . import _conv_core
except ImportError:
    _conv_core = None

_BACKENDS = {"numpy": numpy_kernels}
if _conv_core is not None:
    _BACKENDS["cython"] = _conv_core


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        ) from None


def _select():
    choice = os.environ.get("MONOSURF_KERNEL_BACKEND", "auto").lower()
    if choice == "auto":
        return numpy_kernels
    return get_backend(choice)


_active = _select()

BACKEND_NAME = _active.NAME
conv2d_forward = _active.conv2d_forward
conv2d_grad_input = _active.conv2d_grad_input
conv2d_grad_kernel = _active.conv2d_grad_kernel
