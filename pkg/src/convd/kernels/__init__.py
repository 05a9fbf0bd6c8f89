"""Convolution backend selection.

The compiled Cython core is used when it was built; otherwise the NumPy
fallback takes over transparently. CONVD_KERNEL_BACKEND=python forces the
fallback (useful for the backend-parity tests and the benchmark).
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("CONVD_KERNEL_BACKEND", "").lower() not in ("python", "fallback"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def conv2d_batch(planes: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    return _impl.conv2d_batch(planes, kernels)


def conv2d_batch_backward(planes, kernels, grad_out):
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    return _impl.conv2d_batch_backward(planes, kernels, grad_out)
