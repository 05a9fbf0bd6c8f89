"""Pure-NumPy convolution kernels (fallback when the compiled core is absent).

Valid cross-correlation, stride 1, no padding, one plane and one kernel per
batch element. The loops run over kernel taps only, so the cost is
r_w * r_h vectorized slice operations per call.
"""

import numpy as np


def conv2d_batch(planes: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """planes (B,H,W) correlated with per-element kernels (B,kh,kw) -> (B,oh,ow)."""
    b, h, w = planes.shape
    _, kh, kw = kernels.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((b, oh, ow), dtype=np.float64)
    for a in range(kh):
        for c in range(kw):
            out += planes[:, a : a + oh, c : c + ow] * kernels[:, a, c][:, None, None]
    return out


def conv2d_batch_backward(planes, kernels, grad_out):
    """Gradients of conv2d_batch w.r.t. planes and kernels."""
    b, h, w = planes.shape
    _, kh, kw = kernels.shape
    _, oh, ow = grad_out.shape
    grad_planes = np.zeros_like(planes)
    grad_kernels = np.zeros_like(kernels)
    for a in range(kh):
        for c in range(kw):
            grad_planes[:, a : a + oh, c : c + ow] += grad_out * kernels[:, a, c][:, None, None]
            grad_kernels[:, a, c] = np.sum(grad_out * planes[:, a : a + oh, c : c + ow], axis=(1, 2))
    return grad_planes, grad_kernels
