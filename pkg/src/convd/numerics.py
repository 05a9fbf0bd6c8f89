"""Dense numerical primitives: convolution, softmax, batch norm, dropout
masks, Adam, and a central-difference gradient oracle.

Everything is 64-bit float and referentially transparent: randomness and
optimizer state enter only through explicit arguments, and mutation happens
only through returned updated states.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateBatchError, DimensionError, NumericError
from .kernels import conv2d_batch
from .rng import RngStream

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv2d_valid(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of one 2D image with one kernel, stride 1.

    out[i, j] = sum_{a, b} image[i + a, j + b] * kernel[a, b]
    """
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if image.ndim != 2 or kernel.ndim != 2:
        raise DimensionError("conv2d_valid expects 2D image and kernel")
    if kernel.shape[0] > image.shape[0] or kernel.shape[1] > image.shape[1]:
        raise DimensionError(
            f"kernel {kernel.shape} larger than image {image.shape}"
        )
    return conv2d_batch(image[None], kernel[None])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over a 1D vector (max-subtracted)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise DimensionError("softmax expects a non-empty 1D vector")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax input must be finite")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


@dataclass(frozen=True)
class BatchNormState:
    """Scale/shift plus running statistics for one normalized feature."""

    gamma: float = 1.0
    beta: float = 0.0
    running_mean: float = 0.0
    running_var: float = 1.0
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM


def batchnorm_apply(x: np.ndarray, state: BatchNormState, mode: str):
    """Normalize a batch of scalar values for one feature.

    Train mode uses the batch mean and (biased) variance and folds them into
    the running statistics with the configured momentum; eval mode uses the
    running statistics and leaves the state untouched. Returns (y, new_state).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("batchnorm_apply expects a 1D batch of values")
    if mode == "train":
        if x.size < 2:
            raise DegenerateBatchError("train-mode batch norm needs batch size >= 2")
        mean = x.mean()
        var = x.var()
        y = state.gamma * (x - mean) / np.sqrt(var + state.eps) + state.beta
        new_state = replace(
            state,
            running_mean=(1 - state.momentum) * state.running_mean + state.momentum * mean,
            running_var=(1 - state.momentum) * state.running_var + state.momentum * var,
        )
        return y, new_state
    if mode == "eval":
        y = (
            state.gamma
            * (x - state.running_mean)
            / np.sqrt(state.running_var + state.eps)
            + state.beta
        )
        return y, state
    raise ValueError(f"unknown batch norm mode {mode!r}")


def dropout_mask(rng: RngStream, p: float, n: int) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).

    p == 0 returns all ones without consuming the stream, so disabling one
    dropout site leaves the other streams' draws untouched.
    """
    if not 0.0 <= p < 1.0:
        raise DimensionError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(n, dtype=np.float64)
    keep = rng.uniform(n) >= p
    return keep.astype(np.float64) / (1.0 - p)


@dataclass
class AdamState:
    """First/second moments per named parameter plus the shared step count."""

    first_moment: dict
    second_moment: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: dict, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    return AdamState(
        first_moment={k: np.zeros_like(v) for k, v in params.items()},
        second_moment={k: np.zeros_like(v) for k, v in params.items()},
        step=0,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    new_params = {}
    m = {}
    v = {}
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m[name] = state.beta1 * state.first_moment[name] + (1 - state.beta1) * g
        v[name] = state.beta2 * state.second_moment[name] + (1 - state.beta2) * g * g
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)


def finite_diff_grad(loss_fn, params: dict, h: float = 1e-5) -> dict:
    """Central-difference gradient of loss_fn over every coordinate.

    loss_fn must be deterministic (dropout off, batch norm frozen or in eval
    mode). This is the oracle the analytic backward passes are checked
    against; it never shares code with them.
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    grads = {k: np.zeros_like(v) for k, v in work.items()}
    for name, arr in work.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(work)
            flat[i] = orig - h
            down = loss_fn(work)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while differencing {name}[{i}]")
            gflat[i] = (up - down) / (2.0 * h)
    return grads
