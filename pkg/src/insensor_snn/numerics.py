"""Small numpy tensor engine: forward/backward kernels for the fixed layer set.

Everything here is a pure function over ``np.ndarray`` inputs.  Images are laid
out channel-first, either ``[C, H, W]`` or batched ``[N, C, H, W]``; convolution
weights are ``[C_out, C_in, kH, kW]``.  Floating inputs keep their dtype
(float64 stays float64), anything else is computed in float32.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from threadpoolctl import threadpool_limits

DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when array shapes do not compose."""


class ParameterError(ValueError):
    """Raised for out-of-domain scalar or vector parameters."""


class TrainingError(RuntimeError):
    """Raised when an optimisation step sees non-finite values."""


@dataclass
class Tensor:
    """A trainable array together with its accumulated gradient."""

    data: np.ndarray
    grad: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise DimensionError(
                f"grad shape {self.grad.shape} != data shape {self.data.shape}"
            )

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise DimensionError(f"{self.name}: grad {g.shape} vs data {self.data.shape}")
        g = g.astype(DTYPE, copy=False)
        self.grad = g.copy() if self.grad is None else self.grad + g


@dataclass(frozen=True)
class ShapeInfo:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        for name in ("height", "width", "channels"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"ShapeInfo.{name} must be >= 1")

    @property
    def volume(self) -> int:
        return self.height * self.width * self.channels


@contextlib.contextmanager
def deterministic():
    """Pin BLAS to one thread so reductions run in a fixed order."""
    with threadpool_limits(limits=1):
        yield


def _float(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype == np.float64:
        return x
    return x.astype(DTYPE, copy=False)


def _batched(x: np.ndarray, ndim: int = 4):
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise DimensionError(f"expected {ndim - 1}-d or {ndim}-d input, got shape {x.shape}")
    return x, False


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold ``[N, C, H, W]`` into ``[N, Ho, Wo, C*kh*kw]`` patches (a copy)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * kh * kw)


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    if w.ndim != 4:
        raise DimensionError(f"weights must be [C_out, C_in, kH, kW], got {w.shape}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if padding < 0:
        raise ParameterError("padding must be >= 0")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"input has {x.shape[1]} channels but weights expect {w.shape[1]}"
        )
    kh, kw = w.shape[2:]
    if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {x.shape[2:]} (+2*{padding})"
        )


def conv2d(x, w, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation without kernel flip.

    ``x``: ``[C_in, H, W]`` or ``[N, C_in, H, W]``; ``w``: ``[C_out, C_in, kH, kW]``.
    """
    x, single = _batched(_float(x))
    w = _float(w)
    _check_conv(x, w, stride, padding)
    c_out, _, kh, kw = w.shape
    cols = im2col(x, kh, kw, stride, padding)
    out = cols @ w.reshape(c_out, -1).T
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return out[0] if single else out


def conv2d_backward(grad_out, x, w, stride: int = 1, padding: int = 0):
    """Gradients of :func:`conv2d` with respect to ``x`` and ``w``."""
    x, single = _batched(_float(x))
    w = _float(w)
    g, _ = _batched(_float(grad_out))
    _check_conv(x, w, stride, padding)
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if g.shape != (n, c_out, ho, wo):
        raise DimensionError(f"grad_out shape {g.shape} != conv output {(n, c_out, ho, wo)}")

    cols = im2col(x, kh, kw, stride, padding).reshape(-1, c_in * kh * kw)
    g_mat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_w = (g_mat.T @ cols).reshape(w.shape)

    gcols = (g_mat @ w.reshape(c_out, -1)).reshape(n, ho, wo, c_in, kh, kw)
    gxp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    grad_x = gxp[:, :, padding:padding + h, padding:padding + wd]
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if single else grad_x), grad_w


def _pool_windows(x: np.ndarray, window: int, stride: int):
    if window < 1 or stride < 1:
        raise ParameterError("pool window and stride must be >= 1")
    if window > x.shape[2] or window > x.shape[3]:
        raise DimensionError(f"pool window {window} larger than input {x.shape[2:]}")
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.reshape(*win.shape[:4], window * window)


def maxpool2d(x, window: int, stride: Optional[int] = None) -> np.ndarray:
    """Window maximum over the two trailing spatial axes."""
    stride = window if stride is None else stride
    x, single = _batched(np.asarray(x))
    out = _pool_windows(x, window, stride).max(axis=-1)
    return out[0] if single else out


def maxpool2d_backward(grad_out, x, window: int, stride: Optional[int] = None) -> np.ndarray:
    """Route each output gradient to the first (row-major) maximum of its window."""
    stride = window if stride is None else stride
    x, single = _batched(_float(x))
    g, _ = _batched(_float(grad_out))
    win = _pool_windows(x, window, stride)
    if g.shape != win.shape[:4]:
        raise DimensionError(f"grad_out shape {g.shape} != pool output {win.shape[:4]}")
    arg = win.argmax(axis=-1)
    n, c, ho, wo = arg.shape
    rows = (np.arange(ho) * stride)[None, None, :, None] + arg // window
    cols = (np.arange(wo) * stride)[None, None, None, :] + arg % window
    grad_x = np.zeros_like(x)
    nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    np.add.at(grad_x, (nn[:, :, None, None], cc[:, :, None, None], rows, cols), g)
    return grad_x[0] if single else grad_x


def _channel_view(x: np.ndarray, c: int):
    """Broadcast shape for a per-channel vector against ``x`` ([N, C] or [N, C, H, W])."""
    if x.ndim < 2 or x.shape[1] != c:
        raise DimensionError(f"input shape {x.shape} does not have {c} channels on axis 1")
    return (1, c) + (1,) * (x.ndim - 2)


def bn_affine(gamma, beta, mu, sigma2, eps: float = 1e-5):
    """Inference-time batch norm as a per-channel affine map ``A*x + B``."""
    gamma, beta, mu, sigma2 = (np.asarray(v, dtype=np.float64) for v in (gamma, beta, mu, sigma2))
    if not (gamma.shape == beta.shape == mu.shape == sigma2.shape):
        raise DimensionError("batch norm parameter vectors differ in length")
    if np.any(sigma2 < 0):
        raise ParameterError("running variance must be non-negative")
    denom = sigma2 + eps
    if np.any(denom <= 0):
        raise ParameterError("sigma2 + eps must be positive")
    a = gamma / np.sqrt(denom)
    b = beta - a * mu
    return a, b


def batchnorm_infer(x, gamma, beta, mu, sigma2, eps: float = 1e-5) -> np.ndarray:
    x = _float(x)
    a, b = bn_affine(gamma, beta, mu, sigma2, eps)
    shape = _channel_view(x, a.shape[0])
    return (a.reshape(shape) * x + b.reshape(shape)).astype(x.dtype, copy=False)


@dataclass
class BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    axes: tuple = field(default=(0,))


def batchnorm_train(x, gamma, beta, running_mean, running_var,
                    momentum: float = 0.1, eps: float = 1e-5):
    """Normalise with batch statistics; update running stats in place.

    Running statistics track the biased batch variance.  Returns ``(y, cache)``.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    if not 0.0 <= momentum <= 1.0:
        raise ParameterError("momentum must lie in [0, 1]")
    x = _float(x)
    c = np.asarray(gamma).shape[0]
    shape = _channel_view(x, c)
    if np.asarray(beta).shape[0] != c:
        raise DimensionError("gamma and beta lengths differ")
    axes = (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = np.asarray(gamma, dtype=x.dtype).reshape(shape) * xhat + np.asarray(beta, dtype=x.dtype).reshape(shape)
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * var
    return y.astype(x.dtype, copy=False), BNCache(xhat, inv_std, np.asarray(gamma, dtype=x.dtype), axes)


def batchnorm_backward(grad_y, cache: BNCache):
    """Returns ``(grad_x, grad_gamma, grad_beta)`` for :func:`batchnorm_train`."""
    g = _float(grad_y)
    xhat, axes = cache.xhat, cache.axes
    shape = _channel_view(g, cache.gamma.shape[0])
    m = g.size // g.shape[1]
    grad_beta = g.sum(axis=axes)
    grad_gamma = (g * xhat).sum(axis=axes)
    gx = (cache.gamma * cache.inv_std).reshape(shape) / m * (
        m * g - grad_beta.reshape(shape) - xhat * grad_gamma.reshape(shape)
    )
    return gx.astype(g.dtype, copy=False), grad_gamma, grad_beta


def dense(x, w, b=None) -> np.ndarray:
    """Affine map; ``w`` is ``[out, in]``, ``x`` is ``[in]`` or ``[N, in]``."""
    x = _float(x)
    w = _float(w)
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"input width {x.shape[-1]} != weight fan-in {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        b = _float(b)
        if b.shape != (w.shape[0],):
            raise DimensionError(f"bias shape {b.shape} != ({w.shape[0]},)")
        y = y + b
    return y


def dense_backward(grad_y, x, w):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    g = _float(grad_y)
    x = _float(x)
    w = _float(w)
    g2 = g.reshape(-1, w.shape[0])
    x2 = x.reshape(-1, w.shape[1])
    return (g2 @ w).reshape(x.shape), g2.T @ x2, g2.sum(axis=0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or ``[N, K]`` logits
    with ``[N]`` labels.
    """
    z = _float(logits)
    single = z.ndim == 1
    z2 = z[None] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    k = z2.shape[1]
    if y.shape[0] != z2.shape[0]:
        raise DimensionError(f"{z2.shape[0]} logit rows but {y.shape[0]} labels")
    if np.any(y < 0) or np.any(y >= k):
        raise ParameterError(f"label out of range [0, {k})")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = float(np.mean(logsum - shifted[rows, y]))
    grad = softmax(z2)
    grad[rows, y] -= 1.0
    grad /= z2.shape[0]
    return loss, (grad[0] if single else grad)


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: Optional[np.ndarray],
             lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """One heavy-ball SGD update: ``v = m*v + g + wd*p``; ``p = p - lr*v``.

    Returns ``(new_param, new_velocity)``; inputs are left untouched.
    """
    if lr < 0:
        raise ParameterError("learning rate must be non-negative")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient passed to sgd_step")
    d = grad + weight_decay * param if weight_decay else grad
    v = d if velocity is None or momentum == 0 else momentum * velocity + d
    return (param - lr * v).astype(param.dtype, copy=False), v


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if max_norm <= 0:
        raise ParameterError("max_norm must be positive")
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= p.grad.dtype.type(scale)
    return total


class SGD:
    """Momentum SGD over a list of :class:`Tensor` parameters."""

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[int, np.ndarray] = {}

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            p.data, v = sgd_step(p.data, p.grad, self.velocity.get(i), self.lr,
                                 self.momentum, self.weight_decay)
            if self.momentum:
                self.velocity[i] = v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
