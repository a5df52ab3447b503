"""Differentiable operators used by the networks.

Spatial operators take channels-first batches ``(B, C, H, W)``; ``conv2d``
and ``maxpool2d`` also accept a single unbatched ``(C, H, W)`` image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError, InputError, StateError
from .tensor import Function, Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.1


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# elementwise / structural ---------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Index(Function):
    def forward(self, x, index):
        self.shape, self.index = x.shape, index
        return np.array(x[index])

    def backward(self, grad):
        out = np.zeros(self.shape)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


def add(a: Any, b: Any) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def mul(a: Any, b: Any) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Sum.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def index(x: Tensor, idx: Any) -> Tensor:
    return Index.apply(x, index=idx)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    return Concat.apply(*tensors, axis=axis)


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis but the first."""
    return reshape(x, (x.shape[0], -1))


# activations -----------------------------------------------------------------

class LeakyReLU(Function):
    def forward(self, x, slope):
        self.slope = slope
        self.positive = x >= 0
        return np.where(self.positive, x, slope * x)

    def backward(self, grad):
        return (np.where(self.positive, grad, self.slope * grad),)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky slope must lie in (0, 1), got {slope}")
    return LeakyReLU.apply(x, slope=slope)


class GLU(Function):
    def forward(self, y, axis):
        half = y.shape[axis] // 2
        self.axis = axis
        self.a, b = np.split(y, [half], axis=axis)
        self.gate = sigmoid_array(b)
        return self.a * self.gate

    def backward(self, grad):
        d_a = grad * self.gate
        d_b = grad * self.a * self.gate * (1.0 - self.gate)
        return (np.concatenate([d_a, d_b], axis=self.axis),)


def gated_linear_unit(y: Tensor, axis: int = -1) -> Tensor:
    """Split ``y`` into halves ``[A, B]`` along ``axis`` and return ``A * sigmoid(B)``."""
    if y.shape[axis] % 2:
        raise DimensionError(f"GLU needs an even extent along axis {axis}, got {y.shape[axis]}")
    return GLU.apply(y, axis=axis)


# dense layers ----------------------------------------------------------------

class Linear(Function):
    def forward(self, x, w, b):
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, grad):
        return grad @ self.w.T, self.x.T @ grad, grad.sum(axis=0)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for ``x`` of shape ``(B, D)`` and weight ``(D, K)``."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(f"expected (B,D), (D,K), (K,); got {x.shape}, {weight.shape}, {bias.shape}")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError(f"cannot apply weight {weight.shape} and bias {bias.shape} to input {x.shape}")
    return Linear.apply(x, weight, bias)


# convolution and pooling -----------------------------------------------------

def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Rows are output positions (B, out_h, out_w); columns are (C, kh, kw)."""
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, x.shape[1] * kh * kw)


class Conv2d(Function):
    def forward(self, x, w, b=None, *, stride, padding):
        batch, _, height, width = x.shape
        c_out, _, kh, kw = w.shape
        out_h = _output_extent(height, kh, stride, padding)
        out_w = _output_extent(width, kw, stride, padding)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.cols = _im2col(xp, kh, kw, stride, out_h, out_w)
        self.w = w
        self.stride, self.padding = stride, padding
        self.x_shape, self.padded_shape = x.shape, xp.shape
        self.has_bias = b is not None
        out = self.cols @ w.reshape(c_out, -1).T
        if b is not None:
            out += b
        return np.ascontiguousarray(out.reshape(batch, out_h, out_w, c_out).transpose(0, 3, 1, 2))

    def backward(self, grad):
        s, p = self.stride, self.padding
        c_out, c_in, kh, kw = self.w.shape
        _, _, out_h, out_w = grad.shape
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, c_out)
        d_w = (g2.T @ self.cols).reshape(self.w.shape)
        d_b = grad.sum(axis=(0, 2, 3)) if self.has_bias else None
        if not self.inputs[0].requires_grad:
            return (None, d_w, d_b) if self.has_bias else (None, d_w)
        if s == 1:
            # full correlation of the output grad with the flipped kernels
            gp = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            hp, wp = self.padded_shape[2:]
            flipped = self.w[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(-1, c_in)
            d_xp = (_im2col(gp, kh, kw, 1, hp, wp) @ flipped).reshape(grad.shape[0], hp, wp, c_in).transpose(0, 3, 1, 2)
        else:
            d_cols = (g2 @ self.w.reshape(c_out, -1)).reshape(grad.shape[0], out_h, out_w, c_in, kh, kw)
            d_xp = np.zeros(self.padded_shape)
            for i in range(kh):
                for j in range(kw):
                    d_xp[:, :, i:i + s * out_h:s, j:j + s * out_w:s] += d_cols[..., i, j].transpose(0, 3, 1, 2)
        height, width = self.x_shape[2:]
        d_x = np.ascontiguousarray(d_xp[:, :, p:p + height, p:p + width])
        return (d_x, d_w, d_b) if self.has_bias else (d_x, d_w)


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding, summing over input channels.

    ``x`` is ``(B, C_in, H, W)`` or ``(C_in, H, W)``; ``kernels`` is
    ``(C_out, C_in, kH, kW)``.
    """
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernels, bias, stride, padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernels, got {x.shape} and {kernels.shape}")
    if kernels.shape[1] != x.shape[1]:
        raise DimensionError(f"kernels expect {kernels.shape[1]} input channels, input has {x.shape[1]}")
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} does not match {kernels.shape[0]} output channels")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride {stride} / padding {padding}")
    for size, k in zip(x.shape[2:], kernels.shape[2:]):
        if _output_extent(size, k, stride, padding) < 1:
            raise ConfigurationError(f"kernel {kernels.shape[2:]} does not fit input {x.shape[2:]} with padding {padding}")
    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return Conv2d.apply(*inputs, stride=stride, padding=padding)


class MaxPool2d(Function):
    def forward(self, x, size, stride):
        batch, channels, height, width = x.shape
        out_h = (height - size) // stride + 1
        out_w = (width - size) // stride + 1
        windows = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
        flat = windows.reshape(batch, channels, out_h, out_w, size * size)
        # argmax returns the first maximum in row-major window order
        arg = flat.argmax(axis=-1)
        self.x_shape = x.shape
        rows = np.arange(out_h)[:, None] * stride + arg // size
        cols = np.arange(out_w)[None, :] * stride + arg % size
        self.where = (
            np.arange(batch)[:, None, None, None],
            np.arange(channels)[None, :, None, None],
            rows,
            cols,
        )
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        d_x = np.zeros(self.x_shape)
        np.add.at(d_x, self.where, grad)
        return (d_x,)


def maxpool2d(x: Tensor, size: int = 2, stride: int | None = None) -> Tensor:
    """Max over ``size x size`` windows; ties resolve to the first cell in row-major order."""
    stride = size if stride is None else stride
    if x.ndim == 3:
        out = maxpool2d(reshape(x, (1,) + x.shape), size, stride)
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects a 3-D or 4-D input, got {x.shape}")
    if size < 1 or stride < 1:
        raise ConfigurationError(f"invalid pool size {size} / stride {stride}")
    if size > x.shape[2] or size > x.shape[3]:
        raise ConfigurationError(f"pool size {size} exceeds spatial extent {x.shape[2:]}")
    return MaxPool2d.apply(x, size=size, stride=stride)


# normalization ---------------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance of a batch-norm layer.

    Both stay ``None`` until the first training batch, which initialises
    them directly; later batches blend in with ``momentum`` as the weight on
    the old value. The running variance is the unbiased batch estimate.
    """

    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    momentum: float = BN_MOMENTUM

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        if self.mean is None:
            self.mean, self.var = mean.copy(), var.copy()
        else:
            self.mean = self.momentum * self.mean + (1.0 - self.momentum) * mean
            self.var = self.momentum * self.var + (1.0 - self.momentum) * var


class BatchNorm(Function):
    def forward(self, x, gamma, beta, *, mean, var, eps):
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        self.axes, self.bshape = axes, bshape
        self.batch_stats = mean is None
        if self.batch_stats:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.mean, self.var = mean, var
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean.reshape(bshape)) * self.inv_std.reshape(bshape)
        self.gamma = gamma
        return gamma.reshape(bshape) * self.xhat + beta.reshape(bshape)

    def backward(self, grad):
        axes, bshape = self.axes, self.bshape
        d_gamma = (grad * self.xhat).sum(axis=axes)
        d_beta = grad.sum(axis=axes)
        d_xhat = grad * self.gamma.reshape(bshape)
        inv_std = self.inv_std.reshape(bshape)
        if not self.batch_stats:
            return d_xhat * inv_std, d_gamma, d_beta
        count = grad.size / grad.shape[1]
        d_x = inv_std / count * (
            count * d_xhat
            - d_xhat.sum(axis=axes, keepdims=True)
            - self.xhat * (d_xhat * self.xhat).sum(axis=axes, keepdims=True)
        )
        return d_x, d_gamma, d_beta


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    training: bool,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalisation over every axis except axis 1.

    In training mode the batch statistics normalise ``x`` and are folded
    into ``running``; in eval mode ``running`` is used instead.
    """
    if x.ndim < 2:
        raise DimensionError(f"batchnorm expects (B, C, ...), got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"gamma/beta must have shape ({channels},)")
    if training:
        count = x.size // channels
        if count < 2:
            raise ConfigurationError("batchnorm in training mode needs at least 2 values per channel")
        out = BatchNorm.apply(x, gamma, beta, mean=None, var=None, eps=eps)
        fn_mean = x.data.mean(axis=(0,) + tuple(range(2, x.ndim)))
        fn_var = x.data.var(axis=(0,) + tuple(range(2, x.ndim))) * count / (count - 1)
        running.update(fn_mean, fn_var)
        return out
    if not running.initialized:
        raise StateError("batchnorm evaluated before any training step initialised its running statistics")
    return BatchNorm.apply(x, gamma, beta, mean=running.mean, var=running.var, eps=eps)


# loss ------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SoftmaxNLL(Function):
    def forward(self, logits, labels):
        z = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
        log_probs = z - log_norm
        self.probs = np.exp(log_probs)
        self.labels = labels
        return np.asarray(-(labels * log_probs).sum() / logits.shape[0])

    def backward(self, grad):
        batch = self.labels.shape[0]
        return grad * (self.probs - self.labels) / batch, None


def softmax_nll(logits: Tensor, labels: Any) -> Tensor:
    """Mean negative log-likelihood of one-hot ``labels`` under ``softmax(logits)``."""
    labels = as_tensor(labels)
    if logits.ndim != 2 or labels.shape != logits.shape:
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} must both be (B, K)")
    if logits.shape[1] < 2:
        raise DimensionError("need at least two classes")
    y = labels.data
    if not (np.isin(y, (0.0, 1.0)).all() and (y.sum(axis=1) == 1).all()):
        raise InputError("every label row must be one-hot (exactly one 1)")
    return SoftmaxNLL.apply(logits, labels)


def one_hot(labels: Sequence[int] | np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out
