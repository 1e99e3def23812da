"""Dense float64 primitives with hand-written vector-Jacobian products.

Layout conventions:

* token matrices are ``(rows, channels)``;
* sequence operators (conv, pooling, upsampling, channel layer norm) take
  ``(channels, length)``, the same layout a 1-D convolution works on.

Every ``*_vjp`` function takes the upstream gradient first and returns the
gradients of the forward inputs in forward-argument order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce ``data`` into a finite 2-D float64 array, optionally checking its shape."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite values")
    return arr


@dataclass(frozen=True)
class Conv1DSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.groups, self.stride) < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError("in_channels and out_channels must be divisible by groups")

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_size)

    def output_length(self, length: int) -> int:
        out = (length + 2 * self.padding - self.kernel_size) // self.stride + 1
        if out < 1:
            raise ShapeError(f"conv output length {out} for input length {length}")
        return out


def _conv_windows(x: np.ndarray, spec: Conv1DSpec) -> np.ndarray:
    """Padded input viewed as (groups, in_per_group, out_len, kernel)."""
    c, length = x.shape
    out_len = spec.output_length(length)
    xp = np.pad(x, ((0, 0), (spec.padding, spec.padding)))
    win = sliding_window_view(xp, spec.kernel_size, axis=1)[:, :: spec.stride][:, :out_len]
    return win.reshape(spec.groups, c // spec.groups, out_len, spec.kernel_size)


def _check_conv(x: np.ndarray, spec: Conv1DSpec, weight: np.ndarray, bias) -> None:
    if x.ndim != 2 or x.shape[0] != spec.in_channels:
        raise ShapeError(f"conv input shape {x.shape} does not match in_channels={spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv weight shape {weight.shape}, expected {spec.weight_shape}")
    if bias is not None and np.shape(bias) != (spec.out_channels,):
        raise ShapeError(f"conv bias shape {np.shape(bias)}, expected ({spec.out_channels},)")


def conv1d(x: np.ndarray, spec: Conv1DSpec, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Grouped 1-D cross-correlation with zero padding.

    ``x`` is ``(in_channels, length)``, ``weight`` is
    ``(out_channels, in_channels // groups, kernel_size)``.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    _check_conv(x, spec, weight, bias)
    win = _conv_windows(x, spec)
    g = spec.groups
    w = weight.reshape(g, spec.out_channels // g, spec.in_channels // g, spec.kernel_size)
    out = np.einsum("goik,gilk->gol", w, win).reshape(spec.out_channels, -1)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None]
    return out


def conv1d_vjp(grad_out: np.ndarray, x: np.ndarray, spec: Conv1DSpec, weight: np.ndarray):
    """Return ``(d_input, d_weight, d_bias)`` for :func:`conv1d`."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    g = spec.groups
    cin_g, cout_g, k = spec.in_channels // g, spec.out_channels // g, spec.kernel_size
    win = _conv_windows(x, spec)
    out_len = win.shape[2]
    if grad_out.shape != (spec.out_channels, out_len):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(spec.out_channels, out_len)}")
    go = grad_out.reshape(g, cout_g, out_len)
    w = weight.reshape(g, cout_g, cin_g, k)

    d_weight = np.einsum("gol,gilk->goik", go, win).reshape(spec.weight_shape)
    d_bias = grad_out.sum(axis=1)

    d_win = np.einsum("goik,gol->gilk", w, go).reshape(spec.in_channels, out_len, k)
    length = x.shape[1]
    dxp = np.zeros((spec.in_channels, length + 2 * spec.padding))
    span = spec.stride * (out_len - 1) + 1
    for j in range(k):
        dxp[:, j : j + span : spec.stride] += d_win[:, :, j]
    d_input = dxp[:, spec.padding : spec.padding + length]
    return d_input, d_weight, d_bias


def avg_pool1d(x: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping mean pooling along the length axis (stride = window)."""
    x = np.asarray(x, dtype=np.float64)
    c, length = x.shape
    if window < 1 or length % window:
        raise ShapeError(f"length {length} is not divisible by pooling window {window}")
    windows = x.reshape(c, length // window, window)
    # shifting by the first element keeps constant windows exact
    first = windows[:, :, :1]
    return (first + (windows - first).mean(axis=2, keepdims=True))[:, :, 0]


def avg_pool1d_vjp(grad_out: np.ndarray, window: int) -> np.ndarray:
    return np.repeat(grad_out, window, axis=1) / window


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    """Repeat each column ``factor`` times."""
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    return np.repeat(np.asarray(x, dtype=np.float64), factor, axis=1)


def upsample_nearest_vjp(grad_out: np.ndarray, factor: int) -> np.ndarray:
    c, length = grad_out.shape
    return grad_out.reshape(c, length // factor, factor).sum(axis=2)


def channel_layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Layer norm across channels at every time position of a ``(channels, length)`` input."""
    x = np.asarray(x, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if np.shape(gamma) != (x.shape[0],) or np.shape(beta) != (x.shape[0],):
        raise ShapeError("gamma/beta must have one entry per channel")
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=0, keepdims=True) + eps)
    return xc * inv_std * gamma[:, None] + beta[:, None]


def channel_layer_norm_vjp(grad_out: np.ndarray, x: np.ndarray, gamma: np.ndarray, eps: float = 1e-5):
    """Return ``(d_input, d_gamma, d_beta)``."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=0, keepdims=True) + eps)
    xhat = xc * inv_std
    d_gamma = (grad_out * xhat).sum(axis=1)
    d_beta = grad_out.sum(axis=1)
    g = grad_out * gamma[:, None]
    d_input = inv_std * (g - g.mean(axis=0, keepdims=True) - xhat * (g * xhat).mean(axis=0, keepdims=True))
    return d_input, d_gamma, d_beta


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_vjp(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return grad_out * (cdf + x * pdf)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Row-wise affine map: ``x @ weight.T + bias`` with ``weight`` of shape (out_dim, in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        if np.shape(bias) != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {np.shape(bias)}, expected ({weight.shape[0]},)")
        out = out + np.asarray(bias, dtype=np.float64)
    return out


def linear_vjp(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Return ``(d_input, d_weight, d_bias)``."""
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def finite_diff_check(
    forward: Callable[..., np.ndarray],
    backward: Callable[..., Sequence[np.ndarray]],
    inputs: Sequence[np.ndarray],
    h: float = 1e-6,
    cotangent: np.ndarray | None = None,
) -> float:
    """Compare analytic gradients against central differences.

    The checked scalar is ``sum(cotangent * forward(*inputs))``; with the
    default all-ones cotangent that is the plain sum of outputs.
    ``backward(cotangent, *inputs)`` must return one gradient per input.

    Returns ``max |analytic - numeric| / max(1, |numeric|)`` over every
    element of every input.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    out = forward(*inputs)
    if cotangent is None:
        cotangent = np.ones_like(out)
    analytic = backward(cotangent, *inputs)
    if len(analytic) != len(inputs):
        raise ValueError("backward must return one gradient per input")

    def scalar(args) -> float:
        value = float(np.sum(cotangent * forward(*args)))
        if not np.isfinite(value):
            raise FloatingPointError("non-finite value in finite-difference probe")
        return value

    worst = 0.0
    for arg, grad in zip(inputs, analytic):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != arg.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match input {arg.shape}")
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite analytic gradient")
        flat = arg.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = scalar(inputs)
            flat[i] = orig - h
            f_minus = scalar(inputs)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(grad.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
