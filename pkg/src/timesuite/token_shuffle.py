"""Token Shuffle: merge ``m`` adjacent tokens along channels, then project.

With :func:`efficient_init` the merged projector reproduces "mean-pool the
window, then apply the base projector" exactly, so swapping it into a
pretrained model leaves the model's outputs unchanged at step 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import ShapeError, linear, linear_vjp


@dataclass(frozen=True)
class ShuffleConfig:
    m: int
    c_q: int
    c_l: int

    def __post_init__(self):
        if self.m < 1 or self.c_q < 1 or self.c_l < 1:
            raise ValueError(f"invalid shuffle config {self}")


@dataclass(frozen=True)
class ShuffleParams:
    weight: np.ndarray  # (c_l, m * c_q)
    bias: np.ndarray  # (c_l,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} do not conform")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("shuffle parameters must be finite")


def _check_divisible(length: int, m: int) -> None:
    if m < 1 or length % m:
        raise ShapeError(f"token count {length} is not divisible by merge count m={m}")


def merge_adjacent(v_q: np.ndarray, m: int) -> np.ndarray:
    """``(L, c_q) -> (L/m, m*c_q)``; row i is rows ``i*m .. i*m+m-1`` laid end to end."""
    v_q = np.asarray(v_q, dtype=np.float64)
    length, c_q = v_q.shape
    _check_divisible(length, m)
    return v_q.reshape(length // m, m * c_q)


def merge_adjacent_vjp(grad_out: np.ndarray, m: int) -> np.ndarray:
    rows, width = grad_out.shape
    return grad_out.reshape(rows * m, width // m)


def project(v_m: np.ndarray, params: ShuffleParams) -> np.ndarray:
    return linear(v_m, params.weight, params.bias)


def project_vjp(grad_out: np.ndarray, v_m: np.ndarray, params: ShuffleParams):
    """Return ``(d_v_m, d_weight, d_bias)``."""
    return linear_vjp(grad_out, v_m, params.weight)


def token_shuffle(v_q: np.ndarray, params: ShuffleParams, m: int) -> np.ndarray:
    return project(merge_adjacent(v_q, m), params)


def efficient_init(w0: np.ndarray, b0: np.ndarray, m: int) -> ShuffleParams:
    """Tile the base projector ``m`` times along its input axis, each copy scaled by ``1/m``.

    The bias is copied unchanged: a shared bias commutes with averaging.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return ShuffleParams(w0.copy(), b0.copy())
    return ShuffleParams(np.tile(w0, (1, m)) / m, b0.copy())


def random_init(config: ShuffleConfig, seed: int) -> ShuffleParams:
    """Fan-in uniform projector, the "w/o init" ablation baseline."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.m * config.c_q)
    weight = rng.uniform(-bound, bound, size=(config.c_l, config.m * config.c_q))
    bias = rng.uniform(-bound, bound, size=config.c_l)
    return ShuffleParams(weight, bias)


def mean_pool_rows(v: np.ndarray, m: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    length, c = v.shape
    _check_divisible(length, m)
    return v.reshape(length // m, m, c).mean(axis=1)


def mean_pool_compress(v_q: np.ndarray, m: int, w0: np.ndarray, b0: np.ndarray) -> np.ndarray:
    """Pooling baseline: average each window of ``m`` rows, then apply the base projector."""
    return linear(mean_pool_rows(v_q, m), w0, b0)
