"""Temporal Adaptive Position Encoding (TAPE).

A three-level 1-D U-Net of depthwise-separable convolutions.  The zero
padding of the convolutions is the only source of absolute position: rows
far from either sequence end see an anchor-free neighbourhood, rows near the
ends see the zeros.  The final linear layer is zero-initialised so a fresh
adapter adds exactly nothing to the compressed tokens.

Parameters live in a flat ordered mapping whose key order (see
:func:`param_layout`) is also the serialization order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tensor_core as tc
from .tensor_core import Conv1DSpec, ShapeError

LN_EPS = 1e-5

# Block names in forward order; "fc" is the long-window full convolution.
BLOCKS = ("down1", "down2", "fc", "conv2", "conv1")


@dataclass(frozen=True)
class TapeConfig:
    merge_len: int = 4
    clip_num: int = 16
    input_dim: int = 768
    mid_dim: int = 256
    output_dim: int = 4096
    sample_rate: int = 2

    def __post_init__(self):
        if self.merge_len < 2 or self.merge_len % 2:
            raise ValueError(f"merge_len must be even and >= 2, got {self.merge_len}")
        if self.clip_num < 0 or self.clip_num % 2:
            raise ValueError(f"clip_num must be even, got {self.clip_num}")
        if self.sample_rate < 1:
            raise ValueError("sample_rate must be >= 1")
        if min(self.input_dim, self.mid_dim, self.output_dim) < 1:
            raise ValueError("dimensions must be >= 1")

    @property
    def length_quantum(self) -> int:
        """Input token counts must be multiples of this."""
        return self.merge_len * self.sample_rate**2

    def check_length(self, length: int) -> None:
        if length < 1 or length % self.length_quantum:
            raise ShapeError(
                f"token count {length} must be a positive multiple of "
                f"merge_len * sample_rate**2 = {self.length_quantum}"
            )

    def conv_specs(self, block: str) -> list[tuple[str, Conv1DSpec]]:
        d, m, s = self.mid_dim, self.merge_len, self.sample_rate
        if block in ("down1", "down2"):
            dw = Conv1DSpec(d, d, 2 * m + 1, stride=s, padding=m, groups=d)
        elif block in ("conv2", "conv1"):
            dw = Conv1DSpec(d, d, m + 1, stride=1, padding=m // 2, groups=d)
        elif block == "fc":
            return [("conv", Conv1DSpec(d, d, self.clip_num + 1, stride=1, padding=self.clip_num // 2))]
        else:
            raise KeyError(block)
        return [("dw", dw), ("pw", Conv1DSpec(d, d, 1))]


def param_layout(config: TapeConfig) -> list[tuple[str, tuple[int, ...]]]:
    layout: list[tuple[str, tuple[int, ...]]] = [
        ("linear_input.weight", (config.mid_dim, config.input_dim)),
        ("linear_input.bias", (config.mid_dim,)),
    ]
    for block in BLOCKS:
        for name, spec in config.conv_specs(block):
            layout.append((f"{block}.{name}.weight", spec.weight_shape))
            layout.append((f"{block}.{name}.bias", (spec.out_channels,)))
        layout.append((f"{block}.norm.weight", (config.mid_dim,)))
        layout.append((f"{block}.norm.bias", (config.mid_dim,)))
    layout.append(("linear_output.weight", (config.output_dim, config.mid_dim)))
    layout.append(("linear_output.bias", (config.output_dim,)))
    return layout


@dataclass
class TapeParams:
    """Snapshot of adapter weights.

    ``frozen`` mirrors the first-epoch schedule: a frozen adapter still
    propagates input gradients but reports zero parameter gradients.
    """

    config: TapeConfig
    tensors: dict[str, np.ndarray]
    frozen: bool = False

    def __post_init__(self):
        layout = param_layout(self.config)
        if [name for name, _ in layout] != list(self.tensors):
            raise KeyError("tensor names/order do not match the TAPE layout")
        for name, shape in layout:
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def with_tensors(self, updates: dict[str, np.ndarray]) -> "TapeParams":
        tensors = dict(self.tensors)
        tensors.update({k: np.asarray(v, dtype=np.float64) for k, v in updates.items()})
        return replace(self, tensors=tensors)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.reshape(-1) for t in self.tensors.values()])


def tape_init(config: TapeConfig, seed: int, zero_output: bool = True) -> TapeParams:
    """Seeded initialisation.

    Weights and biases of every linear/conv layer are drawn from
    ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` in layout order from one
    generator; norm scales start at 1 and shifts at 0.  ``linear_output`` is
    all zeros unless ``zero_output=False`` (used by tests that need a
    non-trivial adapter).
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    fan_in: dict[str, int] = {}
    for name, shape in param_layout(config):
        layer = name.rsplit(".", 1)[0]
        if name.endswith(".norm.weight"):
            tensors[name] = np.ones(shape)
            continue
        if name.endswith(".norm.bias"):
            tensors[name] = np.zeros(shape)
            continue
        if name.endswith(".weight"):
            fan_in[layer] = int(np.prod(shape[1:]))
        if layer == "linear_output" and zero_output:
            tensors[name] = np.zeros(shape)
            continue
        bound = 1.0 / math.sqrt(fan_in[layer])
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return TapeParams(config, tensors)


def _block_forward(x: np.ndarray, params: TapeParams, block: str):
    cfg = params.config
    caches = []
    h = x
    for name, spec in cfg.conv_specs(block):
        caches.append(h)
        h = tc.conv1d(h, spec, params[f"{block}.{name}.weight"], params[f"{block}.{name}.bias"])
    pre_norm = h
    pre_act = tc.channel_layer_norm(h, params[f"{block}.norm.weight"], params[f"{block}.norm.bias"], LN_EPS)
    return tc.gelu(pre_act), (caches, pre_norm, pre_act)


def _block_vjp(grad: np.ndarray, params: TapeParams, block: str, cache, grads: dict) -> np.ndarray:
    caches, pre_norm, pre_act = cache
    g = tc.gelu_vjp(grad, pre_act)
    g, grads[f"{block}.norm.weight"], grads[f"{block}.norm.bias"] = tc.channel_layer_norm_vjp(
        g, pre_norm, params[f"{block}.norm.weight"], LN_EPS
    )
    specs = params.config.conv_specs(block)
    for (name, spec), inp in zip(reversed(specs), reversed(caches)):
        g, grads[f"{block}.{name}.weight"], grads[f"{block}.{name}.bias"] = tc.conv1d_vjp(
            g, inp, spec, params[f"{block}.{name}.weight"]
        )
    return g


def _residual_up(low: np.ndarray, skip: np.ndarray, factor: int) -> np.ndarray:
    up = tc.upsample_nearest(low, factor)
    if up.shape != skip.shape:
        raise ShapeError(f"upsampled shape {up.shape} does not match skip connection {skip.shape}")
    return up + skip


def _forward(v_q: np.ndarray, params: TapeParams):
    cfg = params.config
    v_q = tc.as_matrix(v_q, cols=cfg.input_dim)
    cfg.check_length(v_q.shape[0])
    c: dict[str, object] = {}
    t = tc.linear(v_q, params["linear_input.weight"], params["linear_input.bias"]).T
    t1 = tc.avg_pool1d(t, cfg.merge_len)
    t2, c["down1"] = _block_forward(t1, params, "down1")
    t3, c["down2"] = _block_forward(t2, params, "down2")
    t3, c["fc"] = _block_forward(t3, params, "fc")
    t2 = _residual_up(t3, t2, cfg.sample_rate)
    t2, c["conv2"] = _block_forward(t2, params, "conv2")
    t1 = _residual_up(t2, t1, cfg.sample_rate)
    t1, c["conv1"] = _block_forward(t1, params, "conv1")
    c["features"] = t1.T
    out = tc.linear(t1.T, params["linear_output.weight"], params["linear_output.bias"])
    return out, c


def tape_forward(v_q: np.ndarray, params: TapeParams) -> np.ndarray:
    """``(L, input_dim) -> (L / merge_len, output_dim)`` temporal features."""
    return _forward(v_q, params)[0]


def tape_vjp(grad_out: np.ndarray, v_q: np.ndarray, params: TapeParams):
    """Reverse pass through :func:`tape_forward`.

    Returns ``(d_v_q, param_grads)`` where ``param_grads`` is keyed like
    ``params.tensors`` (all zeros when ``params.frozen``).
    """
    cfg = params.config
    v_q = tc.as_matrix(v_q, cols=cfg.input_dim)
    _, c = _forward(v_q, params)
    grads: dict[str, np.ndarray] = {}
    d_feat, grads["linear_output.weight"], grads["linear_output.bias"] = tc.linear_vjp(
        grad_out, c["features"], params["linear_output.weight"]
    )
    d1 = _block_vjp(d_feat.T, params, "conv1", c["conv1"], grads)
    d_skip1 = d1
    d2 = _block_vjp(tc.upsample_nearest_vjp(d1, cfg.sample_rate), params, "conv2", c["conv2"], grads)
    d_skip2 = d2
    d3 = _block_vjp(tc.upsample_nearest_vjp(d2, cfg.sample_rate), params, "fc", c["fc"], grads)
    d3 = _block_vjp(d3, params, "down2", c["down2"], grads)
    d2 = d_skip2 + d3
    d2 = _block_vjp(d2, params, "down1", c["down1"], grads)
    d1 = d_skip1 + d2
    d_t = tc.avg_pool1d_vjp(d1, cfg.merge_len)
    d_vq, grads["linear_input.weight"], grads["linear_input.bias"] = tc.linear_vjp(
        d_t.T, v_q, params["linear_input.weight"]
    )
    ordered = {name: grads[name] for name in params.tensors}
    if params.frozen:
        ordered = {name: np.zeros_like(g) for name, g in ordered.items()}
    return d_vq, ordered


def fuse(v_l: np.ndarray, v_t: np.ndarray) -> np.ndarray:
    """Residual injection of temporal features into the compressed tokens."""
    v_l = np.asarray(v_l, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if v_l.shape != v_t.shape:
        raise ShapeError(f"cannot fuse {v_l.shape} with {v_t.shape}")
    return v_l + v_t


def _conv_margin(left: int, right: int, length: int, spec: Conv1DSpec) -> tuple[int, int, int]:
    out_len = spec.output_length(length)
    k, p, s = spec.kernel_size, spec.padding, spec.stride
    # output o reads padded-input columns o*s-p .. o*s-p+k-1 (unpadded coordinates)
    new_left = min(out_len, -(-(left + p) // s)) if left + p > 0 else 0
    last_clean = (length - right + p - k) // s
    new_right = min(out_len, max(0, out_len - 1 - last_clean))
    return new_left, new_right, out_len


def boundary_margin(config: TapeConfig, length: int) -> tuple[int, int]:
    """Rows at each end of the output that can see a zero-padding anchor.

    For an input whose rows are all equal, output rows in
    ``[left, n - right)`` are identical to the anchor-free value; rows outside
    may differ.  Computed by propagating the contaminated-row count at each
    end through every layer's kernel/stride/padding.
    """
    config.check_length(length)
    n1 = length // config.merge_len

    def run_block(block, lft, rgt, n):
        for _, spec in config.conv_specs(block):
            lft, rgt, n = _conv_margin(lft, rgt, n, spec)
        return lft, rgt, n

    l2, r2, n2 = run_block("down1", 0, 0, n1)
    l3, r3, n3 = run_block("down2", l2, r2, n2)
    l3, r3, n3 = run_block("fc", l3, r3, n3)
    s = config.sample_rate
    l2, r2 = max(l3 * s, l2), max(r3 * s, r2)
    l2, r2, n2 = run_block("conv2", l2, r2, n2)
    l1, r1 = l2 * s, r2 * s
    l1, r1, n1 = run_block("conv1", l1, r1, n1)
    return min(l1, n1), min(r1, n1)
