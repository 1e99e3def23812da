import math

import numpy as np
import pytest

from timesuite import oracles
from timesuite.checks import GRAD_CONFIG, anchor_property, randomized_tape, tape_grad_error
from timesuite.tape import (
    TapeConfig,
    TapeParams,
    boundary_margin,
    fuse,
    param_layout,
    tape_forward,
    tape_init,
    tape_vjp,
)
from timesuite.tensor_core import ShapeError

SMALL = TapeConfig(merge_len=2, clip_num=4, input_dim=5, mid_dim=4, output_dim=3, sample_rate=2)


def naive_tape_forward(v_q, params):
    """Straight-line re-statement of the adapter using list-based convolutions."""
    cfg = params.config
    t = params.tensors

    def block(x, name):
        for conv, spec in cfg.conv_specs(name):
            x = np.array(oracles.conv1d_naive(
                x.tolist(), t[f"{name}.{conv}.weight"].tolist(), t[f"{name}.{conv}.bias"].tolist(),
                spec.stride, spec.padding, spec.groups))
        mu = x.mean(axis=0)
        var = ((x - mu) ** 2).mean(axis=0)
        x = (x - mu) / np.sqrt(var + 1e-5) * t[f"{name}.norm.weight"][:, None] + t[f"{name}.norm.bias"][:, None]
        return np.vectorize(lambda z: 0.5 * z * (1 + math.erf(z / math.sqrt(2))))(x)

    h = (np.array(oracles.matmul_naive(v_q.tolist(), t["linear_input.weight"].tolist(), t["linear_input.bias"].tolist()))).T
    m, s = cfg.merge_len, cfg.sample_rate
    h1 = np.stack([h[:, i * m:(i + 1) * m].mean(axis=1) for i in range(h.shape[1] // m)], axis=1)
    h2 = block(h1, "down1")
    h3 = block(block(h2, "down2"), "fc")
    h2 = block(np.repeat(h3, s, axis=1) + h2, "conv2")
    h1 = block(np.repeat(h2, s, axis=1) + h1, "conv1")
    return np.array(oracles.matmul_naive(h1.T.tolist(), t["linear_output.weight"].tolist(), t["linear_output.bias"].tolist()))


def test_init_zeroes_output_layer():
    for seed in (0, 1, 99):
        p = tape_init(SMALL, seed)
        assert not p["linear_output.weight"].any() and not p["linear_output.bias"].any()


def test_init_deterministic_and_seed_sensitive():
    a, b, c = tape_init(SMALL, 3), tape_init(SMALL, 3), tape_init(SMALL, 4)
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    assert not np.array_equal(a["down1.dw.weight"], c["down1.dw.weight"])


def test_init_respects_fan_in_bound():
    p = tape_init(TapeConfig(input_dim=12, mid_dim=16, output_dim=8), 0, zero_output=False)
    for name, shape in param_layout(p.config):
        if "norm" in name:
            continue
        layer = name.rsplit(".", 1)[0]
        fan_in = int(np.prod(p[f"{layer}.weight"].shape[1:]))
        assert np.abs(p[name]).max() <= 1 / math.sqrt(fan_in)


def test_forward_matches_naive_oracle(rng):
    params = randomized_tape(SMALL, 2)
    v_q = rng.normal(size=(16, SMALL.input_dim))
    np.testing.assert_allclose(tape_forward(v_q, params), naive_tape_forward(v_q, params), rtol=0, atol=1e-12)


def test_fresh_adapter_output_is_exactly_zero(rng):
    out = tape_forward(rng.normal(size=(32, 5)), tape_init(SMALL, 0))
    assert out.shape == (16, 3)
    assert np.array_equal(out, np.zeros((16, 3)))


def test_default_shape_1536_tokens(rng):
    cfg = TapeConfig()
    out = tape_forward(rng.normal(size=(1536, cfg.input_dim)), tape_init(cfg, 0))
    assert out.shape == (384, cfg.output_dim)


@pytest.mark.parametrize("cfg", [SMALL, TapeConfig(merge_len=4, clip_num=16, input_dim=3, mid_dim=2, output_dim=2)])
def test_shape_contract_sweep(cfg):
    params = tape_init(cfg, 0, zero_output=False)
    q = cfg.length_quantum
    for length in range(q, 1537, q):
        if length > 200 and length % (8 * q):
            continue
        out = tape_forward(np.ones((length, cfg.input_dim)), params)
        assert out.shape == (length // cfg.merge_len, cfg.output_dim)


def test_rejects_bad_lengths_and_configs():
    with pytest.raises(ShapeError):
        tape_forward(np.ones((12, 5)), tape_init(SMALL, 0))
    with pytest.raises(ShapeError):
        tape_forward(np.ones((16, 4)), tape_init(SMALL, 0))
    for kwargs in ({"merge_len": 3}, {"merge_len": 0}, {"clip_num": 5}, {"sample_rate": 0}, {"mid_dim": 0}):
        with pytest.raises(ValueError):
            TapeConfig(**kwargs)


def test_params_layout_is_enforced():
    p = tape_init(SMALL, 0)
    with pytest.raises(ShapeError):
        p.with_tensors({"fc.conv.weight": np.zeros((1, 1, 1))})
    with pytest.raises(KeyError):
        TapeParams(SMALL, dict(reversed(list(p.tensors.items()))))


def test_composite_gradient():
    assert tape_grad_error(seed=0) < 1e-5


def test_frozen_masks_parameter_gradients(rng):
    params = randomized_tape(GRAD_CONFIG, 1)
    v_q = rng.normal(size=(16, GRAD_CONFIG.input_dim))
    g = rng.normal(size=(8, GRAD_CONFIG.output_dim))
    d_live, grads_live = tape_vjp(g, v_q, params)
    params.frozen = True
    d_frozen, grads_frozen = tape_vjp(g, v_q, params)
    assert np.array_equal(d_live, d_frozen)
    assert any(v.any() for v in grads_live.values())
    assert not any(v.any() for v in grads_frozen.values())


def test_fuse():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(fuse(a, np.zeros((2, 3))), a)
    np.testing.assert_array_equal(fuse(np.zeros((2, 3)), a), a)
    np.testing.assert_array_equal(fuse(a, a), 2 * a)
    with pytest.raises(ShapeError):
        fuse(a, np.zeros((3, 2)))


def test_boundary_margin_default_config():
    # contamination per level: down1 2, down2 3, fc 11, up 22, conv2 24, up 48, conv1 50
    assert boundary_margin(TapeConfig(), 1536) == (50, 50)


def test_anchor_property_small_config():
    cfg = TapeConfig(merge_len=2, clip_num=4, input_dim=4, mid_dim=5, output_dim=3, sample_rate=2)
    interior, boundary = anchor_property(cfg, 256, seed=0)
    assert interior <= 1e-10
    assert boundary > 1e-6


def test_margin_is_sufficient_but_not_loose(rng):
    # the row just inside each margin must already differ for generic params
    cfg = TapeConfig(merge_len=4, clip_num=16, input_dim=6, mid_dim=5, output_dim=4)
    params = randomized_tape(cfg, 5)
    row = rng.normal(size=6)
    out = tape_forward(np.tile(row, (512, 1)), params)
    left, right = boundary_margin(cfg, 512)
    centre = out[out.shape[0] // 2]
    assert np.abs(out[left - 1] - centre).max() > 1e-12
    assert np.abs(out[out.shape[0] - right] - centre).max() > 1e-12


def test_forward_deterministic(rng):
    params = randomized_tape(SMALL, 7)
    v = rng.normal(size=(32, 5))
    assert np.array_equal(tape_forward(v, params), tape_forward(v.copy(), params))
