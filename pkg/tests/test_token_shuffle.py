import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timesuite import tensor_core as tc
from timesuite import token_shuffle as ts
from timesuite.tensor_core import ShapeError


def pooled_then_projected(v, m, w0, b0):
    """Oracle: explicit per-window mean with a Python loop, then the base projector."""
    rows = []
    for i in range(v.shape[0] // m):
        rows.append(sum(v[i * m + j] for j in range(m)) / m)
    return np.array(rows) @ w0.T + b0


def test_merge_adjacent_example():
    v = np.array([[1.0, 2], [3, 4], [5, 6], [7, 8]])
    np.testing.assert_array_equal(ts.merge_adjacent(v, 2), [[1, 2, 3, 4], [5, 6, 7, 8]])


def test_merge_adjacent_identity_for_m1(rng):
    v = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(ts.merge_adjacent(v, 1), v)


def test_merge_adjacent_bookkeeping(rng):
    v = rng.normal(size=(12, 3))
    merged = ts.merge_adjacent(v, 4)
    assert merged.shape == (3, 12)
    for i in range(3):
        expected = [v[4 * i + j, c] for j in range(4) for c in range(3)]
        assert merged[i].tolist() == expected


def test_merge_adjacent_rejects_indivisible():
    with pytest.raises(ShapeError):
        ts.merge_adjacent(np.ones((7, 2)), 2)


def test_efficient_init_hand_example():
    params = ts.efficient_init(np.eye(2), np.zeros(2), 2)
    out = ts.project(ts.merge_adjacent(np.array([[2.0, 4.0], [4.0, 8.0]]), 2), params)
    np.testing.assert_allclose(out, [[3.0, 6.0]], atol=1e-15)


def test_efficient_init_m1_is_base(rng):
    w0, b0 = rng.normal(size=(3, 4)), rng.normal(size=3)
    params = ts.efficient_init(w0, b0, 1)
    np.testing.assert_array_equal(params.weight, w0)
    np.testing.assert_array_equal(params.bias, b0)


def test_efficient_init_matches_mean_pool_oracle(rng):
    w0, b0 = rng.normal(size=(3, 4)), rng.normal(size=3)
    v = rng.normal(size=(9, 4))
    out = ts.token_shuffle(v, ts.efficient_init(w0, b0, 3), 3)
    np.testing.assert_allclose(out, pooled_then_projected(v, 3, w0, b0), rtol=0, atol=1e-12)


def test_mean_pool_compress_cases(rng):
    w0, b0 = rng.normal(size=(5, 3)), rng.normal(size=5)
    row = rng.normal(size=3)
    const = np.tile(row, (8, 1))
    np.testing.assert_allclose(ts.mean_pool_compress(const, 4, w0, b0), np.tile(w0 @ row + b0, (2, 1)), atol=1e-12)
    v = rng.normal(size=(8, 3))
    np.testing.assert_allclose(ts.mean_pool_compress(v, 8, w0, b0), [w0 @ v.mean(axis=0) + b0], atol=1e-12)
    with pytest.raises(ShapeError):
        ts.mean_pool_compress(v, 3, w0, b0)


@settings(max_examples=60, deadline=None)
@given(
    m=st.sampled_from([1, 2, 4, 8]),
    groups=st.integers(1, 12),
    c_q=st.integers(1, 16),
    c_l=st.integers(1, 16),
    seed=st.integers(0, 2**32 - 1),
)
def test_shuffle_at_init_equals_pooling(m, groups, c_q, c_l, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(m * groups, c_q))
    w0, b0 = rng.normal(size=(c_l, c_q)), rng.normal(size=c_l)
    out = ts.token_shuffle(v, ts.efficient_init(w0, b0, m), m)
    assert out.shape == (groups, c_l)
    assert np.abs(out - ts.mean_pool_compress(v, m, w0, b0)).max() <= 1e-12


def test_temporal_locality(rng):
    m, params = 4, ts.random_init(ts.ShuffleConfig(4, 3, 5), 0)
    v = rng.normal(size=(16, 3))
    base = ts.token_shuffle(v, params, m)
    for block in range(4):
        bumped = v.copy()
        outside = [r for r in range(16) if r // m != block]
        bumped[outside] += rng.normal(size=(len(outside), 3))
        out = ts.token_shuffle(bumped, params, m)
        assert np.array_equal(out[block], base[block])


def test_project_vjp(rng):
    params = ts.random_init(ts.ShuffleConfig(2, 3, 4), 1)
    v_m = rng.normal(size=(5, 6))
    err = tc.finite_diff_check(
        lambda v, w, b: ts.project(v, ts.ShuffleParams(w, b)),
        lambda g, v, w, b: ts.project_vjp(g, v, ts.ShuffleParams(w, b)),
        [v_m, params.weight, params.bias],
        1e-6,
        rng.normal(size=(5, 4)),
    )
    assert err < 1e-6


def test_merge_vjp_is_inverse_reshape(rng):
    g = rng.normal(size=(3, 8))
    np.testing.assert_array_equal(ts.merge_adjacent(ts.merge_adjacent_vjp(g, 4), 4), g)


def test_random_init_deterministic():
    cfg = ts.ShuffleConfig(2, 3, 4)
    a, b = ts.random_init(cfg, 5), ts.random_init(cfg, 5)
    assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)


def test_params_validation():
    with pytest.raises(ShapeError):
        ts.ShuffleParams(np.ones((2, 3)), np.ones(3))
    with pytest.raises(ValueError):
        ts.ShuffleParams(np.full((1, 1), np.nan), np.ones(1))
    with pytest.raises(ValueError):
        ts.ShuffleConfig(0, 1, 1)
