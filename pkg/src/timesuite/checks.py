"""Invariant suite behind the ``check`` command.

Each check returns a short detail string on success and raises
``AssertionError`` on failure.  Ablations replace or skip the checks that
depend on the removed component.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from . import grounding_eval as ge
from . import oracles
from . import tensor_core as tc
from . import token_shuffle as ts
from .tape import TapeConfig, boundary_margin, fuse, tape_forward, tape_init, tape_vjp
from .tgc_builder import PipelineConfig, dumps_jsonl, emit_tgc, load_sources, run_pipeline

ABLATIONS = ("no-tape", "pooling", "no-init")

GRAD_CONFIG = TapeConfig(merge_len=2, clip_num=2, input_dim=6, mid_dim=8, output_dim=5, sample_rate=2)


@dataclass
class CheckResult:
    name: str
    status: str  # PASS / FAIL / SKIP
    seconds: float
    detail: str = ""


def data_path(name: str):
    return resources.files("timesuite") / "data" / name


# -- tensor primitives --------------------------------------------------------


def primitive_grad_errors(seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errs = {}
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=5)
    errs["linear"] = tc.finite_diff_check(
        tc.linear, lambda g, x, w, b: tc.linear_vjp(g, x, w), [x, w, b], h, rng.normal(size=(4, 5))
    )
    z = rng.normal(size=(3, 7)) * 2
    errs["gelu"] = tc.finite_diff_check(tc.gelu, lambda g, z: (tc.gelu_vjp(g, z),), [z], h, rng.normal(size=z.shape))
    for name, spec in {
        "conv1d_full": tc.Conv1DSpec(4, 6, 3, stride=1, padding=1),
        "conv1d_depthwise_strided": tc.Conv1DSpec(4, 4, 5, stride=2, padding=2, groups=4),
        "conv1d_grouped": tc.Conv1DSpec(4, 6, 3, stride=3, padding=0, groups=2),
    }.items():
        xi = rng.normal(size=(spec.in_channels, 11))
        wi = rng.normal(size=spec.weight_shape)
        bi = rng.normal(size=spec.out_channels)
        out_len = spec.output_length(11)
        errs[name] = tc.finite_diff_check(
            lambda x, w, b, s=spec: tc.conv1d(x, s, w, b),
            lambda g, x, w, b, s=spec: tc.conv1d_vjp(g, x, s, w),
            [xi, wi, bi],
            h,
            rng.normal(size=(spec.out_channels, out_len)),
        )
    p = rng.normal(size=(3, 8))
    errs["avg_pool1d"] = tc.finite_diff_check(
        lambda p: tc.avg_pool1d(p, 4), lambda g, p: (tc.avg_pool1d_vjp(g, 4),), [p], h, rng.normal(size=(3, 2))
    )
    errs["upsample_nearest"] = tc.finite_diff_check(
        lambda p: tc.upsample_nearest(p, 3), lambda g, p: (tc.upsample_nearest_vjp(g, 3),), [p], h,
        rng.normal(size=(3, 24)),
    )
    y = rng.normal(size=(5, 6))
    gamma, beta = rng.normal(size=5), rng.normal(size=5)
    errs["channel_layer_norm"] = tc.finite_diff_check(
        lambda y, g_, b_: tc.channel_layer_norm(y, g_, b_, 1e-5),
        lambda g, y, g_, b_: tc.channel_layer_norm_vjp(g, y, g_, 1e-5),
        [y, gamma, beta],
        h,
        rng.normal(size=(5, 6)),
    )
    return errs


def randomized_tape(config: TapeConfig, seed: int):
    """Adapter with every tensor random, including norm affines and the output layer."""
    params = tape_init(config, seed, zero_output=False)
    rng = np.random.default_rng(seed + 10_000)
    updates = {}
    for name, t in params.tensors.items():
        if name.endswith("norm.weight"):
            updates[name] = 1.0 + 0.3 * rng.normal(size=t.shape)
        elif name.endswith("norm.bias"):
            updates[name] = 0.3 * rng.normal(size=t.shape)
    return params.with_tensors(updates)


def tape_grad_error(seed: int = 0, length: int = 32, h: float = 1e-5) -> float:
    params = randomized_tape(GRAD_CONFIG, seed)
    names = list(params.tensors)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(length, GRAD_CONFIG.input_dim))

    def forward(x, *ts_):
        return tape_forward(x, params.with_tensors(dict(zip(names, ts_))))

    def backward(g, x, *ts_):
        d_x, grads = tape_vjp(g, x, params.with_tensors(dict(zip(names, ts_))))
        return [d_x] + [grads[n] for n in names]

    cot = rng.normal(size=(length // GRAD_CONFIG.merge_len, GRAD_CONFIG.output_dim))
    return tc.finite_diff_check(forward, backward, [x] + [params[n] for n in names], h, cot)


def anchor_property(config: TapeConfig, length: int, seed: int) -> tuple[float, float]:
    """Return ``(interior deviation, max boundary deviation)`` from the anchor-free value.

    The anchor-free value is taken from the middle of a forward pass on the
    same constant input extended to three times its length, whose centre is
    out of reach of any zero padding.
    """
    params = randomized_tape(config, seed)
    row = np.random.default_rng(seed).normal(size=config.input_dim)
    out = tape_forward(np.tile(row, (length, 1)), params)
    extended = tape_forward(np.tile(row, (3 * length, 1)), params)
    n = out.shape[0]
    reference = extended[n + n // 2]
    left, right = boundary_margin(config, length)
    if left + right >= n:
        raise ValueError(f"no interior rows: margins ({left}, {right}) for {n} rows")
    extended_mid = extended[n + left : 2 * n - right]
    if np.abs(extended_mid - reference).max() > 1e-10:
        raise AssertionError("counterfactual centre is not constant")
    dev = np.abs(out - reference).max(axis=1)
    boundary = np.concatenate([dev[:left], dev[n - right :]])
    return float(dev[left : n - right].max()), float(boundary.max())


# -- check bodies -------------------------------------------------------------


def check_primitive_grads() -> str:
    errs = primitive_grad_errors()
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-6, f"{worst}: rel err {errs[worst]:.3e}"
    return f"max rel err {errs[worst]:.2e} ({worst})"


def check_tape_grad() -> str:
    err = tape_grad_error()
    assert err < 1e-5, f"rel err {err:.3e}"
    return f"rel err {err:.2e}"


def check_tape_init_identity() -> str:
    rng = np.random.default_rng(1)
    for seed in range(10):
        cfg = TapeConfig(merge_len=2 * int(rng.integers(1, 3)), clip_num=2 * int(rng.integers(0, 4)),
                         input_dim=int(rng.integers(2, 9)), mid_dim=int(rng.integers(2, 9)),
                         output_dim=int(rng.integers(2, 9)), sample_rate=int(rng.integers(1, 3)))
        length = cfg.length_quantum * int(rng.integers(1, 5))
        v_t = tape_forward(rng.normal(size=(length, cfg.input_dim)), tape_init(cfg, seed))
        v_l = rng.normal(size=v_t.shape)
        assert not v_t.any(), "fresh adapter output is not zero"
        assert np.array_equal(fuse(v_l, v_t), v_l)
    return "10 configs"


def check_tape_shapes() -> str:
    for frames, expected in ((128, 384), (192, 576)):
        k = frames // 8
        cfg = TapeConfig(merge_len=4, clip_num=k, input_dim=4, mid_dim=4, output_dim=3, sample_rate=2)
        out = tape_forward(np.zeros((k * 96, 4)), tape_init(cfg, 0))
        assert out.shape[0] == expected, f"{frames} frames -> {out.shape[0]} tokens"
    return "128->384, 192->576"


def check_tape_anchor() -> str:
    cfg = TapeConfig(merge_len=4, clip_num=16, input_dim=8, mid_dim=6, output_dim=4, sample_rate=2)
    worst, weakest = 0.0, math.inf
    for seed in range(3):
        interior, boundary = anchor_property(cfg, 512, seed)
        assert interior <= 1e-10, f"seed {seed}: interior deviates by {interior:.2e}"
        assert boundary > 1e-10, f"seed {seed}: no boundary row differs"
        worst, weakest = max(worst, interior), min(weakest, boundary)
    return f"interior dev {worst:.1e}, boundary dev >= {weakest:.1e}"


def check_shuffle_equivalence() -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        m = int(rng.choice([1, 2, 4, 8]))
        c_q, c_l = int(rng.integers(4, 33)), int(rng.integers(2, 17))
        v = rng.normal(size=(m * int(rng.integers(1, 33)), c_q))
        w0, b0 = rng.normal(size=(c_l, c_q)), rng.normal(size=c_l)
        got = ts.token_shuffle(v, ts.efficient_init(w0, b0, m), m)
        worst = max(worst, float(np.abs(got - ts.mean_pool_compress(v, m, w0, b0)).max()))
    assert worst <= 1e-12, f"max diff {worst:.3e}"
    return f"max diff {worst:.1e}"


def check_pooling_baseline() -> str:
    rng = np.random.default_rng(3)
    v = np.tile(rng.normal(size=6), (16, 1))
    w0, b0 = rng.normal(size=(5, 6)), rng.normal(size=5)
    pooled = ts.mean_pool_compress(v, 4, w0, b0)
    assert np.allclose(pooled, tc.linear(v[:4], w0, b0), atol=1e-12, rtol=0)
    shuffled = ts.token_shuffle(v, ts.efficient_init(w0, b0, 4), 4)
    diff = float(np.abs(pooled - shuffled).max())
    assert diff <= 1e-12
    return f"pooling == shuffle@init (diff {diff:.1e})"


def check_random_init_deviation() -> str:
    rng = np.random.default_rng(4)
    cfg = ts.ShuffleConfig(4, 8, 6)
    v = rng.normal(size=(32, 8))
    w0, b0 = rng.normal(size=(6, 8)), rng.normal(size=6)
    dev = float(np.abs(ts.token_shuffle(v, ts.random_init(cfg, 0), 4) - ts.mean_pool_compress(v, 4, w0, b0)).max())
    assert dev > 0
    return f"random-init projector departs from pooled base by {dev:.3f}"


def _random_metric_instances(rng, n=200):
    spans, scores = [], []
    for _ in range(n):
        a = sorted(np.round(rng.uniform(0, 60, size=2), 1))
        b = sorted(np.round(rng.uniform(0, 60, size=2), 1))
        spans.append(((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))))
        k = int(rng.integers(1, 12))
        s = [float(x) for x in np.round(rng.uniform(0, 1, size=k), 2)]
        g = [float(x) for x in rng.choice(ge.SALIENCY_LEVELS, size=k)]
        scores.append((s, g))
    return spans, scores


def check_metric_oracles() -> str:
    rng = np.random.default_rng(5)
    spans, scores = _random_metric_instances(rng)
    for a, b in spans:
        assert abs(ge.iou(ge.TimeSpan(*a), ge.TimeSpan(*b)) - oracles.iou_naive(a, b)) <= 1e-9
    items = [ge.GroundingItem(str(i), "v", "q", ge.TimeSpan(*b), pred=ge.TimeSpan(*a)) for i, (a, b) in enumerate(spans)]
    ious = [oracles.iou_naive(a, b) for a, b in spans]
    for t, value in ge.recall_at_1(items).items():
        assert abs(value - oracles.recall_naive(ious, t)) <= 1e-9
    hl = [ge.HighlightItem(str(i), 2.0, tuple(s), tuple(g)) for i, (s, g) in enumerate(scores)]
    assert abs(ge.highlight_map(hl) - oracles.map_naive(scores, 4.0)) <= 1e-9
    assert ge.hit_at_1(hl) == oracles.hit1_naive(scores, 4.0)
    return "200 instances"


def check_metric_known_values() -> str:
    assert abs(ge.iou(ge.TimeSpan(0, 10), ge.TimeSpan(5, 15)) - 1 / 3) <= 1e-12
    hl = [ge.HighlightItem("a", 2.0, (0.9, 0.1), (4.0, 1.0)), ge.HighlightItem("b", 2.0, (0.1, 0.9), (4.0, 1.0))]
    assert ge.highlight_map(hl) == 0.75
    return "iou 1/3, mAP 0.75"


def check_parser_corpus() -> str:
    lines = data_path("parser_corpus.jsonl").read_text(encoding="utf-8").splitlines()
    for line in lines:
        rec = json.loads(line)
        if rec["start"] is None:
            try:
                ge.parse_timespan(rec["text"])
            except ge.NoTimespanFound:
                continue
            raise AssertionError(f"parsed a negative line: {rec['text']!r}")
        span = ge.parse_timespan(rec["text"])
        assert (span.start_s, span.end_s) == (rec["start"], rec["end"]), rec["text"]
    return f"{len(lines)} lines"


def check_tgc_pipeline() -> str:
    with resources.as_file(data_path("tgc_fixture.jsonl")) as path:
        sources = load_sources(path)
    config = PipelineConfig(seed=7, review_sample_n=5)
    first = dumps_jsonl(emit_tgc(run_pipeline(sources, config).records))
    result = run_pipeline(sources, config)
    assert dumps_jsonl(emit_tgc(result.records)) == first, "pipeline output is not reproducible"
    for rec, row in zip(result.records, emit_tgc(result.records)):
        assert ge.parse_timespan(row["answer"]) == rec.span, row["answer"]
    return f"{len(result.records)} records round-trip"


def check_saliency_grid() -> str:
    levels = {ge.saliency_discretize(s) for s in np.linspace(-0.2, 1.2, 141)}
    assert levels == set(ge.SALIENCY_LEVELS), sorted(levels)
    assert ge.saliency_discretize(-3.0) == 1.0 and ge.saliency_discretize(0.0) == 1.0
    assert ge.saliency_discretize(1.0) == 5.0 and ge.saliency_discretize(7.0) == 5.0
    return "9 levels"


CHECKS: list[tuple[str, Callable[[], str], str]] = [
    # (name, body, component)
    ("primitive_gradients", check_primitive_grads, "core"),
    ("shuffle_init_equivalence", check_shuffle_equivalence, "shuffle"),
    ("tape_init_identity", check_tape_init_identity, "tape"),
    ("tape_shape_contract", check_tape_shapes, "tape"),
    ("tape_gradient", check_tape_grad, "tape"),
    ("tape_anchor", check_tape_anchor, "tape"),
    ("metric_oracles", check_metric_oracles, "metrics"),
    ("metric_known_values", check_metric_known_values, "metrics"),
    ("parser_corpus", check_parser_corpus, "metrics"),
    ("saliency_grid", check_saliency_grid, "metrics"),
    ("tgc_pipeline", check_tgc_pipeline, "tgc"),
]


def plan(ablate: str | None) -> list[tuple[str, Callable[[], str] | None]]:
    """Checks to run under an ablation; ``None`` bodies are reported as SKIP."""
    if ablate is not None and ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablate!r}; choose from {ABLATIONS}")
    out: list[tuple[str, Callable[[], str] | None]] = []
    for name, body, component in CHECKS:
        if component == "tape" and ablate == "no-tape":
            out.append((name, None))
        elif name == "shuffle_init_equivalence" and ablate == "pooling":
            out.append(("pooling_equivalence", check_pooling_baseline))
        elif name == "shuffle_init_equivalence" and ablate == "no-init":
            out.append((name, None))
            out.append(("shuffle_random_init", check_random_init_deviation))
        else:
            out.append((name, body))
    return out


def run_checks(ablate: str | None = None) -> list[CheckResult]:
    results = []
    for name, body in plan(ablate):
        if body is None:
            results.append(CheckResult(name, "SKIP", 0.0, f"ablated ({ablate})"))
            continue
        t0 = time.perf_counter()
        try:
            detail, status = body(), "PASS"
        except AssertionError as exc:
            detail, status = str(exc) or "assertion failed", "FAIL"
        results.append(CheckResult(name, status, time.perf_counter() - t0, detail))
    return results
