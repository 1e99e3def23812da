"""``timesuite`` command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import grounding_eval as ge
from . import token_shuffle as ts
from .checks import ABLATIONS, run_checks
from .config import ConfigError, RunConfig, load_config, parse_assignment
from .tape import fuse, tape_forward, tape_init
from .tgc_builder import dumps_jsonl, emit_tgc, load_sources, run_pipeline
from .video_pipeline import encode_video, mock_encoder, read_manifest
from .weights import atomic_write_bytes

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _write_json(path: str | Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    overrides = [parse_assignment(s) for s in args.set or []]
    if args.seed is not None:
        overrides.append({"seed": args.seed, "tgc": {"seed": args.seed}})
    if args.threads is not None:
        overrides.append({"threads": args.threads})
    if getattr(args, "frames", None) is not None:
        overrides.append({"sampling": {"frames": args.frames}})
    return load_config(args.config, overrides)


# -- commands -----------------------------------------------------------------


def cmd_eval_grounding(args, cfg: RunConfig) -> int:
    thresholds = tuple(float(t) for t in args.thresholds.split(",")) if args.thresholds else cfg.eval.thresholds
    items = ge.load_grounding_items(args.pred, args.gt)
    if not items:
        raise UsageError(f"{args.gt}: no ground-truth records")
    report = ge.grounding_report(items, thresholds)
    report.extra["config"] = cfg.to_dict()
    print(report.table())
    if args.out:
        _write_json(args.out, report.to_dict())
    return EXIT_OK


def cmd_eval_highlight(args, cfg: RunConfig) -> int:
    level = cfg.eval.positive_level if args.positive_level is None else args.positive_level
    items = ge.load_highlight_items(args.file)
    if not items:
        raise UsageError(f"{args.file}: no highlight records")
    try:
        report = ge.highlight_report(items, level)
    except ge.NotEvaluable as exc:
        raise UsageError(str(exc)) from exc
    report.extra["config"] = cfg.to_dict()
    print(report.table())
    if args.out:
        _write_json(args.out, report.to_dict())
    return EXIT_OK


def cmd_tgc_build(args, cfg: RunConfig) -> int:
    if not args.out:
        raise UsageError("tgc build needs --out")
    pipeline_cfg = cfg.tgc
    result = run_pipeline(load_sources(args.input), pipeline_cfg)
    _write_text(args.out, dumps_jsonl(emit_tgc(result.records)))
    report = result.report(pipeline_cfg)
    if args.report:
        _write_json(args.report, report)
    for stage in result.stages:
        rejected = ", ".join(f"{k}={v}" for k, v in stage.rejected.items()) or "-"
        print(f"{stage.name:<18} in={stage.n_in:<6} out={stage.n_out:<6} rejected: {rejected}")
    if result.quarantine_frac > pipeline_cfg.max_quarantine_frac:
        print(
            f"quarantine overflow: {len(result.quarantined)} records "
            f"({result.quarantine_frac:.1%} > {pipeline_cfg.max_quarantine_frac:.1%})",
            file=sys.stderr,
        )
        return EXIT_CHECK
    return EXIT_OK


def demo_trace(cfg: RunConfig, ablate: str | None = None, total_frames: int | None = None) -> dict:
    """Run the mock stack end to end and return per-stage shapes."""
    cfg.validate()
    tape_cfg = cfg.tape_config()
    plan = cfg.sampling_plan(total_frames)
    m, c_q, c_l = tape_cfg.merge_len, tape_cfg.input_dim, tape_cfg.output_dim
    rng = np.random.default_rng(cfg.seed)
    w0 = rng.uniform(-1, 1, size=(c_l, c_q)) / np.sqrt(c_q)
    b0 = np.zeros(c_l)

    stages = [
        ("frames sampled", f"{plan.num_frames} ({plan.k} clips x {plan.t} frames)"),
        ("clip tokens", f"{plan.k} x ({plan.n} × {c_q})"),
    ]
    v_q = encode_video(plan, mock_encoder(cfg.seed, plan.n, c_q), threads=cfg.threads)
    stages.append(("V_q", f"{v_q.shape[0]} × {v_q.shape[1]}"))
    if ablate == "pooling":
        v_l = ts.mean_pool_compress(v_q, m, w0, b0)
        stages.append(("V_l (mean pooling)", f"{v_l.shape[0]} × {v_l.shape[1]}"))
    else:
        v_m = ts.merge_adjacent(v_q, m)
        stages.append((f"V_m (merge m={m})", f"{v_m.shape[0]} × {v_m.shape[1]}"))
        params = ts.random_init(cfg.shuffle_config(), cfg.seed) if ablate == "no-init" else ts.efficient_init(w0, b0, m)
        v_l = ts.project(v_m, params)
        stages.append(("V_l", f"{v_l.shape[0]} × {v_l.shape[1]}"))
    max_vt = None
    if ablate == "no-tape":
        tokens = v_l
    else:
        v_t = tape_forward(v_q, tape_init(tape_cfg, cfg.seed))
        max_vt = float(np.abs(v_t).max())
        stages.append(("V_t", f"{v_t.shape[0]} × {v_t.shape[1]} (max|V_t| = {max_vt:g})"))
        tokens = fuse(v_l, v_t)
    stages.append(("tokens to language model", f"{tokens.shape[0]} × {tokens.shape[1]}"))
    return {
        "stages": [{"stage": k, "shape": v} for k, v in stages],
        "output_tokens": tokens.shape[0],
        "output_dim": tokens.shape[1],
        "max_abs_v_t": max_vt,
        "ablate": ablate,
        "config": cfg.to_dict(),
    }


def cmd_demo(args, cfg: RunConfig) -> int:
    total = None
    if args.manifest:
        entries = {e.video_id: e for e in read_manifest(args.manifest)}
        if not entries:
            raise UsageError(f"{args.manifest}: empty manifest")
        vid = args.video_id or next(iter(entries))
        if vid not in entries:
            raise UsageError(f"video {vid!r} not in manifest")
        total = entries[vid].total_frames
        print(f"video {vid}: {total} frames, {entries[vid].duration_s:g}s")
    trace = demo_trace(cfg, args.ablate, total)
    for stage in trace["stages"]:
        print(f"{stage['stage']}: {stage['shape']}")
    if args.out:
        _write_json(args.out, trace)
    return EXIT_OK


def cmd_check(args, cfg: RunConfig) -> int:
    results = run_checks(args.ablate)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.status:<4}  {r.name:<{width}}  {r.seconds:7.3f}s  {r.detail}")
    n_fail = sum(r.status == "FAIL" for r in results)
    print(f"{len(results)} checks: {sum(r.status == 'PASS' for r in results)} passed, "
          f"{n_fail} failed, {sum(r.status == 'SKIP' for r in results)} skipped")
    if args.report:
        _write_json(args.report, {"ablate": args.ablate, "results": [r.__dict__ for r in results]})
    return EXIT_CHECK if n_fail else EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--out", help="output path")
    common.add_argument("--report", help="report path")

    parser = _Parser(prog="timesuite", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eval-grounding", parents=[common], help="R@1 at IoU thresholds")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", help="comma-separated, default 0.3,0.5,0.7")
    p.set_defaults(func=cmd_eval_grounding)

    p = sub.add_parser("eval-highlight", parents=[common], help="highlight mAP and HIT@1")
    p.add_argument("--file", required=True)
    p.add_argument("--positive-level", type=float)
    p.set_defaults(func=cmd_eval_highlight)

    tgc = sub.add_parser("tgc", help="Temporal Grounded Caption corpus tools")
    tgc_sub = tgc.add_subparsers(dest="tgc_command", required=True, parser_class=_Parser)
    p = tgc_sub.add_parser("build", parents=[common], help="run the 4-stage pipeline")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_tgc_build)

    p = sub.add_parser("demo", parents=[common], help="mock end-to-end forward pass with shape trace")
    p.add_argument("--frames", type=int)
    p.add_argument("--manifest")
    p.add_argument("--video-id")
    p.add_argument("--ablate", choices=ABLATIONS)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--ablate", choices=ABLATIONS)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args).validate()
        return args.func(args, cfg)
    except (UsageError, ConfigError, ValueError, OSError) as exc:
        print(f"timesuite: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
