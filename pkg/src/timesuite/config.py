"""Run configuration: defaults < config file < environment < command-line flags.

The config file is YAML (JSON also parses) with optional sections
``sampling``, ``tape``, ``tgc``, ``eval`` plus top-level ``seed`` and
``threads``.  Environment variables ``TIMESUITE_<SECTION>_<KEY>`` (or
``TIMESUITE_SEED`` / ``TIMESUITE_THREADS``) override file values.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .grounding_eval import DEFAULT_POSITIVE_LEVEL, DEFAULT_THRESHOLDS
from .tape import TapeConfig
from .tgc_builder import PipelineConfig
from .token_shuffle import ShuffleConfig
from .video_pipeline import SamplingPlan

ENV_PREFIX = "TIMESUITE_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingSection:
    frames: int = 128
    frames_per_clip: int = 8
    tokens_per_clip: int = 96


@dataclass(frozen=True)
class TapeSection:
    merge_len: int = 4
    clip_num: int | None = None  # None: use the clip count K
    input_dim: int = 768
    mid_dim: int = 256
    output_dim: int = 4096
    sample_rate: int = 2


@dataclass(frozen=True)
class EvalSection:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    positive_level: float = DEFAULT_POSITIVE_LEVEL


@dataclass(frozen=True)
class RunConfig:
    sampling: SamplingSection = field(default_factory=SamplingSection)
    tape: TapeSection = field(default_factory=TapeSection)
    tgc: PipelineConfig = field(default_factory=PipelineConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    threads: int = 1

    @property
    def num_clips(self) -> int:
        return self.sampling.frames // self.sampling.frames_per_clip

    @property
    def num_tokens(self) -> int:
        return self.num_clips * self.sampling.tokens_per_clip

    def tape_config(self) -> TapeConfig:
        t = self.tape
        clip_num = self.num_clips if t.clip_num is None else t.clip_num
        return TapeConfig(t.merge_len, clip_num, t.input_dim, t.mid_dim, t.output_dim, t.sample_rate)

    def shuffle_config(self) -> ShuffleConfig:
        return ShuffleConfig(self.tape.merge_len, self.tape.input_dim, self.tape.output_dim)

    def sampling_plan(self, total_frames: int | None = None) -> SamplingPlan:
        s = self.sampling
        total = s.frames if total_frames is None else total_frames
        return SamplingPlan(total, self.num_clips, s.frames_per_clip, s.tokens_per_clip)

    def validate(self) -> "RunConfig":
        """Check cross-module constraints before any work starts."""
        s = self.sampling
        if min(s.frames, s.frames_per_clip, s.tokens_per_clip) < 1:
            raise ConfigError("sampling.frames, frames_per_clip and tokens_per_clip must be >= 1")
        if s.frames % s.frames_per_clip:
            raise ConfigError(f"frames={s.frames} is not a multiple of frames_per_clip={s.frames_per_clip}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        try:
            tape = self.tape_config()
            self.shuffle_config()
            tape.check_length(self.num_tokens)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"sampling": SamplingSection, "tape": TapeSection, "tgc": PipelineConfig, "eval": EvalSection}


def _coerce(section: str, key: str, value):
    if section == "eval" and key == "thresholds":
        return tuple(float(v) for v in value)
    return value


def _apply(cfg: RunConfig, updates: dict, source: str) -> RunConfig:
    top: dict = {}
    for key, value in updates.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{source}: section {key!r} must be a mapping")
            cls = _SECTIONS[key]
            known = {f.name for f in fields(cls)}
            unknown = set(value) - known
            if unknown:
                raise ConfigError(f"{source}: unknown keys in {key}: {sorted(unknown)}")
            try:
                section = replace(getattr(cfg, key), **{k: _coerce(key, k, v) for k, v in value.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}: {exc}") from exc
            top[key] = section
        elif key in ("seed", "threads"):
            top[key] = int(value)
        else:
            raise ConfigError(f"{source}: unknown config key {key!r}")
    return replace(cfg, **top)


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        value = yaml.safe_load(raw)
        if rest in ("seed", "threads"):
            out[rest] = value
            continue
        section, _, key = rest.partition("_")
        if section in _SECTIONS and key:
            out.setdefault(section, {})[key] = value
    return out


def parse_assignment(text: str) -> dict:
    """``"tape.mid_dim=64"`` -> ``{"tape": {"mid_dim": 64}}``."""
    path, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"expected KEY=VALUE, got {text!r}")
    value = yaml.safe_load(raw)
    section, _, key = path.partition(".")
    return {section: {key: value}} if key else {section: value}


def load_config(path: str | Path | None = None, overrides: list[dict] | None = None, environ=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _apply(cfg, data, str(path))
    cfg = _apply(cfg, env_overrides(environ), "environment")
    for upd in overrides or []:
        cfg = _apply(cfg, upd, "command line")
    return cfg
