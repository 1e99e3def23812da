"""Frame sampling, clip segmentation and token assembly.

No video is decoded here.  A manifest supplies per-video frame counts and
clip encoders are pluggable; :func:`mock_encode` is a seeded stand-in that
lets the whole stack run without a pretrained backbone.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .tensor_core import ShapeError

# maps one clip's frame indices to an (n, c_q) token matrix
ClipEncoder = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class SamplingPlan:
    total_frames_available: int
    k: int
    t: int
    n: int

    def __post_init__(self):
        if min(self.k, self.t, self.n) < 1:
            raise ValueError(f"k, t and n must be >= 1: {self}")
        if self.total_frames_available < 0:
            raise ValueError("total_frames_available must be >= 0")

    @property
    def num_frames(self) -> int:
        return self.k * self.t

    @property
    def num_tokens(self) -> int:
        return self.k * self.n


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    total_frames: int
    duration_s: float


def uniform_sample(plan: SamplingPlan) -> list[int]:
    """Bin-centre sampling: ``floor((i + 0.5) * total / (k*t))`` for each of the k*t bins.

    Short videos yield repeated indices instead of an error.
    """
    total = plan.total_frames_available
    if total < 1:
        raise ValueError("no frames available to sample")
    count = plan.num_frames
    # exact integer form of floor((2i+1) * total / (2 * count))
    return [((2 * i + 1) * total) // (2 * count) for i in range(count)]


def segment(indices: Sequence[int], k: int, t: int) -> list[list[int]]:
    if len(indices) != k * t:
        raise ShapeError(f"expected {k * t} frame indices, got {len(indices)}")
    return [list(indices[j * t : (j + 1) * t]) for j in range(k)]


def assemble(clips: Sequence[np.ndarray]) -> np.ndarray:
    """Stack per-clip token matrices in clip order into one ``(k*n, c_q)`` sequence."""
    if not clips:
        raise ShapeError("no clips to assemble")
    shape = np.shape(clips[0])
    if len(shape) != 2 or any(np.shape(c) != shape for c in clips):
        raise ShapeError(f"ragged clip token shapes: {[np.shape(c) for c in clips]}")
    return np.concatenate([np.asarray(c, dtype=np.float64) for c in clips], axis=0)


def mock_encode(clip_indices: Sequence[int], seed: int, n: int, c_q: int) -> np.ndarray:
    """Deterministic standard-normal features keyed by ``(seed, clip_indices)``."""
    key = [int(seed), len(clip_indices), *(int(i) for i in clip_indices)]
    rng = np.random.default_rng(np.random.SeedSequence(key))
    return rng.standard_normal((n, c_q))


def mock_encoder(seed: int, n: int, c_q: int) -> ClipEncoder:
    return lambda idx: mock_encode(idx, seed, n, c_q)


def encode_video(plan: SamplingPlan, encoder: ClipEncoder, threads: int = 1) -> np.ndarray:
    """Sample, segment, encode every clip (optionally in parallel) and assemble."""
    clips = segment(uniform_sample(plan), plan.k, plan.t)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tokens = list(pool.map(encoder, clips))
    else:
        tokens = [encoder(c) for c in clips]
    for j, tok in enumerate(tokens):
        if np.shape(tok)[0] != plan.n:
            raise ShapeError(f"clip {j}: encoder returned {np.shape(tok)[0]} tokens, expected {plan.n}")
    return assemble(tokens)


def read_manifest(path: str | Path) -> Iterator[ManifestEntry]:
    """Read a JSON-lines manifest of ``{video_id, total_frames, duration_s}`` records."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield ManifestEntry(str(rec["video_id"]), int(rec["total_frames"]), float(rec["duration_s"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
