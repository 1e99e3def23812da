"""Temporal Grounded Caption (TGC) corpus builder.

Four stages turn timestamped detailed captions into instruction records
whose query is a short scene title and whose answer carries both the span
and the detailed caption:

1. duration filter (closed interval ``[min_span_s, max_span_s]``);
2. scene-title summarization (pluggable; a rule-based fallback ships here);
3. within-video similarity dedup (greedy, earliest segment wins);
4. a seeded review sample for manual quality checks.

Records that the summarizer fails on are quarantined with a reason rather
than silently dropped.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .grounding_eval import TimeSpan

Summarizer = Callable[[str, int], str]
Embedder = Callable[[str], np.ndarray]

QUERY_TEMPLATE = "When does the scene '{title}' occur in the video? Describe it in detail."
ANSWER_TEMPLATE = "From {start:.1f} to {end:.1f} seconds, {caption}"

STOP_WORDS = frozenset(
    """a an the and or but of in on at to for from with without by into onto over under
    is are was were be been being am do does did has have had this that these those it its
    he she they them his her their him we us our you your i me my as while when then than
    there here up down out off very just also so such some any each all both after before
    during through about against between again further once what which who whom where why how
    not no nor only own same too can will should now""".split()
)
_CLAUSE_BREAK = re.compile(
    r"[,;:.!?]|\b(?:while|as|when|whereas|because|before|after|then|until|meanwhile)\b", re.IGNORECASE
)
_WORD = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


class SummarizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceRecord:
    video_id: str
    span: TimeSpan
    detailed_caption: str
    video_duration_s: float

    def __post_init__(self):
        if not self.detailed_caption.strip():
            raise ValueError(f"{self.video_id}: empty caption")
        if self.span.end_s > self.video_duration_s:
            raise ValueError(
                f"{self.video_id}: span ends at {self.span.end_s}s past video duration {self.video_duration_s}s"
            )


@dataclass(frozen=True)
class TgcRecord:
    video_id: str
    span: TimeSpan
    scene_title: str
    detailed_caption: str
    decisions: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class PipelineConfig:
    min_span_s: float = 5.0
    max_span_s: float = 120.0
    title_max_tokens: int = 8
    sim_threshold: float = 0.85
    review_sample_n: int = 20
    seed: int = 0
    max_quarantine_frac: float = 0.5

    def __post_init__(self):
        if not 0 < self.min_span_s < self.max_span_s:
            raise ValueError("need 0 < min_span_s < max_span_s")
        if not 0 < self.sim_threshold <= 1:
            raise ValueError("sim_threshold must be in (0, 1]")
        if self.title_max_tokens < 1 or self.review_sample_n < 0:
            raise ValueError("title_max_tokens must be >= 1 and review_sample_n >= 0")


@dataclass
class StageReport:
    name: str
    n_in: int
    n_out: int
    rejected: dict[str, int] = field(default_factory=dict)


def token_count(text: str) -> int:
    return len(text.split())


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


# -- stage 1 ------------------------------------------------------------------


def filter_by_duration(records: Sequence[SourceRecord], config: PipelineConfig):
    """Return ``(kept, rejected)`` where ``rejected`` holds ``(record, reason)`` pairs."""
    kept, rejected = [], []
    for rec in records:
        length = rec.span.length
        if length < config.min_span_s:
            rejected.append((rec, "too_short"))
        elif length > config.max_span_s:
            rejected.append((rec, "too_long"))
        else:
            kept.append(rec)
    return kept, rejected


# -- stage 2 ------------------------------------------------------------------


def fallback_summarizer(caption: str, budget: int) -> str:
    """Rule-based scene title.

    Captions already within budget are returned unchanged.  Otherwise the
    content words of the first clause come first, then content words from
    the rest of the caption fill any remaining budget.
    """
    caption = caption.strip()
    if token_count(caption) <= budget:
        return caption
    head = _CLAUSE_BREAK.split(caption, maxsplit=1)[0]
    head_words = [w for w in words(head) if w not in STOP_WORDS]
    title = head_words[:budget]
    for w in words(caption):
        if len(title) >= budget:
            break
        if w not in STOP_WORDS and w not in title:
            title.append(w)
    return " ".join(title)


def summarize_title(record: SourceRecord, summarizer: Summarizer, config: PipelineConfig) -> str:
    try:
        title = summarizer(record.detailed_caption, config.title_max_tokens)
    except Exception as exc:  # external summarizers may fail arbitrarily
        raise SummarizerError(f"summarizer raised {type(exc).__name__}: {exc}") from exc
    title = " ".join(str(title).split())
    if not title:
        raise SummarizerError("empty title")
    if token_count(title) > config.title_max_tokens:
        raise SummarizerError(f"title has {token_count(title)} tokens, budget {config.title_max_tokens}")
    return title


def quantize_span(span: TimeSpan) -> TimeSpan:
    """Round to the 0.1 s grid used when rendering answers."""
    return TimeSpan(round(span.start_s, 1), round(span.end_s, 1))


# -- stage 3 ------------------------------------------------------------------


class BagOfWordsEmbedder:
    """Hashed bag-of-words unit vectors (stable across processes)."""

    def __init__(self, dim: int = 1 << 16):
        self.dim = dim

    def bucket(self, word: str) -> int:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for w in words(text) or ["<empty>"]:
            vec[self.bucket(w)] += 1.0
        return vec / np.linalg.norm(vec)


def segment_text(record: TgcRecord) -> str:
    return f"{record.scene_title} {record.detailed_caption}"


def cross_segment_similarity(records: Sequence[TgcRecord], embedder: Embedder) -> np.ndarray:
    """Cosine similarity matrix of title+caption embeddings; diagonal exactly 1."""
    if not records:
        raise ValueError("need at least one record")
    emb = np.stack([np.asarray(embedder(segment_text(r)), dtype=np.float64) for r in records])
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / norms
    sim = emb @ emb.T
    sim = np.clip(0.5 * (sim + sim.T), -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def temporal_order(records: Sequence[TgcRecord]) -> list[int]:
    return sorted(range(len(records)), key=lambda i: (records[i].span.start_s, records[i].span.end_s, i))


def dedup_segments(records: Sequence[TgcRecord], sim: np.ndarray, sim_threshold: float) -> list[TgcRecord]:
    """Greedy sweep in temporal order; keep a segment iff its similarity to every kept one is below threshold.

    ``records`` must all belong to one video and ``sim`` must be their
    similarity matrix.  Kept records are returned in temporal order with the
    highest similarity to an earlier kept segment noted in ``decisions``.
    """
    sim = np.asarray(sim)
    if sim.shape != (len(records), len(records)):
        raise ValueError(f"similarity matrix {sim.shape} does not match {len(records)} records")
    kept_idx: list[int] = []
    kept = []
    for i in temporal_order(records):
        closest = max((float(sim[i, j]) for j in kept_idx), default=0.0)
        if closest < sim_threshold:
            kept_idx.append(i)
            rec = records[i]
            kept.append(TgcRecord(rec.video_id, rec.span, rec.scene_title, rec.detailed_caption,
                                  {**rec.decisions, "max_similarity": round(closest, 6)}))
    return kept


# -- stage 4 and output ------------------------------------------------------


def sample_for_review(records: Sequence[TgcRecord], config: PipelineConfig) -> list[dict]:
    """Seeded uniform sample (without replacement) rendered with full context."""
    n = min(config.review_sample_n, len(records))
    rng = np.random.default_rng(config.seed)
    picks = sorted(rng.choice(len(records), size=n, replace=False).tolist()) if n else []
    return [
        {
            "index": i,
            "video_id": records[i].video_id,
            "start": records[i].span.start_s,
            "end": records[i].span.end_s,
            "scene_title": records[i].scene_title,
            "detailed_caption": records[i].detailed_caption,
            "decisions": records[i].decisions,
        }
        for i in picks
    ]


def emit_tgc(records: Iterable[TgcRecord]) -> list[dict]:
    out = []
    for rec in records:
        out.append(
            {
                "video_id": rec.video_id,
                "start": rec.span.start_s,
                "end": rec.span.end_s,
                "query": QUERY_TEMPLATE.format(title=rec.scene_title),
                "answer": ANSWER_TEMPLATE.format(
                    start=rec.span.start_s, end=rec.span.end_s, caption=rec.detailed_caption
                ),
            }
        )
    return out


def dumps_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)


@dataclass
class PipelineResult:
    records: list[TgcRecord]
    stages: list[StageReport]
    quarantined: list[tuple[SourceRecord, str]]
    review: list[dict]

    @property
    def quarantine_frac(self) -> float:
        n_in = self.stages[1].n_in if len(self.stages) > 1 else 0
        return len(self.quarantined) / n_in if n_in else 0.0

    def report(self, config: PipelineConfig) -> dict:
        return {
            "config": asdict(config),
            "stages": [asdict(s) for s in self.stages],
            "quarantined": [
                {"video_id": r.video_id, "start": r.span.start_s, "end": r.span.end_s, "reason": why}
                for r, why in self.quarantined
            ],
            "review": self.review,
        }


def run_pipeline(
    sources: Sequence[SourceRecord],
    config: PipelineConfig,
    summarizer: Summarizer | None = None,
    embedder: Embedder | None = None,
) -> PipelineResult:
    summarizer = summarizer or fallback_summarizer
    embedder = embedder or BagOfWordsEmbedder()
    stages = []

    kept, rejected = filter_by_duration(sources, config)
    stages.append(StageReport("duration_filter", len(sources), len(kept), dict(Counter(r for _, r in rejected))))

    titled: list[TgcRecord] = []
    quarantined: list[tuple[SourceRecord, str]] = []
    for rec in kept:
        try:
            title = summarize_title(rec, summarizer, config)
        except SummarizerError as exc:
            quarantined.append((rec, str(exc)))
            continue
        if token_count(title) >= token_count(rec.detailed_caption):
            quarantined.append((rec, "title not shorter than caption"))
            continue
        titled.append(
            TgcRecord(rec.video_id, quantize_span(rec.span), title, rec.detailed_caption,
                      {"span_length_s": round(rec.span.length, 6)})
        )
    stages.append(StageReport("scene_title", len(kept), len(titled), {"quarantined": len(quarantined)} if quarantined else {}))

    by_video: dict[str, list[TgcRecord]] = {}
    for rec in titled:
        by_video.setdefault(rec.video_id, []).append(rec)
    deduped: list[TgcRecord] = []
    for group in by_video.values():
        deduped.extend(dedup_segments(group, cross_segment_similarity(group, embedder), config.sim_threshold))
    n_dup = len(titled) - len(deduped)
    stages.append(StageReport("similarity_dedup", len(titled), len(deduped), {"too_similar": n_dup} if n_dup else {}))

    review = sample_for_review(deduped, config)
    stages.append(StageReport("review_sample", len(deduped), len(deduped), {}))
    return PipelineResult(deduped, stages, quarantined, review)


def load_sources(path: str | Path) -> list[SourceRecord]:
    """Read ``{video_id, start, end, caption, video_duration_s}`` JSON lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    SourceRecord(
                        str(rec["video_id"]),
                        TimeSpan(float(rec["start"]), float(rec["end"])),
                        str(rec["caption"]),
                        float(rec["video_duration_s"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad source record: {exc}") from exc
    return out
