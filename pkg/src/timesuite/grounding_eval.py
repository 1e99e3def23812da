"""Temporal grounding and highlight detection metrics.

Grounding: model responses are parsed into a (start, end) span and scored
by R@1 at IoU thresholds.  Unparseable responses count as misses.

Highlight detection: per-query ranking AP over clips (positives are clips
whose ground-truth saliency is at least ``positive_level``), averaged into
mAP, plus HIT@1 on the top-ranked clip.  Ties in predicted score are broken
by clip index, lowest first.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)
SALIENCY_LEVELS = tuple(1.0 + 0.5 * i for i in range(9))
DEFAULT_POSITIVE_LEVEL = 4.0


class NoTimespanFound(ValueError):
    pass


class NotEvaluable(ValueError):
    """A highlight item (or a whole set) has no positive clips to rank."""


@dataclass(frozen=True)
class TimeSpan:
    start_s: float
    end_s: float
    # set by the parser when the response listed the end before the start
    swapped: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValueError(f"non-finite span ({self.start_s}, {self.end_s})")
        if not 0 <= self.start_s <= self.end_s:
            raise ValueError(f"invalid span ({self.start_s}, {self.end_s})")

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class GroundingItem:
    id: str
    video_id: str
    query: str
    gt: TimeSpan
    response_text: str | None = None
    pred: TimeSpan | None = None


@dataclass(frozen=True)
class HighlightItem:
    id: str
    clip_duration_s: float
    pred_scores: tuple[float, ...]
    gt_saliency: tuple[float, ...]

    def __post_init__(self):
        if len(self.pred_scores) != len(self.gt_saliency) or not self.pred_scores:
            raise ValueError(
                f"item {self.id}: pred_scores ({len(self.pred_scores)}) and "
                f"gt_saliency ({len(self.gt_saliency)}) must have equal non-zero length"
            )
        bad = [g for g in self.gt_saliency if g not in SALIENCY_LEVELS]
        if bad:
            raise ValueError(f"item {self.id}: saliency levels off the 0.5 grid: {bad}")
        if not all(math.isfinite(s) for s in self.pred_scores):
            raise ValueError(f"item {self.id}: non-finite predicted score")


# -- response parsing -------------------------------------------------------

_NUM = r"(?<![\d.])(\d+(?:\.\d+)?)(?!\.?\d)"
_UNIT = r"(?:seconds?|secs?|s)\b"
_PATTERNS = [
    # start: X, end: Y
    re.compile(
        rf"start(?:\s*time)?\s*[:=]?\s*{_NUM}\s*(?:{_UNIT})?\s*[,;]?\s*(?:and\s+)?"
        rf"end(?:\s*time)?\s*[:=]?\s*{_NUM}",
        re.IGNORECASE,
    ),
    # from X to Y [seconds]
    re.compile(rf"\bfrom\s+{_NUM}\s*(?:{_UNIT})?\s*(?:to|until|till)\s+{_NUM}", re.IGNORECASE),
    # X - Y seconds
    re.compile(rf"{_NUM}\s*(?:{_UNIT})?\s*[-\u2013\u2014~]\s*{_NUM}\s*{_UNIT}", re.IGNORECASE),
    # X to Y
    re.compile(rf"{_NUM}\s*(?:{_UNIT})?\s+to\s+{_NUM}", re.IGNORECASE),
    # bare X, Y
    re.compile(rf"{_NUM}\s*,\s*{_NUM}"),
]


def parse_timespan(text: str) -> TimeSpan:
    """Extract the first timespan from a free-text response.

    Grammar forms are tried from most to least specific: ``start: X, end: Y``,
    ``from X to Y``, ``X - Y seconds``, ``X to Y``, bare ``X, Y``.  A reversed
    pair is swapped and flagged with ``swapped=True``.
    """
    for pattern in _PATTERNS:
        match = pattern.search(text)
        if match:
            a, b = float(match.group(1)), float(match.group(2))
            if a > b:
                return TimeSpan(b, a, swapped=True)
            return TimeSpan(a, b)
    raise NoTimespanFound(f"no timespan in response: {text!r}")


# -- grounding ---------------------------------------------------------------


def iou(a: TimeSpan, b: TimeSpan) -> float:
    inter = max(0.0, min(a.end_s, b.end_s) - max(a.start_s, b.start_s))
    union = a.length + b.length - inter
    if union <= 0:
        # both spans are points; union is zero only when they coincide
        return 1.0 if (a.start_s, a.end_s) == (b.start_s, b.end_s) else 0.0
    return inter / union


def predicted_span(item: GroundingItem) -> TimeSpan | None:
    """The item's prediction, parsing ``response_text`` if needed; ``None`` if unparseable."""
    if item.pred is not None:
        return item.pred
    if item.response_text is None:
        return None
    try:
        return parse_timespan(item.response_text)
    except NoTimespanFound:
        return None


def item_iou(item: GroundingItem) -> float:
    pred = predicted_span(item)
    return 0.0 if pred is None else iou(pred, item.gt)


def recall_at_1(
    items: Sequence[GroundingItem], thresholds: Iterable[float] = DEFAULT_THRESHOLDS
) -> dict[float, float]:
    if not items:
        raise ValueError("recall_at_1 needs at least one item")
    ious = [item_iou(it) for it in items]
    return {t: sum(v >= t for v in ious) / len(ious) for t in thresholds}


# -- highlight detection -----------------------------------------------------


def _ranking(scores: Sequence[float]) -> np.ndarray:
    """Clip indices by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def highlight_average_precision(item: HighlightItem, positive_level: float = DEFAULT_POSITIVE_LEVEL) -> float:
    positive = np.asarray(item.gt_saliency) >= positive_level
    if not positive.any():
        raise NotEvaluable(f"item {item.id}: no clip with saliency >= {positive_level}")
    hits = positive[_ranking(item.pred_scores)]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, len(ranks) + 1) / ranks
    return math.fsum(precisions) / len(ranks)


def _evaluable(items: Sequence[HighlightItem], positive_level: float) -> list[HighlightItem]:
    kept = [it for it in items if max(it.gt_saliency) >= positive_level]
    if not kept:
        raise NotEvaluable(f"no item has a clip with saliency >= {positive_level}")
    return kept


def highlight_map(items: Sequence[HighlightItem], positive_level: float = DEFAULT_POSITIVE_LEVEL) -> float:
    """Mean per-query AP over items that have at least one positive clip."""
    aps = [highlight_average_precision(it, positive_level) for it in _evaluable(items, positive_level)]
    return math.fsum(aps) / len(aps)


def hit_at_1(items: Sequence[HighlightItem], positive_level: float = DEFAULT_POSITIVE_LEVEL) -> float:
    kept = _evaluable(items, positive_level)
    hits = sum(it.gt_saliency[int(_ranking(it.pred_scores)[0])] >= positive_level for it in kept)
    return hits / len(kept)


def saliency_discretize(similarity: float) -> float:
    """Map a [0, 1] similarity onto the nine saliency levels 1.0, 1.5, ..., 5.0."""
    if not math.isfinite(similarity):
        raise ValueError("similarity must be finite")
    clamped = min(1.0, max(0.0, similarity))
    return 1.0 + 0.5 * round(8 * clamped)  # round() is half-to-even


# -- reports and file formats ------------------------------------------------


@dataclass
class EvalReport:
    r1_03: float | None = None
    r1_05: float | None = None
    r1_07: float | None = None
    map: float | None = None
    hit1: float | None = None
    n_items: int = 0
    n_unparsed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        extra = out.pop("extra")
        out.update(extra)
        return out

    def table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items() if v is not None and not isinstance(v, dict)]
        width = max(len(k) for k, _ in rows)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  -----"]
        for key, value in rows:
            shown = f"{100 * value:.2f}" if isinstance(value, float) else str(value)
            lines.append(f"{key:<{width}}  {shown}")
        return "\n".join(lines)


def _threshold_key(t: float) -> str:
    return "r1_" + f"{t:.1f}".replace(".", "")


def grounding_report(items: Sequence[GroundingItem], thresholds: Iterable[float] = DEFAULT_THRESHOLDS) -> EvalReport:
    """R@1 over ``items``; rates are fractions in [0, 1] (the table shows percentages)."""
    thresholds = tuple(thresholds)
    recall = recall_at_1(items, thresholds)
    report = EvalReport(n_items=len(items), n_unparsed=sum(predicted_span(it) is None for it in items))
    for t, value in recall.items():
        key = _threshold_key(t)
        if key in ("r1_03", "r1_05", "r1_07"):
            setattr(report, key, value)
        else:
            report.extra[key] = value
    return report


def highlight_report(items: Sequence[HighlightItem], positive_level: float = DEFAULT_POSITIVE_LEVEL) -> EvalReport:
    evaluable = _evaluable(items, positive_level)
    return EvalReport(
        map=highlight_map(items, positive_level),
        hit1=hit_at_1(items, positive_level),
        n_items=len(items),
        extra={"n_evaluable": len(evaluable), "positive_level": positive_level},
    )


def read_jsonl(path: str | Path) -> list[tuple[int, dict]]:
    """Return ``(line_number, record)`` pairs; blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(rec, dict):
                raise ValueError(f"{path}:{lineno}: expected a JSON object")
            records.append((lineno, rec))
    return records


def load_grounding_items(pred_path: str | Path, gt_path: str | Path) -> list[GroundingItem]:
    """Join a predictions file and a ground-truth file on ``id``.

    Ground truth lines: ``{id, video_id, query, start, end}``.  Prediction
    lines carry either ``response_text`` or ``pred_start``/``pred_end``.  A
    ground-truth id with no prediction is scored as unparsed.
    """
    preds: dict[str, tuple[int, dict]] = {}
    for lineno, rec in read_jsonl(pred_path):
        if "id" not in rec:
            raise ValueError(f"{pred_path}:{lineno}: missing 'id'")
        preds[str(rec["id"])] = (lineno, rec)
    items = []
    for lineno, rec in read_jsonl(gt_path):
        try:
            gid = str(rec["id"])
            gt = TimeSpan(float(rec["start"]), float(rec["end"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{gt_path}:{lineno}: bad ground-truth record: {exc}") from exc
        response, pred = None, None
        if gid in preds:
            plineno, prec = preds[gid]
            if "pred_start" in prec and "pred_end" in prec:
                try:
                    a, b = float(prec["pred_start"]), float(prec["pred_end"])
                    pred = TimeSpan(min(a, b), max(a, b), swapped=a > b)
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{pred_path}:{plineno}: bad pred_start/pred_end: {exc}") from exc
            else:
                response = str(prec.get("response_text", ""))
        items.append(
            GroundingItem(gid, str(rec.get("video_id", "")), str(rec.get("query", "")), gt, response, pred)
        )
    return items


def load_highlight_items(path: str | Path) -> list[HighlightItem]:
    items = []
    for lineno, rec in read_jsonl(path):
        try:
            items.append(
                HighlightItem(
                    str(rec["id"]),
                    float(rec.get("clip_duration_s", 2.0)),
                    tuple(float(s) for s in rec["pred_scores"]),
                    tuple(float(g) for g in rec["gt_saliency"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return items
