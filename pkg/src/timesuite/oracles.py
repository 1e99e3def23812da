"""Deliberately naive reference implementations.

These share no code with the production paths: plain loops over Python
floats, explicit enumeration, no numpy ranking helpers.  They exist so the
``check`` command and the test-suite can compare against something written
a different way.
"""

from __future__ import annotations

import math


def conv1d_naive(x, weight, bias, stride, padding, groups):
    """Direct zero-padded grouped cross-correlation over nested lists."""
    cin = len(x)
    length = len(x[0])
    cout = len(weight)
    k = len(weight[0][0])
    cin_g, cout_g = cin // groups, cout // groups
    out_len = (length + 2 * padding - k) // stride + 1
    out = [[0.0] * out_len for _ in range(cout)]
    for o in range(cout):
        g = o // cout_g
        for t in range(out_len):
            acc = 0.0 if bias is None else float(bias[o])
            for ci in range(cin_g):
                for j in range(k):
                    pos = t * stride - padding + j
                    if 0 <= pos < length:
                        acc += weight[o][ci][j] * x[g * cin_g + ci][pos]
            out[o][t] = acc
    return out


def matmul_naive(x, weight, bias):
    rows, out_dim, in_dim = len(x), len(weight), len(weight[0])
    return [
        [sum(x[r][i] * weight[o][i] for i in range(in_dim)) + (bias[o] if bias is not None else 0.0)
         for o in range(out_dim)]
        for r in range(rows)
    ]


def iou_naive(a, b):
    """Interval IoU from ``(start, end)`` tuples by case analysis."""
    (s1, e1), (s2, e2) = a, b
    if e1 <= s2 or e2 <= s1:
        inter = 0.0
    else:
        inter = min(e1, e2) - max(s1, s2)
    union = (e1 - s1) + (e2 - s2) - inter
    if union == 0:
        return 1.0 if (s1, e1) == (s2, e2) else 0.0
    return inter / union


def recall_naive(ious, threshold):
    count = 0
    for v in ious:
        if v >= threshold:
            count += 1
    return count / len(ious)


def _order_naive(scores):
    """Selection-sort ranking: highest score first, lowest index on ties."""
    remaining = list(range(len(scores)))
    order = []
    while remaining:
        best = remaining[0]
        for i in remaining[1:]:
            if scores[i] > scores[best]:
                best = i
        order.append(best)
        remaining.remove(best)
    return order


def average_precision_naive(scores, gt, positive_level):
    """AP as the mean of precision@k taken at every rank k that holds a positive."""
    order = _order_naive(scores)
    total = 0.0
    n_pos = 0
    for k in range(1, len(order) + 1):
        if gt[order[k - 1]] >= positive_level:
            hits_in_top_k = sum(1 for i in order[:k] if gt[i] >= positive_level)
            total += hits_in_top_k / k
            n_pos += 1
    if n_pos == 0:
        return None
    return total / n_pos


def map_naive(items, positive_level):
    aps = [average_precision_naive(s, g, positive_level) for s, g in items]
    aps = [a for a in aps if a is not None]
    return sum(aps) / len(aps)


def hit1_naive(items, positive_level):
    hits = n = 0
    for scores, gt in items:
        if not any(g >= positive_level for g in gt):
            continue
        n += 1
        if gt[_order_naive(scores)[0]] >= positive_level:
            hits += 1
    return hits / n


def saliency_level_naive(similarity):
    """Nearest grid level by exhaustive search over the nine levels; ties go to the even step."""
    s = min(1.0, max(0.0, similarity))
    best = None
    for step in range(9):
        d = abs(8 * s - step)
        if best is None or d < best[0] - 1e-15 or (math.isclose(d, best[0]) and step % 2 == 0):
            best = (d, step)
    return 1.0 + 0.5 * best[1]


def greedy_dedup_naive(order, sim, threshold):
    """Indices kept by the greedy earliest-first rule."""
    kept = []
    for i in order:
        if all(sim[i][j] < threshold for j in kept):
            kept.append(i)
    return kept
