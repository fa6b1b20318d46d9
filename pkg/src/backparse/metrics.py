"""Corpus BLEU, Pearson correlation and graph-size bucketing."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> list[int]:
    """``[c_len, r_len, match_1, total_1, ..., match_n, total_n]``."""
    stats = [len(candidate), len(reference)]
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        stats.append(sum(min(c, ref[g]) for g, c in cand.items()))
        stats.append(max(len(candidate) - n + 1, 0))
    return stats


def bleu_from_stats(stats: Sequence[int], max_n: int = 4) -> float:
    c, r = stats[0], stats[1]
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        match, total = stats[2 + 2 * n], stats[3 + 2 * n]
        if match == 0 or total == 0:
            return 0.0
        log_p += math.log(match / total) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100] with one reference per candidate.

    Clipped n-gram counts are pooled over the corpus, precisions combined
    with a uniform geometric mean (no smoothing) and the brevity penalty
    uses total candidate and reference lengths.
    """
    if len(candidates) != len(references):
        raise ValueError("candidate and reference counts differ")
    if not candidates:
        raise ValueError("empty corpus")
    totals = np.zeros(2 + 2 * max_n, dtype=np.int64)
    for c, r in zip(candidates, references):
        totals += bleu_stats(list(c), list(r), max_n)
    if all(list(c) == list(r) for c, r in zip(candidates, references)) and totals[0] > 0:
        return 100.0
    return bleu_from_stats(totals.tolist(), max_n)


def sentence_bleu(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Sentence BLEU with add-one smoothing on n>1 precisions.

    Unsmoothed sentence BLEU is zero for most short sentences, which would
    make per-sentence correlations meaningless.
    """
    stats = bleu_stats(list(candidate), list(reference))
    c, r = stats[0], stats[1]
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(4):
        match, total = stats[2 + 2 * n], stats[3 + 2 * n]
        if n == 0:
            if match == 0:
                return 0.0
            log_p += math.log(match / total) / 4
        else:
            log_p += math.log((match + 1) / (total + 1)) / 4
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length series of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for a zero-variance series")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def bucket_by_graph_size(
    sizes: Sequence[int],
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    edges: Sequence[int],
) -> list[dict]:
    """Corpus BLEU per graph-size bucket.

    ``edges`` ``[e0, e1, ..., ek]`` define buckets ``[e0, e1), ..., [ek, inf)``;
    sizes below ``e0`` fall into the first bucket. Empty buckets report
    ``count 0`` and ``bleu None``.
    """
    edges = list(edges)
    if edges != sorted(edges) or not edges:
        raise ValueError("bucket edges must be ascending and non-empty")
    rows = []
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        members = [
            k for k, n in enumerate(sizes)
            if (n >= lo or i == 0) and (hi is None or n < hi)
        ]
        label = f"{lo}-{hi - 1}" if hi is not None else f"{lo}+"
        score = bleu([candidates[k] for k in members], [references[k] for k in members]) if members else None
        rows.append({"bucket": label, "lo": lo, "hi": hi, "count": len(members), "bleu": score})
    return rows
