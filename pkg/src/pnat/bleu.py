"""Corpus-level BLEU-4 with brevity penalty and no smoothing.

One convention worth spelling out: toy sentences are often shorter than
four tokens, so the top n-gram order is clamped to the longest hypothesis
length (never above 4). With the clamp, a three-token corpus is scored on
orders 1..3 instead of degenerating to a 0/0 four-gram precision.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .errors import DataError


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence],
                max_order: int = 4) -> float:
    """BLEU in [0, 100] for one hypothesis per reference."""
    if len(hypotheses) != len(references):
        raise DataError("hypothesis/reference counts differ")
    if len(hypotheses) == 0:
        raise DataError("empty hypothesis set")
    hyps = [list(h) for h in hypotheses]
    refs = [list(r) for r in references]

    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    if hyp_len == 0:
        return 0.0
    order = min(max_order, max(len(h) for h in hyps))

    matches = [0] * order
    totals = [0] * order
    for h, r in zip(hyps, refs):
        for n in range(1, order + 1):
            if len(h) < n:
                continue
            hg = _ngrams(h, n)
            rg = _ngrams(r, n)
            totals[n - 1] += sum(hg.values())
            matches[n - 1] += sum(min(c, rg[g]) for g, c in hg.items())

    log_precisions = []
    for m, t in zip(matches, totals):
        if m == 0 or t == 0:
            return 0.0
        log_precisions.append(math.log(m / t))
    geo_mean = math.exp(sum(log_precisions) / order)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo_mean
