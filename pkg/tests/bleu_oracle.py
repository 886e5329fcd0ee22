"""Independent reference BLEU implementation for cross-checking.

Deliberately written the long way (dict loops, per-order passes) so it
shares no structure with the library scorer beyond the scoring convention:
corpus-level modified precisions for orders 1..min(4, longest hypothesis),
geometric mean, brevity penalty, no smoothing.
"""

import math


def ngram_counts(seq, n):
    counts = {}
    for i in range(len(seq) - n + 1):
        g = tuple(seq[i : i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def reference_bleu(hypotheses, references):
    assert len(hypotheses) == len(references) and hypotheses
    hyp_total = sum(len(h) for h in hypotheses)
    ref_total = sum(len(r) for r in references)
    if hyp_total == 0:
        return 0.0
    top = 4
    longest = max(len(h) for h in hypotheses)
    if longest < top:
        top = longest

    precisions = []
    for n in range(1, top + 1):
        clipped = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hc = ngram_counts(list(hyp), n)
            rc = ngram_counts(list(ref), n)
            for gram, count in hc.items():
                total += count
                allowed = rc.get(gram, 0)
                clipped += count if count <= allowed else allowed
        if total == 0 or clipped == 0:
            return 0.0
        precisions.append(clipped / total)

    log_sum = 0.0
    for p in precisions:
        log_sum += math.log(p)
    geometric = math.exp(log_sum / top)

    if hyp_total > ref_total:
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - ref_total / hyp_total)
    return 100.0 * brevity * geometric
