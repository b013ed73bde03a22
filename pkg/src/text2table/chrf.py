"""Character n-gram F-score between two strings.

Standard chrF: whitespace is removed, character n-grams of orders 1..6
are counted on both sides, per-order precision and recall are averaged
over the orders where the respective side has any n-grams at all, and
the two are combined with beta = 2 (recall weighted double).  Scores
are on a 0..100 scale.
"""

from __future__ import annotations

from collections import Counter

MAX_ORDER = 6
BETA = 2.0


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def _strip_whitespace(text: str) -> str:
    return "".join(text.split())


def chrf_similarity(hyp: str, ref: str) -> float:
    """chrF score of hyp against ref, in [0, 100]."""
    hyp = _strip_whitespace(hyp)
    ref = _strip_whitespace(ref)
    if not hyp and not ref:
        return 100.0
    if not hyp or not ref:
        return 0.0

    precisions = []
    recalls = []
    for n in range(1, MAX_ORDER + 1):
        hyp_grams = _char_ngrams(hyp, n)
        ref_grams = _char_ngrams(ref, n)
        overlap = sum((hyp_grams & ref_grams).values())
        if hyp_grams:
            precisions.append(overlap / sum(hyp_grams.values()))
        if ref_grams:
            recalls.append(overlap / sum(ref_grams.values()))

    # Both strings are nonempty so order 1 populated both lists.
    prec = sum(precisions) / len(precisions)
    rec = sum(recalls) / len(recalls)
    if prec == 0.0 and rec == 0.0:
        return 0.0
    beta_sq = BETA * BETA
    return 100.0 * (1.0 + beta_sq) * prec * rec / (beta_sq * prec + rec)
