"""ROUGE-N and ROUGE-L over token-id sequences.

No stemming, no stopword removal, and ROUGE-L uses a single LCS over the
whole sequence (no sentence splitting).
"""
from __future__ import annotations

from collections import Counter
from typing import NamedTuple, Sequence


class RougeScore(NamedTuple):
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: float, hyp_total: float, ref_total: float) -> "RougeScore":
        p = overlap / hyp_total if hyp_total > 0 else 0.0
        r = overlap / ref_total if ref_total > 0 else 0.0
        return cls(p, r, f1_score(p, r))


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def ngram_counts(tokens: Sequence, n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens = tuple(tokens)
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


def rouge_n(n: int, hyp: Sequence, ref: Sequence) -> RougeScore:
    hyp_counts = ngram_counts(hyp, n)
    ref_counts = ngram_counts(ref, n)
    overlap = sum((hyp_counts & ref_counts).values())
    return RougeScore.from_counts(overlap, sum(hyp_counts.values()), sum(ref_counts.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence, ref: Sequence) -> RougeScore:
    return RougeScore.from_counts(lcs_length(hyp, ref), len(hyp), len(ref))


def macro_average(scores: Sequence[RougeScore]) -> RougeScore:
    """Mean of each component taken independently."""
    if not scores:
        raise ValueError("no documents")
    k = len(scores)
    return RougeScore(
        sum(s.precision for s in scores) / k,
        sum(s.recall for s in scores) / k,
        sum(s.f1 for s in scores) / k,
    )


def rouge_triple(hyp: Sequence, ref: Sequence) -> tuple[RougeScore, RougeScore, RougeScore]:
    return rouge_n(1, hyp, ref), rouge_n(2, hyp, ref), rouge_l(hyp, ref)


def rouge2_f1(hyp: Sequence, ref: Sequence) -> float:
    return rouge_n(2, hyp, ref).f1
