"""Translation and recognition metrics: WER, corpus BLEU-1..4, ROUGE-L F1."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .errors import ContractError

Tokens = Sequence[str]


def edit_distance(reference: Sequence, hypothesis: Sequence) -> int:
    """Levenshtein distance with unit substitution, deletion and insertion costs."""
    prev = list(range(len(hypothesis) + 1))
    for i, r in enumerate(reference, 1):
        cur = [i] + [0] * len(hypothesis)
        for j, h in enumerate(hypothesis, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(reference: Sequence, hypothesis: Sequence) -> float:
    if len(reference) == 0:
        raise ContractError("WER needs a non-empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


def corpus_wer(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Total edits over total reference length."""
    if len(references) != len(hypotheses):
        raise ContractError("reference and hypothesis corpora differ in length")
    total = sum(len(r) for r in references)
    if total == 0:
        raise ContractError("WER needs a non-empty reference")
    return sum(edit_distance(r, h) for r, h in zip(references, hypotheses)) / total


def ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    references: Sequence[Tokens],
    hypotheses: Sequence[Tokens],
    max_n: int = 4,
    smooth: bool = False,
) -> list[float]:
    """Corpus BLEU-1..BLEU-max_n with one reference per hypothesis.

    BLEU-k is the brevity penalty times the geometric mean of the clipped
    n-gram precisions for n = 1..k.  With ``smooth`` every precision gets
    add-one smoothing (numerator and denominator), which keeps tiny corpora
    from collapsing to zero.
    """
    if len(references) != len(hypotheses):
        raise ContractError("reference and hypothesis corpora differ in length")
    if not references:
        raise ContractError("BLEU needs a non-empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_n + 1):
            h = ngram_counts(hyp, n)
            r = ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return [0.0] * max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    scores = []
    log_sum = 0.0
    zero = False
    for n in range(max_n):
        num, den = matches[n], totals[n]
        if smooth:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            zero = True
        else:
            log_sum += math.log(num / den)
        scores.append(0.0 if zero else bp * math.exp(log_sum / (n + 1)))
    return scores


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_f1(reference: Tokens, hypothesis: Tokens) -> float:
    if len(reference) == 0:
        raise ContractError("ROUGE-L needs a non-empty reference")
    lcs = lcs_length(reference, hypothesis)
    if lcs == 0:
        return 0.0
    p = lcs / len(hypothesis)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def corpus_rouge_l(references: Sequence[Tokens], hypotheses: Sequence[Tokens]) -> float:
    """Mean sentence-level ROUGE-L F1."""
    if not references:
        raise ContractError("ROUGE-L needs a non-empty corpus")
    return sum(rouge_l_f1(r, h) for r, h in zip(references, hypotheses)) / len(references)
