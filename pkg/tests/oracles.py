"""Independent brute-force oracles shared by the unit and acceptance tests."""

import functools
import itertools

import numpy as np

from graphslt.alignment import PAD_ID


def recursive_edit_distance(a, b):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def brute_lcs(a, b):
    """Longest subsequence of ``a`` that is also a subsequence of ``b``."""
    def is_subseq(s, t):
        it = iter(t)
        return all(x in it for x in s)

    for k in range(len(a), -1, -1):
        for idx in itertools.combinations(range(len(a)), k):
            if is_subseq([a[i] for i in idx], b):
                return k
    return 0


def perturbed_corpus(rng):
    """References over a small vocabulary; hypotheses are noisy copies."""
    refs, hyps = [], []
    for _ in range(rng.integers(3, 11)):
        ref = [f"t{x}" for x in rng.integers(0, 8, size=rng.integers(4, 13))]
        hyp = []
        for tok in ref:
            r = rng.random()
            if r < 0.15:
                continue
            if r < 0.3:
                hyp.append(f"t{rng.integers(0, 8)}")
                continue
            hyp.append(tok)
            if rng.random() < 0.1:
                hyp.append(f"t{rng.integers(0, 8)}")
        refs.append(ref)
        hyps.append(hyp)
    return refs, hyps


def path_sums(probs):
    """Exhaustive oracle: probability mass of every collapsed label sequence."""
    n, v = probs.shape
    totals = {}
    for path in itertools.product(range(v), repeat=n):
        merged = [k for k, _ in itertools.groupby(path)]
        label = tuple(k for k in merged if k != 0)
        p = 1.0
        for t, k in enumerate(path):
            p *= probs[t, k]
        totals[label] = totals.get(label, 0.0) + p
    return totals


def random_log_probs(rng, n, v):
    logits = rng.normal(size=(n, v)) * 2.0
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def runs_oracle(labels):
    """Independent grouping: maximal runs of one non-PAD label via groupby."""
    groups = []
    pos = 0
    for label, run in itertools.groupby(labels):
        n = len(list(run))
        if label != PAD_ID:
            groups.append((label, tuple(range(pos, pos + n))))
        pos += n
    return groups
