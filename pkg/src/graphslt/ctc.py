"""Connectionist temporal classification in the log domain.

The target is interleaved with blanks (``PAD_ID``) into an extended label
sequence of length ``2L + 1``.  The forward variable ``alpha[t, s]`` sums the
probability of all path prefixes ending at extended position ``s`` at frame
``t``; the backward variable ``beta`` does the same for suffixes.  Both include
the emission at ``t``, so the gradient of ``log p`` with respect to the frame
log-probability ``lp[t, k]`` is ``sum_{s: ext[s] = k} exp(alpha + beta - lp - log p)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .alignment import PAD_ID
from .errors import ContractError
from .tensor import Tensor, _result

BLANK = PAD_ID
NEG_INF = -np.inf
# -log p is clamped here so that unreachable targets never produce infinities.
NLL_CLAMP = 1e4


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit ``target``: one per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def is_feasible(n_frames: int, target: Sequence[int]) -> bool:
    return n_frames >= min_frames(target)


def _extend(target: Sequence[int]) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """``allowed[s]``: a path may jump from ``s - 2`` straight to ``s``."""
    allowed = np.zeros(len(ext), dtype=bool)
    allowed[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return allowed


def _lae3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.logaddexp(np.logaddexp(a, b), c)


def forward_variables(log_probs: np.ndarray, target: Sequence[int]) -> np.ndarray:
    n = log_probs.shape[0]
    ext = _extend(target)
    s_len = len(ext)
    skip = _skip_allowed(ext)
    emit = log_probs[:, ext]
    alpha = np.full((n, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n):
        prev = alpha[t - 1]
        shift1 = np.concatenate(([NEG_INF], prev[:-1]))
        shift2 = np.where(skip, np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))[:s_len], NEG_INF)
        alpha[t] = _lae3(prev, shift1, shift2) + emit[t]
    return alpha


def backward_variables(log_probs: np.ndarray, target: Sequence[int]) -> np.ndarray:
    n = log_probs.shape[0]
    ext = _extend(target)
    s_len = len(ext)
    skip = _skip_allowed(ext)
    # skip_from[s]: a path may jump from s to s + 2
    skip_from = np.zeros(s_len, dtype=bool)
    skip_from[:-2] = skip[2:]
    emit = log_probs[:, ext]
    beta = np.full((n, s_len), NEG_INF)
    beta[n - 1, s_len - 1] = emit[n - 1, s_len - 1]
    if s_len > 1:
        beta[n - 1, s_len - 2] = emit[n - 1, s_len - 2]
    for t in range(n - 2, -1, -1):
        nxt = beta[t + 1]
        shift1 = np.concatenate((nxt[1:], [NEG_INF]))
        shift2 = np.where(skip_from, np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:s_len], NEG_INF)
        beta[t] = _lae3(nxt, shift1, shift2) + emit[t]
    return beta


def _final(alpha: np.ndarray) -> float:
    last = alpha[-1]
    if len(last) == 1:
        return float(last[0])
    return float(np.logaddexp(last[-1], last[-2]))


def ctc_log_prob(log_probs, target: Sequence[int]) -> float:
    """``log p(target | frames)`` summed over all blank-interleaved paths.

    ``log_probs`` is an ``N x V`` matrix of per-frame log-distributions.
    Returns ``-inf`` when the target cannot be emitted in ``N`` frames; use
    :func:`is_feasible` to test for that case explicitly.
    """
    lp = np.asarray(getattr(log_probs, "data", log_probs), dtype=np.float64)
    target = [int(t) for t in target]
    if any(t == BLANK for t in target):
        raise ContractError("CTC target must not contain the blank id")
    if lp.shape[0] == 0:
        raise ContractError("CTC needs at least one frame")
    if not is_feasible(lp.shape[0], target):
        return -math.inf
    return _final(forward_variables(lp, target))


def ctc_log_prob_and_grad(log_probs: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """``log p`` and its gradient with respect to every entry of ``log_probs``."""
    lp = np.asarray(log_probs, dtype=np.float64)
    grad = np.zeros_like(lp)
    if not is_feasible(lp.shape[0], target):
        return -math.inf, grad
    alpha = forward_variables(lp, target)
    beta = backward_variables(lp, target)
    logp = _final(alpha)
    if not np.isfinite(logp):
        return logp, grad
    ext = _extend(target)
    occupancy = np.exp(alpha + beta - lp[:, ext] - logp)
    for s, k in enumerate(ext):
        grad[:, k] += occupancy[:, s]
    return logp, grad


def ctc_log_likelihood(log_probs: Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]]) -> Tensor:
    """Differentiable per-record ``log p(target)`` for a padded ``(B, N, V)`` batch.

    Values are clamped below at ``-NLL_CLAMP``; clamped or infeasible records
    contribute zero gradient.
    """
    data = log_probs.data
    b = data.shape[0]
    values = np.empty(b)
    grad = np.zeros_like(data)
    for i in range(b):
        n = int(lengths[i])
        logp, g = ctc_log_prob_and_grad(data[i, :n], targets[i])
        if logp < -NLL_CLAMP:
            values[i] = -NLL_CLAMP
        else:
            values[i] = logp
            grad[i, :n] = g
    return _result(values, (log_probs,), lambda up: (grad * up[:, None, None],))
