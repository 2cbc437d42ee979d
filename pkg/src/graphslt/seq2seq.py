"""Recognition encoder, translation decoder, losses and decoding.

The recognition transformer (SLRT) re-encodes the fused node states into
``z``; a linear gloss head gives per-frame log-distributions scored with CTC.
The translation transformer (SLTT) is a causal decoder over target-word
embeddings with cross-attention into ``z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .ctc import NLL_CLAMP
from .errors import ContractError, VocabularyError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, positional_encoding, xavier_uniform
from .tensor import Parameter, Tensor, no_grad

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class Vocabulary:
    """Dense token <-> id mapping with reserved entries first."""

    def __init__(self, tokens: Iterable[str], reserved: Sequence[str] = (PAD,)):
        ordered = list(reserved)
        seen = set(ordered)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                ordered.append(tok)
        self.tokens = ordered
        self.reserved = tuple(reserved)
        self._index = {t: i for i, t in enumerate(ordered)}

    @classmethod
    def for_glosses(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls(sorted(set(tokens)), reserved=(PAD,))

    @classmethod
    def for_words(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls(sorted(set(tokens)), reserved=(PAD, BOS, EOS, UNK))

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens and self.reserved == other.reserved

    def id(self, token: str, strict: bool = True) -> int:
        if token in self._index:
            return self._index[token]
        if not strict and UNK in self._index:
            return self._index[UNK]
        raise VocabularyError(f"unknown token {token!r}")

    def encode(self, tokens: Iterable[str], strict: bool = True) -> list[int]:
        return [self.id(t, strict) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= int(i) < len(self.tokens):
                raise VocabularyError(f"id {i} outside vocabulary of size {len(self.tokens)}")
            out.append(self.tokens[int(i)])
        return out

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "reserved": list(self.reserved)}

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        reserved = obj["reserved"]
        return cls(obj["tokens"][len(reserved):], reserved=reserved)


@dataclass(frozen=True)
class JointLossWeights:
    lambda_r: float = 5.0
    lambda_t: float = 1.0

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_t < 0:
            raise ContractError("loss weights must be non-negative")
        if self.lambda_r == 0 and self.lambda_t == 0:
            raise ContractError("at least one loss weight must be non-zero")


@dataclass
class BeamHypothesis:
    tokens: list[int]
    log_prob: float
    finished: bool = False


class EncoderLayer(Module):
    """Post-norm transformer encoder layer."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.rate = dropout
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = self.norm1(x + self.drop(self.attn(x, x, mask), self.rate))
        return self.norm2(x + self.ffn(x))


class RecognitionEncoder(Module):
    """SLRT: a stack of encoder layers; ``z = SLRT(multi-modal embeddings)``."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, n_layers: int, dropout: float, rng):
        super().__init__()
        self.layers = [EncoderLayer(d_model, n_heads, d_ff, dropout, rng) for _ in range(n_layers)]

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if x.shape[1] == 0:
            raise ContractError("SLRT needs at least one input row")
        for layer in self.layers:
            x = layer(x, mask)
        return x


class GlossHead(Module):
    def __init__(self, d_model: int, gloss_vocab: int, rng):
        super().__init__()
        self.proj = Linear(d_model, gloss_vocab, rng)

    def __call__(self, z: Tensor) -> Tensor:
        """Per-row gloss log-distributions (rows log-sum-exp to 0)."""
        return T.log_softmax(self.proj(z), axis=-1)


class DecoderLayer(Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float, rng):
        super().__init__()
        self.rate = dropout
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm3 = LayerNorm(d_model)

    def __call__(self, y: Tensor, memory: Tensor, memory_mask: np.ndarray) -> Tensor:
        y = self.norm1(y + self.drop(self.self_attn(y, y, None, causal=True), self.rate))
        y = self.norm2(y + self.drop(self.cross_attn(y, memory, memory_mask), self.rate))
        return self.norm3(y + self.ffn(y))


class TranslationDecoder(Module):
    """SLTT: causal decoder over word embeddings attending to ``z``."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, n_layers: int, word_vocab: int, dropout: float, rng):
        super().__init__()
        self.rate = dropout
        self.d_model = d_model
        self.embedding = Parameter(xavier_uniform(rng, word_vocab, d_model))
        self.layers = [DecoderLayer(d_model, n_heads, d_ff, dropout, rng) for _ in range(n_layers)]
        self.out = Linear(d_model, word_vocab, rng)

    def __call__(self, prefix_ids: np.ndarray, memory: Tensor, memory_mask: np.ndarray) -> Tensor:
        """Log-distributions ``(B, U, V)`` over the next word after each prefix position."""
        prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
        y = T.embedding_lookup(self.embedding, prefix_ids)
        y = y + positional_encoding(prefix_ids.shape[1], self.d_model)
        y = self.drop(y, self.rate)
        for layer in self.layers:
            y = layer(y, memory, memory_mask)
        return T.log_softmax(self.out(y), axis=-1)


# -- losses --------------------------------------------------------------------
def recognition_loss(log_p, mode: str = "nll"):
    """``1 - p`` in ``prob`` mode, clamped ``-log p`` in ``nll`` mode.

    Accepts a float or a :class:`Tensor` of per-record log-probabilities.
    """
    if mode not in ("prob", "nll"):
        raise ContractError(f"unknown recognition loss mode {mode!r}")
    if isinstance(log_p, Tensor):
        if mode == "prob":
            return 1.0 - T.exp(log_p)
        return -log_p
    log_p = float(log_p)
    if mode == "prob":
        return 1.0 - math.exp(log_p)
    return min(-log_p, NLL_CLAMP)


def joint_loss(loss_r, loss_t, weights: JointLossWeights):
    """``lambda_R * L_R + lambda_T * L_T``; a zero weight drops its term entirely."""
    terms = []
    if weights.lambda_r != 0:
        terms.append(loss_r * weights.lambda_r)
    if weights.lambda_t != 0:
        terms.append(loss_t * weights.lambda_t)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def teacher_forcing_arrays(sentences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decoder inputs (BOS-shifted), targets and mask for EOS-terminated id sentences."""
    for s in sentences:
        if len(s) == 0:
            raise ContractError("cannot score an empty sentence")
        if s[-1] != EOS_ID:
            raise ContractError("target sentence must end with EOS")
    u_max = max(len(s) for s in sentences)
    inputs = np.full((len(sentences), u_max), PAD_ID, dtype=np.int64)
    targets = np.full((len(sentences), u_max), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sentences), u_max), dtype=bool)
    for i, s in enumerate(sentences):
        inputs[i, 0] = BOS_ID
        inputs[i, 1: len(s)] = s[:-1]
        targets[i, : len(s)] = s
        mask[i, : len(s)] = True
    return inputs, targets, mask


def token_log_probs(decoder: TranslationDecoder, z: Tensor, z_mask: np.ndarray,
                    sentences: Sequence[Sequence[int]]) -> tuple[Tensor, np.ndarray]:
    """Teacher-forced ``log p(w_u | h_u)`` as a ``(B, U)`` tensor plus its validity mask."""
    inputs, targets, mask = teacher_forcing_arrays(sentences)
    logp = decoder(inputs, z, z_mask)
    b, u = targets.shape
    picked = logp[np.arange(b)[:, None], np.arange(u)[None, :], targets]
    return picked * mask, mask


def translation_log_prob(decoder: TranslationDecoder, z: Tensor, z_mask: np.ndarray,
                         sentence: Sequence[int]) -> float:
    """Sum of teacher-forced token log-probabilities of one sentence given ``z`` (1, K, d)."""
    with no_grad():
        picked, _ = token_log_probs(decoder, z, z_mask, [sentence])
    return float(picked.data.sum())


def translation_loss(decoder: TranslationDecoder, z: Tensor, z_mask: np.ndarray,
                     sentences: Sequence[Sequence[int]]) -> Tensor:
    """Per-token mean negative log-likelihood over the batch."""
    picked, mask = token_log_probs(decoder, z, z_mask, sentences)
    return picked.sum() * (-1.0 / mask.sum())


def sltt_step(decoder: TranslationDecoder, prefix: Sequence[int], z: Tensor, z_mask: np.ndarray) -> np.ndarray:
    """Next-token log-distribution after ``prefix`` (which starts with BOS)."""
    if not prefix or prefix[0] != BOS_ID:
        raise ContractError("decoder prefix must start with BOS")
    with no_grad():
        logp = decoder(np.asarray([prefix]), z, z_mask)
    return logp.data[0, -1]


# -- decoding ------------------------------------------------------------------
def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def greedy_decode(decoder: TranslationDecoder, z: Tensor, z_mask: np.ndarray, max_len: int) -> list[list[int]]:
    """Argmax decoding for every record of a batch; EOS is not included in the output."""
    if max_len < 1:
        raise ContractError("max_len must be at least 1")
    b = z.shape[0]
    prefix = np.full((b, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(b)]
    with no_grad():
        for _ in range(max_len):
            logp = decoder(prefix, z, z_mask).data[:, -1]
            nxt = np.argmax(logp, axis=-1)
            for i in range(b):
                if not done[i]:
                    if nxt[i] == EOS_ID:
                        done[i] = True
                    else:
                        outputs[i].append(int(nxt[i]))
            if done.all():
                break
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return outputs


def beam_search(decoder: TranslationDecoder, z: Tensor, z_mask: np.ndarray, beam_size: int,
                alpha: float, max_len: int) -> list[BeamHypothesis]:
    """Length-normalized beam search for one record (``z`` of shape (1, K, d)).

    Returns at most ``beam_size`` finished hypotheses (or the surviving beam if
    none finished) sorted best first by ``log_prob / lp(len)``, where ``len``
    counts emitted tokens including EOS.  The search stops once no alive
    hypothesis can still outscore the best finished one: log-probabilities
    only decrease, so ``log_prob / lp(max_len)`` bounds any continuation.
    """
    if beam_size < 1:
        raise ContractError("beam_size must be at least 1")
    if not 0.0 <= alpha <= 2.0:
        raise ContractError("alpha must lie in [0, 2]")
    if max_len < 1:
        raise ContractError("max_len must be at least 1")
    alive = [BeamHypothesis([BOS_ID], 0.0)]
    finished: list[BeamHypothesis] = []
    with no_grad():
        for _ in range(max_len):
            prefix = np.asarray([h.tokens for h in alive], dtype=np.int64)
            k = len(alive)
            memory = z if k == 1 else T.Tensor(np.repeat(z.data, k, axis=0))
            mask = np.repeat(z_mask, k, axis=0)
            logp = decoder(prefix, memory, mask).data[:, -1]
            totals = np.array([h.log_prob for h in alive])[:, None] + logp
            flat = totals.ravel()
            order = np.argsort(-flat, kind="stable")
            vocab = logp.shape[1]
            new_alive = []
            for idx in order:
                if len(new_alive) >= beam_size:
                    break
                src, tok = divmod(int(idx), vocab)
                hyp = BeamHypothesis(alive[src].tokens + [tok], float(flat[idx]))
                if tok == EOS_ID:
                    hyp.finished = True
                    finished.append(hyp)
                else:
                    new_alive.append(hyp)
            alive = new_alive
            if not alive:
                break
            if finished:
                best = max(_normalized(h, alpha) for h in finished)
                if best >= alive[0].log_prob / length_penalty(max_len, alpha):
                    break
    pool = finished or alive
    return sorted(pool, key=lambda h: -_normalized(h, alpha))[:beam_size]


def _normalized(hyp: BeamHypothesis, alpha: float) -> float:
    return hyp.log_prob / length_penalty(len(hyp.tokens) - 1, alpha)


def beam_decode(decoder: TranslationDecoder, z: Tensor, z_mask: np.ndarray, beam_size: int,
                alpha: float, max_len: int) -> list[int]:
    best = beam_search(decoder, z, z_mask, beam_size, alpha, max_len)[0]
    tokens = best.tokens[1:]
    return tokens[:-1] if tokens and tokens[-1] == EOS_ID else tokens
