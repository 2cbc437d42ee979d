"""Multi-modal graph encoder.

Frames are embedded by a learned projector (affine, batch norm, ReLU) and
glosses by a lookup table; both receive sinusoidal position encodings of
their own ordinal positions.  Each fusion layer then

1. runs self-attention inside each modality (context ``C``),
2. gates context across inter-modal edges (``M``): for an edge between
   textual node i and visual node j, ``alpha = sigmoid(C_x[i] W1 + C_o[j] W2)``
   elementwise and ``M_x[i] += alpha * C_o[j]``; the visual side is symmetric
   with its own weight pair,
3. updates states with ``LN(mid + FFN(mid))`` where ``mid = LN(H + C + M)``.

All inputs are padded batches ``(B, K, d)`` with boolean row masks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .graph import MultiModalGraph
from .nn import BatchNorm, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, positional_encoding, xavier_uniform
from .tensor import Parameter, Tensor


class OutputMode(str, enum.Enum):
    VISUAL = "visual"
    TEXTUAL = "textual"
    CONCAT = "concat"


@dataclass
class EncoderConfig:
    d_input: int = 16
    d_model: int = 64
    n_heads: int = 8
    d_ff: int = 128
    n_fusion_layers: int = 2
    gloss_vocab: int = 21
    dropout: float = 0.1
    output_mode: OutputMode = OutputMode.VISUAL
    spatial_norm: bool = True
    positional_encoding: bool = True

    def __post_init__(self):
        self.output_mode = OutputMode(self.output_mode)
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")
        if self.n_fusion_layers < 1:
            raise ContractError("at least one fusion layer is required")


@dataclass
class EncoderBatch:
    """Padded encoder input for B records."""

    frames: np.ndarray  # (B, N, d_in)
    frame_mask: np.ndarray  # (B, N) bool
    glosses: np.ndarray  # (B, T) int, 0 in padding
    gloss_mask: np.ndarray  # (B, T) bool
    edges: np.ndarray  # (E, 3) rows of (batch, textual, visual)

    @property
    def n_frames(self) -> np.ndarray:
        return self.frame_mask.sum(axis=1)

    @property
    def n_textual(self) -> np.ndarray:
        return self.gloss_mask.sum(axis=1)


def make_encoder_batch(frames: Sequence[np.ndarray], graphs: Sequence[MultiModalGraph]) -> EncoderBatch:
    if len(frames) != len(graphs):
        raise DimensionError(f"{len(frames)} frame sequences but {len(graphs)} graphs")
    b = len(frames)
    d_in = np.asarray(frames[0]).shape[1]
    n_max = max(len(f) for f in frames)
    t_max = max(g.num_textual for g in graphs)
    x = np.zeros((b, n_max, d_in))
    fmask = np.zeros((b, n_max), dtype=bool)
    gl = np.zeros((b, t_max), dtype=np.int64)
    gmask = np.zeros((b, t_max), dtype=bool)
    edges = []
    for i, (f, g) in enumerate(zip(frames, graphs)):
        f = np.asarray(f, dtype=np.float64)
        if f.shape[1] != d_in:
            raise DimensionError(f"record {i}: frame width {f.shape[1]} != {d_in}")
        if g.num_visual != len(f):
            raise DimensionError(f"record {i}: graph has {g.num_visual} visual nodes for {len(f)} frames")
        x[i, : len(f)] = f
        fmask[i, : len(f)] = True
        gl[i, : g.num_textual] = g.textual_glosses
        gmask[i, : g.num_textual] = True
        edges.extend((i, t, v) for t, v in g.inter_edges)
    edge_arr = np.array(edges, dtype=np.int64).reshape(-1, 3)
    return EncoderBatch(x, fmask, gl, gmask, edge_arr)


@dataclass
class NodeStates:
    h_x: Tensor | None
    h_o: Tensor
    history: list[dict] = field(default_factory=list)


class SpatialEmbedding(Module):
    """Learned frame projector: affine map, optional batch norm, ReLU."""

    def __init__(self, d_in: int, d_model: int, rng: np.random.Generator, norm: bool = True):
        super().__init__()
        self.d_in = d_in
        # batch norm removes any constant offset, so the projection needs no bias
        self.proj = Linear(d_in, d_model, rng, bias=not norm)
        self.norm = BatchNorm(d_model) if norm else None

    def __call__(self, frames: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if frames.shape[-1] != self.d_in:
            raise DimensionError(f"frame width {frames.shape[-1]} != configured {self.d_in}")
        h = self.proj(frames)
        if self.norm is not None:
            h = self.norm(h, mask)
        return T.relu(h)


class WordEmbedding(Module):
    def __init__(self, vocab: int, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.table = Parameter(xavier_uniform(rng, vocab, d_model))

    def __call__(self, ids) -> Tensor:
        return T.embedding_lookup(self.table, ids)


def add_positional_encoding(x: Tensor) -> Tensor:
    """Add the sinusoidal table for positions ``0..K-1`` along axis -2."""
    k, d = x.shape[-2], x.shape[-1]
    return x + positional_encoding(k, d)


def gated_messages(
    target: Tensor,
    source: Tensor,
    target_rows: np.ndarray,
    source_rows: np.ndarray,
    w_target: Tensor,
    w_source: Tensor,
) -> Tensor:
    """Sum over edges of ``sigmoid(target W_t + source W_s) * source`` into target rows.

    ``target`` and ``source`` are flattened ``(rows, d)`` context matrices;
    edge e joins ``target_rows[e]`` with ``source_rows[e]``.
    """
    n_rows, d = target.shape
    if len(target_rows) == 0:
        return Tensor(np.zeros((n_rows, d)))
    t_proj = T.matmul(target, w_target)[target_rows]
    s_proj = T.matmul(source, w_source)[source_rows]
    gate = T.sigmoid(t_proj + s_proj)
    return T.scatter_rows(gate * source[source_rows], target_rows, n_rows)


def cross_modal_gated_fusion(
    c_x: Tensor | None,
    c_o: Tensor,
    edges: np.ndarray,
    gate_x: tuple[Tensor, Tensor],
    gate_o: tuple[Tensor, Tensor],
) -> tuple[Tensor | None, Tensor]:
    """Return ``(M_x, M_o)`` for padded contexts ``(B, T, d)`` and ``(B, N, d)``.

    Nodes without inter-modal neighbours receive a zero message.
    """
    b, n, d = c_o.shape
    if c_x is None or c_x.shape[1] == 0:
        return None, Tensor(np.zeros((b, n, d)))
    t = c_x.shape[1]
    if c_x.shape[2] != d or c_x.shape[0] != b:
        raise DimensionError(f"context shapes disagree: {c_x.shape} vs {c_o.shape}")
    flat_x = c_x.reshape(b * t, d)
    flat_o = c_o.reshape(b * n, d)
    x_rows = edges[:, 0] * t + edges[:, 1]
    o_rows = edges[:, 0] * n + edges[:, 2]
    m_x = gated_messages(flat_x, flat_o, x_rows, o_rows, *gate_x)
    m_o = gated_messages(flat_o, flat_x, o_rows, x_rows, *gate_o)
    return m_x.reshape(b, t, d), m_o.reshape(b, n, d)


class FusionLayer(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.d_model
        self.rate = cfg.dropout
        self.attn_x = MultiHeadAttention(d, cfg.n_heads, rng)
        self.attn_o = MultiHeadAttention(d, cfg.n_heads, rng)
        # (W1, W2) per direction; weights act on row vectors.
        self.gate_x_w1 = Parameter(xavier_uniform(rng, d, d))
        self.gate_x_w2 = Parameter(xavier_uniform(rng, d, d))
        self.gate_o_w1 = Parameter(xavier_uniform(rng, d, d))
        self.gate_o_w2 = Parameter(xavier_uniform(rng, d, d))
        self.norm1_x = LayerNorm(d)
        self.norm2_x = LayerNorm(d)
        self.norm1_o = LayerNorm(d)
        self.norm2_o = LayerNorm(d)
        self.ffn_x = FeedForward(d, cfg.d_ff, rng)
        self.ffn_o = FeedForward(d, cfg.d_ff, rng)

    def _update(self, h, c, m, norm1, ffn, norm2):
        mid = h + self.drop(c, self.rate)
        if m is not None:
            mid = mid + m
        mid = norm1(mid)
        return norm2(mid + ffn(mid))

    def __call__(self, h_x, h_o, batch: EncoderBatch, trace: dict | None = None):
        c_o = self.attn_o(h_o, h_o, batch.frame_mask)
        c_x = self.attn_x(h_x, h_x, batch.gloss_mask) if h_x is not None else None
        m_x, m_o = cross_modal_gated_fusion(
            c_x, c_o, batch.edges, (self.gate_x_w1, self.gate_x_w2), (self.gate_o_w1, self.gate_o_w2)
        )
        if trace is not None:
            trace.update(c_x=c_x, c_o=c_o, m_x=m_x, m_o=m_o, attn_o=self.attn_o.last_weights,
                         attn_x=self.attn_x.last_weights if h_x is not None else None)
        new_o = self._update(h_o, c_o, m_o, self.norm1_o, self.ffn_o, self.norm2_o)
        new_x = self._update(h_x, c_x, m_x, self.norm1_x, self.ffn_x, self.norm2_x) if h_x is not None else None
        return new_x, new_o


class GraphEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.spatial = SpatialEmbedding(cfg.d_input, cfg.d_model, rng, cfg.spatial_norm)
        self.words = WordEmbedding(cfg.gloss_vocab, cfg.d_model, rng)
        self.layers = [FusionLayer(cfg, rng) for _ in range(cfg.n_fusion_layers)]
        self.last_states: NodeStates | None = None

    def embed(self, batch: EncoderBatch) -> tuple[Tensor | None, Tensor]:
        o = self.spatial(Tensor(batch.frames), batch.frame_mask)
        if self.cfg.positional_encoding:
            o = add_positional_encoding(o)
        o = self.drop(o, self.cfg.dropout)
        if batch.glosses.shape[1] == 0:
            return None, o
        x = self.words(batch.glosses)
        if self.cfg.positional_encoding:
            x = add_positional_encoding(x)
        return self.drop(x, self.cfg.dropout), o

    def node_states(self, batch: EncoderBatch, trace: bool = False) -> NodeStates:
        h_x, h_o = self.embed(batch)
        states = NodeStates(h_x, h_o)
        for layer in self.layers:
            record = {} if trace else None
            h_x, h_o = layer(h_x, h_o, batch, record)
            if trace:
                states.history.append(record)
        states.h_x, states.h_o = h_x, h_o
        self.last_states = states
        return states

    def __call__(self, batch: EncoderBatch, mode: OutputMode | str | None = None) -> tuple[Tensor, np.ndarray]:
        """Encode and select output rows; returns ``(rows (B, K, d), mask (B, K))``."""
        mode = OutputMode(mode or self.cfg.output_mode)
        if mode is OutputMode.TEXTUAL and (batch.n_textual == 0).any():
            raise ContractError("no textual nodes: TEXTUAL output mode needs at least one pseudo-gloss per record")
        states = self.node_states(batch)
        if mode is OutputMode.VISUAL:
            return states.h_o, batch.frame_mask
        if mode is OutputMode.TEXTUAL:
            return states.h_x, batch.gloss_mask
        return concat_rows(states.h_o, batch.frame_mask, states.h_x, batch.gloss_mask)


def concat_rows(h_o: Tensor, o_mask: np.ndarray, h_x: Tensor | None, x_mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Per record, visual rows followed by textual rows, left-aligned and re-padded."""
    if h_x is None:
        return h_o, o_mask
    b, n_max, d = h_o.shape
    t_max = h_x.shape[1]
    n = o_mask.sum(axis=1)
    t = x_mask.sum(axis=1)
    k_max = int((n + t).max())
    stacked = T.concat([h_o, h_x], axis=1).reshape(b * (n_max + t_max), d)
    index = np.zeros((b, k_max), dtype=np.int64)
    mask = np.zeros((b, k_max), dtype=bool)
    for i in range(b):
        base = i * (n_max + t_max)
        rows = list(range(base, base + n[i])) + list(range(base + n_max, base + n_max + t[i]))
        index[i, : len(rows)] = rows
        index[i, len(rows):] = base
        mask[i, : len(rows)] = True
    return stacked[index], mask
