"""The joint recognition + translation model built on the graph encoder."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .alignment import best_path_decode, collapse, group_pseudo_labels
from .ctc import ctc_log_likelihood
from .encoder import EncoderBatch, EncoderConfig, GraphEncoder, OutputMode, make_encoder_batch
from .graph import MultiModalGraph, build_graph, empty_graph
from .nn import Module
from .seq2seq import (
    GlossHead,
    JointLossWeights,
    RecognitionEncoder,
    TranslationDecoder,
    beam_decode,
    greedy_decode,
    joint_loss,
    recognition_loss,
    translation_loss,
)
from .tensor import Tensor, no_grad


@dataclass
class ModelConfig:
    d_input: int = 16
    d_model: int = 64
    n_heads: int = 8
    d_ff: int = 128
    n_fusion_layers: int = 2
    n_encoder_layers: int = 3
    n_decoder_layers: int = 3
    gloss_vocab: int = 21
    word_vocab: int = 29
    dropout: float = 0.1
    output_mode: str = "visual"
    spatial_norm: bool = True
    positional_encoding: bool = True

    def __post_init__(self):
        self.output_mode = OutputMode(self.output_mode).value

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d_input=self.d_input,
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            n_fusion_layers=self.n_fusion_layers,
            gloss_vocab=self.gloss_vocab,
            dropout=self.dropout,
            output_mode=self.output_mode,
            spatial_norm=self.spatial_norm,
            positional_encoding=self.positional_encoding,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


# Parameter-name prefixes of each sub-network, used for lambda-zeroing checks.
TRANSLATION_PREFIX = "decoder."
GLOSS_HEAD_PREFIX = "gloss_head."
RECOGNITION_PREFIXES = ("encoder.", "slrt.", "gloss_head.")


class JointModel(Module):
    """Graph encoder -> SLRT -> (gloss head + CTC, SLTT decoder)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = GraphEncoder(cfg.encoder_config(), rng)
        self.slrt = RecognitionEncoder(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.n_encoder_layers, cfg.dropout, rng)
        self.gloss_head = GlossHead(cfg.d_model, cfg.gloss_vocab, rng)
        self.decoder = TranslationDecoder(
            cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.n_decoder_layers, cfg.word_vocab, cfg.dropout, rng
        )
        self.set_rng(np.random.default_rng(seed + 1))
        self.param_dict = dict(self.named_parameters())

    # -- forward pieces ----------------------------------------------------
    def memory(self, batch: EncoderBatch, mode: str | None = None) -> tuple[Tensor, np.ndarray]:
        """``z`` and its row mask for a batch."""
        rows, mask = self.encoder(batch, mode)
        return self.slrt(rows, mask), mask

    def losses(
        self,
        batch: EncoderBatch,
        gloss_targets: Sequence[Sequence[int]],
        sentences: Sequence[Sequence[int]],
        weights: JointLossWeights,
        loss_mode: str = "nll",
        mode: str | None = None,
    ) -> dict[str, Tensor | None]:
        z, mask = self.memory(batch, mode)
        loss_r = loss_t = None
        if weights.lambda_r != 0:
            log_probs = self.gloss_head(z)
            logp = ctc_log_likelihood(log_probs, mask.sum(axis=1), gloss_targets)
            loss_r = recognition_loss(logp, loss_mode).mean()
        if weights.lambda_t != 0:
            loss_t = translation_loss(self.decoder, z, mask, sentences)
        return {"recognition": loss_r, "translation": loss_t, "total": joint_loss(loss_r, loss_t, weights)}

    # -- inference -------------------------------------------------------------
    def frame_log_probs(self, batch: EncoderBatch, mode: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            z, mask = self.memory(batch, mode)
            return self.gloss_head(z).data, mask

    def pseudo_labels(self, frames: Sequence[np.ndarray]) -> list[list[int]]:
        """Best-path per-frame labels from the visual-only recognition pass (empty graphs)."""
        graphs = [empty_graph(len(f)) for f in frames]
        lp, mask = self.frame_log_probs(make_encoder_batch(frames, graphs), OutputMode.VISUAL)
        return [best_path_decode(lp[i, : int(mask[i].sum())]) for i in range(len(frames))]

    def build_graphs(self, frames: Sequence[np.ndarray]) -> list[MultiModalGraph]:
        return [build_graph(len(f), group_pseudo_labels(p)) for f, p in zip(frames, self.pseudo_labels(frames))]

    def recognize(self, batch: EncoderBatch, mode: str | None = None) -> list[list[int]]:
        lp, mask = self.frame_log_probs(batch, mode)
        return [collapse(best_path_decode(lp[i, : int(mask[i].sum())])) for i in range(lp.shape[0])]

    def translate(
        self, batch: EncoderBatch, max_len: int, beam_size: int = 1, alpha: float = 0.0,
        greedy: bool = False, mode: str | None = None,
    ) -> list[list[int]]:
        with no_grad():
            z, mask = self.memory(batch, mode)
            if greedy:
                return greedy_decode(self.decoder, z, mask, max_len)
            return [
                beam_decode(self.decoder, T.Tensor(z.data[i: i + 1]), mask[i: i + 1], beam_size, alpha, max_len)
                for i in range(z.shape[0])
            ]

    # -- bookkeeping -----------------------------------------------------------
    def recognition_stamp(self) -> str:
        """Hash of every parameter and buffer that influences pseudo-labels."""
        h = hashlib.sha256()
        for name, p in self.param_dict.items():
            if name.startswith(RECOGNITION_PREFIXES):
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data).tobytes())
        for name, buf in self.named_buffers():
            h.update(name.encode())
            h.update(np.ascontiguousarray(buf).tobytes())
        return h.hexdigest()[:16]
