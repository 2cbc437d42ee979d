"""Finite-difference check of every parameter of a small joint model."""

from __future__ import annotations

import numpy as np

from .alignment import group_pseudo_labels
from .encoder import make_encoder_batch
from .graph import build_graph
from .model import JointModel, ModelConfig
from .seq2seq import EOS_ID, JointLossWeights
from .tensor import check_gradients

TOLERANCE = 1e-4


def gradcheck_config(**overrides) -> ModelConfig:
    base = dict(
        d_input=4, d_model=8, n_heads=2, d_ff=16, n_fusion_layers=2,
        n_encoder_layers=1, n_decoder_layers=1, gloss_vocab=4, word_vocab=8, dropout=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def full_model_gradcheck(seed: int = 0, step: float = 1e-5, loss_mode: str = "nll", **overrides) -> dict[str, float]:
    """Relative error per parameter for the joint loss on one record.

    The record has 5 frames, a 3-gloss reference and a 4-word target; its graph
    comes from a fixed pseudo-label sequence so both fusion directions carry
    messages.  Dropout is off and batch norm uses batch statistics.
    """
    cfg = gradcheck_config(**overrides)
    rng = np.random.default_rng(seed)
    model = JointModel(cfg, seed=seed)
    frames = rng.normal(size=(5, cfg.d_input))
    labels = [1, 1, 0, 2, 3]
    batch = make_encoder_batch([frames], [build_graph(5, group_pseudo_labels(labels))])
    glosses = [[1, 2, 3]]
    sentence = [[int(w) for w in rng.integers(4, cfg.word_vocab, size=4)] + [EOS_ID]]
    weights = JointLossWeights(5.0, 1.0)

    def loss():
        return model.losses(batch, glosses, sentence, weights, loss_mode)["total"]

    return check_gradients(loss, model.parameters(), step)
