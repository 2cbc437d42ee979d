"""Small models and batches shared by several test modules."""

from graphslt.alignment import group_pseudo_labels
from graphslt.encoder import make_encoder_batch
from graphslt.graph import build_graph
from graphslt.model import JointModel, ModelConfig
from graphslt.seq2seq import EOS_ID


def tiny_config(**kw):
    base = dict(
        d_input=4, d_model=8, n_heads=2, d_ff=12, n_fusion_layers=2,
        n_encoder_layers=1, n_decoder_layers=1, gloss_vocab=5, word_vocab=9, dropout=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed=0, **kw):
    return JointModel(tiny_config(**kw), seed=seed).eval()


def tiny_batch(rng, labels_list, d_input=4):
    frames = [rng.normal(size=(len(p), d_input)) for p in labels_list]
    graphs = [build_graph(len(p), group_pseudo_labels(p)) for p in labels_list]
    return frames, make_encoder_batch(frames, graphs)


def random_sentence(rng, vocab, length):
    return [int(w) for w in rng.integers(4, vocab, size=length)] + [EOS_ID]
