"""Training and evaluation orchestration.

The schedule has two phases.  Recognition pretraining fits the spatial
embedding, fusion stack (with empty graphs), SLRT and gloss head under CTC
alone.  Graph initialization then runs that visual-only recognition pass on
every training record, groups the best-path labels and builds one graph per
record.  Joint training optimizes the weighted recognition + translation loss
and, whenever dev WER improves on the WER that produced the current graphs by
at least ``realign_epsilon`` points, rebuilds every training graph from the
current parameters.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .alignment import align_consistency_check, collapse, group_pseudo_labels
from .checkpoint import load_state, model_state
from .corpus import CorpusRecord
from .encoder import OutputMode, make_encoder_batch
from .errors import ConfigError, ContractError, TrainingError
from .graph import MultiModalGraph, empty_graph
from .metrics import bleu, corpus_rouge_l, corpus_wer
from .model import JointModel
from .optim import Adam
from .seq2seq import EOS_ID, JointLossWeights, Vocabulary

log = logging.getLogger(__name__)

METRIC_FIELDS = ("wer", "bleu1", "bleu2", "bleu3", "bleu4", "rougeL")
PROTOCOLS = ("sign2gloss", "sign2text", "gsign2gloss_text")
UNSEEN_GLOSS = -1


@dataclass
class TrainingConfig:
    lambda_r: float = 5.0
    lambda_t: float = 1.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.998
    weight_decay: float = 1e-3
    batch_size: int = 16
    dropout: float = 0.1
    max_steps: int = 2000
    pretrain_steps: int = 300
    eval_every: int = 200
    realign_epsilon: float = 0.5  # absolute WER points
    max_realignments: int | None = None
    loss_mode: str = "nll"
    max_decode_len: int = 20
    beam_size: int = 4
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be positive and batch_size at least 1")
        if self.loss_mode not in ("nll", "prob"):
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        if isinstance(self.realign_epsilon, str):
            self.realign_epsilon = float(self.realign_epsilon)

    @property
    def weights(self) -> JointLossWeights:
        return JointLossWeights(self.lambda_r, self.lambda_t)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(d["realign_epsilon"]):
            d["realign_epsilon"] = "inf"
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainingConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


@dataclass
class EncodedCorpus:
    """Records with glosses and sentences mapped to ids (sentences end with EOS).

    With ``strict=False`` (evaluation splits) a gloss missing from the
    vocabulary becomes ``UNSEEN_GLOSS``, which no hypothesis can match;
    unknown words always map to UNK.
    """

    records: list[CorpusRecord]
    glosses: list[list[int]]
    sentences: list[list[int]]

    @classmethod
    def build(cls, records: Sequence[CorpusRecord], gloss_vocab: Vocabulary, word_vocab: Vocabulary,
              strict: bool = True):
        if strict:
            glosses = [gloss_vocab.encode(r.gloss) for r in records]
        else:
            known = set(gloss_vocab.tokens)
            glosses = [[gloss_vocab.id(g) if g in known else UNSEEN_GLOSS for g in r.gloss] for r in records]
        sentences = [word_vocab.encode(r.text, strict=False) + [EOS_ID] for r in records]
        return cls(list(records), glosses, sentences)

    @property
    def frames(self) -> list[np.ndarray]:
        return [r.frames for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class GraphCache:
    graphs: list[MultiModalGraph]
    stamp: str
    version: int = 0


@dataclass
class TrainingHistory:
    steps: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    realignments: list[dict] = field(default_factory=list)
    best_step: int = -1
    best_metrics: dict = field(default_factory=dict)
    best_state: dict | None = None
    final_step: int = 0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "evals": self.evals,
            "realignments": self.realignments,
            "best_step": self.best_step,
            "best_metrics": self.best_metrics,
            "final_step": self.final_step,
        }


def batch_schedule(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; each epoch is a fresh permutation."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start: start + batch_size]


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield list(range(start, min(n, start + size)))


def _train_step(model, optimizer, data: EncodedCorpus, graphs, idx, weights, loss_mode, mode, step) -> dict:
    batch = make_encoder_batch([data.records[i].frames for i in idx], [graphs[i] for i in idx])
    optimizer.zero_grad()
    losses = model.losses(
        batch, [data.glosses[i] for i in idx], [data.sentences[i] for i in idx], weights, loss_mode, mode
    )
    total = losses["total"]
    if not np.isfinite(total.item()):
        ids = [data.records[i].id for i in idx]
        log.error("[step %06d] non-finite loss on batch %s", step, ids)
        raise TrainingError(f"loss became {total.item()} at step {step} (batch {ids})", step=step, batch_id=",".join(ids))
    total.backward()
    optimizer.step()
    return {k: (None if v is None else v.item()) for k, v in losses.items()}


def make_optimizer(model: JointModel, cfg: TrainingConfig) -> Adam:
    return Adam(model.parameters(), cfg.learning_rate, (cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)


def recognition_wer(model: JointModel, data: EncodedCorpus, graphs: Sequence[MultiModalGraph] | None = None,
                    batch_size: int = 32, mode: str | None = None) -> float:
    """Corpus WER of best-path + collapse recognition (graphs default to empty)."""
    model.eval()
    hyps = []
    for idx in _chunks(len(data), batch_size):
        frames = [data.records[i].frames for i in idx]
        gs = [graphs[i] for i in idx] if graphs is not None else [empty_graph(len(f)) for f in frames]
        hyps.extend(model.recognize(make_encoder_batch(frames, gs), mode or OutputMode.VISUAL))
    model.train()
    return corpus_wer(data.glosses, hyps)


def pretrain_recognition(model: JointModel, train: EncodedCorpus, dev: EncodedCorpus | None,
                         cfg: TrainingConfig, steps: int | None = None) -> tuple[float, list[dict]]:
    """Fit the recognition path alone on visual-only (empty) graphs.

    Returns the dev WER (training WER without a dev split) and per-step losses.
    """
    if len(train) == 0:
        raise ContractError("cannot pretrain on an empty corpus")
    steps = cfg.pretrain_steps if steps is None else steps
    weights = JointLossWeights(cfg.lambda_r or 1.0, 0.0)
    rng = np.random.default_rng(cfg.seed)
    model.set_rng(np.random.default_rng(cfg.seed + 1))
    optimizer = make_optimizer(model, cfg)
    graphs = [empty_graph(len(r.frames)) for r in train.records]
    schedule = batch_schedule(len(train), cfg.batch_size, rng)
    model.train()
    history = []
    for step in range(1, steps + 1):
        losses = _train_step(model, optimizer, train, graphs, next(schedule), weights, cfg.loss_mode,
                             OutputMode.VISUAL, step)
        history.append({"step": step, **losses})
        if step % 50 == 0:
            log.info("[pretrain %06d] recognition=%.4f", step, losses["recognition"])
    wer = recognition_wer(model, dev if dev is not None and len(dev) else train)
    log.info("[pretrain %06d] dev_wer=%.4f", steps, wer)
    return wer, history


def initialize_graphs(model: JointModel, data: EncodedCorpus, batch_size: int = 32, version: int = 0) -> GraphCache:
    """Pseudo-label every record with the current recognizer and build its graph."""
    model.eval()
    graphs = []
    for idx in _chunks(len(data), batch_size):
        graphs.extend(model.build_graphs([data.records[i].frames for i in idx]))
    model.train()
    return GraphCache(graphs, model.recognition_stamp(), version)


def graph_invariant_sweep(model: JointModel, data: EncodedCorpus, cache: GraphCache, batch_size: int = 32) -> list[str]:
    """Check every cached graph against the current best path; returns problems found."""
    problems = []
    model.eval()
    labels = []
    for idx in _chunks(len(data), batch_size):
        labels.extend(model.pseudo_labels([data.records[i].frames for i in idx]))
    model.train()
    for rec, graph, p in zip(data.records, cache.graphs, labels):
        for issue in graph.check_invariants():
            problems.append(f"{rec.id}: {issue}")
        if not align_consistency_check(group_pseudo_labels(p), p):
            problems.append(f"{rec.id}: alignment table inconsistent")
        if list(graph.textual_glosses) != collapse(p):
            problems.append(f"{rec.id}: graph glosses differ from collapsed best path")
        if graph.num_visual != len(rec.frames):
            problems.append(f"{rec.id}: visual node count != frame count")
    return problems


def evaluate(
    model: JointModel,
    data: EncodedCorpus,
    gloss_vocab: Vocabulary,
    word_vocab: Vocabulary,
    protocol: str = "gsign2gloss_text",
    beam_size: int = 1,
    alpha: float = 0.0,
    max_len: int = 20,
    greedy: bool = False,
    mode: str | None = None,
    training_config: dict | None = None,
) -> dict:
    """Metric report for a corpus; graphs are re-derived from the model's own pseudo-labels.

    In textual output mode a record whose pseudo-labels are all PAD cannot be
    encoded; it is scored with empty hypotheses and counted in a warning.

    ``training_config`` (from a checkpoint) is checked against the protocol:
    a model trained without translation cannot be scored on text, and vice
    versa.  Inapplicable metrics are reported as ``None``.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    want_gloss = protocol in ("sign2gloss", "gsign2gloss_text")
    want_text = protocol in ("sign2text", "gsign2gloss_text")
    if training_config:
        if want_gloss and training_config.get("lambda_r", 1.0) == 0:
            raise ConfigError(f"protocol {protocol} needs recognition, but the checkpoint was trained with lambda_R=0")
        if want_text and training_config.get("lambda_t", 1.0) == 0:
            raise ConfigError(f"protocol {protocol} needs translation, but the checkpoint was trained with lambda_T=0")
    if len(data) == 0:
        raise ContractError("cannot evaluate an empty corpus")
    model.eval()
    textual = OutputMode(mode or model.cfg.output_mode) is OutputMode.TEXTUAL
    gloss_hyps: list[list[int]] = [[] for _ in range(len(data))]
    text_hyps: list[list[int]] = [[] for _ in range(len(data))]
    skipped = 0
    for idx in _chunks(len(data), 32):
        graphs = model.build_graphs([data.records[i].frames for i in idx])
        if textual:
            # textual rows are the only encoder output; a record without pseudo-glosses has nothing to decode
            keep = [k for k, g in enumerate(graphs) if g.num_textual > 0]
            skipped += len(idx) - len(keep)
            idx, graphs = [idx[k] for k in keep], [graphs[k] for k in keep]
            if not idx:
                continue
        batch = make_encoder_batch([data.records[i].frames for i in idx], graphs)
        if want_gloss:
            for i, h in zip(idx, model.recognize(batch, mode)):
                gloss_hyps[i] = h
        if want_text:
            for i, h in zip(idx, model.translate(batch, max_len, beam_size, alpha, greedy=greedy, mode=mode)):
                text_hyps[i] = h
    model.train()
    if skipped:
        log.warning("%d record(s) without pseudo-glosses scored as empty hypotheses in textual mode", skipped)
    return score_hypotheses(
        [r.gloss for r in data.records] if want_gloss else None,
        [gloss_vocab.decode(h) for h in gloss_hyps] if want_gloss else None,
        [r.text for r in data.records] if want_text else None,
        [word_vocab.decode(h) for h in text_hyps] if want_text else None,
    )


def score_hypotheses(gloss_refs=None, gloss_hyps=None, text_refs=None, text_hyps=None) -> dict:
    """Metric report from token hypotheses; a missing side leaves its fields ``None``."""
    report = dict.fromkeys(METRIC_FIELDS)
    if gloss_refs is not None:
        report["wer"] = corpus_wer(gloss_refs, gloss_hyps)
    if text_refs is not None:
        report.update(zip(("bleu1", "bleu2", "bleu3", "bleu4"), bleu(text_refs, text_hyps)))
        report["rougeL"] = corpus_rouge_l(text_refs, text_hyps)
    return report


def format_report(report: dict) -> str:
    """Stable single-line JSON for a metric report."""
    return json.dumps({k: report.get(k) for k in METRIC_FIELDS}, separators=(",", ":"))


def train_joint(
    model: JointModel,
    train: EncodedCorpus,
    dev: EncodedCorpus,
    gloss_vocab: Vocabulary,
    word_vocab: Vocabulary,
    cfg: TrainingConfig,
    cache: GraphCache | None = None,
    baseline_wer: float | None = None,
    static_graphs: bool = False,
    on_eval: Callable[[dict], None] | None = None,
) -> tuple[TrainingHistory, GraphCache]:
    """Joint training with optional dynamic re-alignment of the training graphs.

    ``baseline_wer`` is the dev WER that produced the initial graphs (from
    pretraining); re-alignment fires when dev WER drops by at least
    ``realign_epsilon`` points below the WER behind the current graphs.
    The best state by dev BLEU-4 is kept in the returned history.
    """
    if len(train) == 0:
        raise ContractError("cannot train on an empty corpus")
    cache = cache or initialize_graphs(model, train)
    weights = cfg.weights
    mode = model.cfg.output_mode
    if mode == OutputMode.TEXTUAL.value and any(g.num_textual == 0 for g in cache.graphs):
        raise ContractError("no textual nodes: TEXTUAL output mode needs at least one pseudo-gloss per record")
    rng = np.random.default_rng(cfg.seed + 7)
    model.set_rng(np.random.default_rng(cfg.seed + 8))
    optimizer = make_optimizer(model, cfg)
    schedule = batch_schedule(len(train), cfg.batch_size, rng)
    epsilon = math.inf if static_graphs else cfg.realign_epsilon
    reference_wer = baseline_wer
    history = TrainingHistory()
    best_bleu = -1.0
    model.train()
    for step in range(1, cfg.max_steps + 1):
        losses = _train_step(model, optimizer, train, cache.graphs, next(schedule), weights, cfg.loss_mode,
                             mode, step)
        history.steps.append({"step": step, **losses})
        if step % cfg.eval_every and step != cfg.max_steps:
            continue
        protocol = ("gsign2gloss_text" if weights.lambda_r and weights.lambda_t
                    else "sign2gloss" if weights.lambda_r else "sign2text")
        report = evaluate(model, dev if len(dev) else train, gloss_vocab, word_vocab, protocol,
                          max_len=cfg.max_decode_len, greedy=True)
        entry = {"step": step, "loss": losses["total"], **report, "graph_version": cache.version}
        history.evals.append(entry)
        log.info("[step %06d] loss=%.4f dev=%s", step, losses["total"], format_report(report))
        score = report["bleu4"] if report["bleu4"] is not None else -(report["wer"] or 0.0)
        if score > best_bleu:
            best_bleu = score
            history.best_step = step
            history.best_metrics = dict(report)
            history.best_state = model_state(model)
        dev_wer = report["wer"]
        if dev_wer is None:
            continue
        if reference_wer is None:
            reference_wer = dev_wer
            continue
        capped = cfg.max_realignments is not None and len(history.realignments) >= cfg.max_realignments
        if not capped and 100.0 * (reference_wer - dev_wer) >= epsilon:
            cache = initialize_graphs(model, train, version=cache.version + 1)
            problems = graph_invariant_sweep(model, train, cache)
            event = {"step": step, "version": cache.version, "dev_wer": dev_wer,
                     "previous_wer": reference_wer, "stamp": cache.stamp, "invariant_problems": problems}
            history.realignments.append(event)
            log.info("[step %06d] realigned graphs -> version %d (dev_wer %.4f -> %.4f, %d problems)",
                     step, cache.version, reference_wer, dev_wer, len(problems))
            reference_wer = dev_wer
        if on_eval is not None:
            on_eval(entry)
    history.final_step = cfg.max_steps
    return history, cache


@dataclass
class Experiment:
    """Outcome of the full two-phase schedule."""

    model: JointModel
    pretrain_wer: float
    history: TrainingHistory
    cache: GraphCache
    initial_cache: GraphCache


def run_experiment(model: JointModel, train: EncodedCorpus, dev: EncodedCorpus, gloss_vocab: Vocabulary,
                   word_vocab: Vocabulary, cfg: TrainingConfig, static_graphs: bool = False) -> Experiment:
    pretrain_wer, _ = pretrain_recognition(model, train, dev, cfg)
    cache = initialize_graphs(model, train)
    history, final_cache = train_joint(model, train, dev, gloss_vocab, word_vocab, cfg, cache,
                                       baseline_wer=pretrain_wer, static_graphs=static_graphs)
    return Experiment(model, pretrain_wer, history, final_cache, cache)


def restore_best(model: JointModel, history: TrainingHistory) -> None:
    if history.best_state is not None:
        load_state(model, history.best_state)
