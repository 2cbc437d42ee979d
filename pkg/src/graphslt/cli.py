"""Command-line entry point: ``graphslt <command> [flags]``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Structured output goes to stdout or to ``--out``; log lines go to stderr
and carry a step counter prefix.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .alignment import group_pseudo_labels
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import SyntheticSpec, build_vocabularies, generate_synthetic_corpus, load_corpus, save_corpus
from .errors import ConfigError, GraphSLTError
from .gradcheck import TOLERANCE, full_model_gradcheck
from .graph import build_graph, serialize, to_dot
from .model import JointModel, ModelConfig
from .pipeline import (
    PROTOCOLS,
    EncodedCorpus,
    TrainingConfig,
    evaluate,
    format_report,
    initialize_graphs,
    pretrain_recognition,
    restore_best,
    train_joint,
)

log = logging.getLogger("graphslt")

# flag dest -> TrainingConfig field
TRAINING_FLAGS = {
    "lambda_r": "lambda_r",
    "lambda_t": "lambda_t",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "dropout": "dropout",
    "max_steps": "max_steps",
    "pretrain_steps": "pretrain_steps",
    "eval_every": "eval_every",
    "realign_epsilon": "realign_epsilon",
    "max_realignments": "max_realignments",
    "loss_mode": "loss_mode",
    "beam": "beam_size",
    "alpha": "alpha",
    "max_len": "max_decode_len",
    "seed": "seed",
}
MODEL_FLAGS = ("d_model", "n_heads", "d_ff", "n_fusion_layers", "n_encoder_layers", "n_decoder_layers", "output_mode")


# -- helpers -----------------------------------------------------------------
def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed config ({exc.msg}, line {exc.lineno})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj


def resolve_configs(args: argparse.Namespace) -> tuple[TrainingConfig, dict]:
    """Training config and model overrides from ``--config`` plus flags (flags win)."""
    raw = _read_config(getattr(args, "config", None))
    model_over = dict(raw.pop("model", {}) or {})
    train_vals = dict(raw)
    for dest, name in TRAINING_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            train_vals[name] = value
    for name in MODEL_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            model_over[name] = value
    unknown = set(train_vals) - set(TrainingConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
    try:
        return TrainingConfig.from_dict(train_vals), model_over
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _load_split(path: str | None, gloss_vocab, word_vocab) -> EncodedCorpus:
    records = load_corpus(path) if path else []
    return EncodedCorpus.build(records, gloss_vocab, word_vocab, strict=False)


def _new_model(train_records, gloss_vocab, word_vocab, cfg: TrainingConfig, model_over: dict) -> JointModel:
    d_input = int(train_records[0].frames.shape[1])
    mcfg = ModelConfig(d_input=d_input, gloss_vocab=len(gloss_vocab), word_vocab=len(word_vocab),
                       dropout=cfg.dropout, **model_over)
    return JointModel(mcfg, seed=cfg.seed)


# -- commands ------------------------------------------------------------------
def cmd_gen_corpus(args) -> int:
    spec = SyntheticSpec(
        records=args.records, gloss_vocab=args.gloss_vocab, word_vocab=args.word_vocab,
        max_frames=args.max_frames, d_input=args.d_input, noise=args.noise,
    )
    records = generate_synthetic_corpus(spec, seed=args.seed, prefix=args.prefix, lexicon_seed=args.lexicon_seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_corpus(records, args.out)
    else:
        for rec in records:
            sys.stdout.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
    log.info("[gen-corpus] wrote %d records", len(records))
    return 0


def cmd_pretrain(args) -> int:
    cfg, model_over = resolve_configs(args)
    train_records = load_corpus(args.corpus)
    gloss_vocab, word_vocab = build_vocabularies(train_records)
    train = EncodedCorpus.build(train_records, gloss_vocab, word_vocab)
    dev = _load_split(args.dev, gloss_vocab, word_vocab)
    model = _new_model(train_records, gloss_vocab, word_vocab, cfg, model_over)
    wer, _ = pretrain_recognition(model, train, dev, cfg)
    tcfg = cfg.to_dict()
    tcfg["lambda_t"] = 0.0
    save_checkpoint(args.out, model, gloss_vocab, word_vocab, tcfg, cfg.pretrain_steps, {"wer": wer})
    print(json.dumps({"wer": wer}, separators=(",", ":")))
    return 0


def cmd_align(args) -> int:
    model, gloss_vocab, word_vocab, _ = load_checkpoint(args.ckpt)
    data = EncodedCorpus.build(load_corpus(args.corpus), gloss_vocab, word_vocab, strict=False)
    cache = initialize_graphs(model, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec, graph in zip(data.records, cache.graphs):
        (out / f"{rec.id}.json").write_bytes(serialize(graph))
    log.info("[align] wrote %d graphs (stamp %s)", len(cache.graphs), cache.stamp)
    return 0


def cmd_build_graph(args) -> int:
    labels = [int(x) for x in args.labels.replace(",", " ").split()]
    if any(x < 0 for x in labels):
        raise ConfigError("labels must be non-negative gloss ids")
    graph = build_graph(len(labels), group_pseudo_labels(labels))
    _write(to_dot(graph) if args.format == "dot" else serialize(graph).decode(), args.out)
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_training_curves

    cfg, model_over = resolve_configs(args)
    train_records = load_corpus(args.corpus)
    if args.init_ckpt:
        model, gloss_vocab, word_vocab, manifest = load_checkpoint(args.init_ckpt)
        for key, value in model_over.items():
            if key != "output_mode" and getattr(model.cfg, key) != value:
                raise ConfigError(f"{key}={value} conflicts with the initial checkpoint ({getattr(model.cfg, key)})")
        if "output_mode" in model_over:
            model.cfg.output_mode = ModelConfig(output_mode=model_over["output_mode"]).output_mode
        baseline = manifest.get("dev_metrics", {}).get("wer")
    else:
        gloss_vocab, word_vocab = build_vocabularies(train_records)
        model = _new_model(train_records, gloss_vocab, word_vocab, cfg, model_over)
        baseline = None
    train = EncodedCorpus.build(train_records, gloss_vocab, word_vocab)
    dev = _load_split(args.dev, gloss_vocab, word_vocab)
    if baseline is None:
        baseline, _ = pretrain_recognition(model, train, dev, cfg)
    cache = initialize_graphs(model, train)
    history, cache = train_joint(model, train, dev, gloss_vocab, word_vocab, cfg, cache,
                                 baseline_wer=baseline, static_graphs=args.static_graphs)
    final_metrics = history.evals[-1] if history.evals else {}
    out = Path(args.out)
    tcfg = cfg.to_dict()
    if args.static_graphs:
        tcfg["realign_epsilon"] = "inf"
    save_checkpoint(out / "final", model, gloss_vocab, word_vocab, tcfg, history.final_step, final_metrics)
    restore_best(model, history)
    save_checkpoint(out, model, gloss_vocab, word_vocab, tcfg, history.best_step, history.best_metrics)
    record = history.to_dict()
    record["pretrain_wer"] = baseline
    (out / "history.json").write_text(json.dumps(record, sort_keys=True) + "\n")
    plot_training_curves(record, out / "training_curves.png")
    print(json.dumps({"best_step": history.best_step, "realignments": len(history.realignments),
                      **{k: history.best_metrics.get(k) for k in ("wer", "bleu4")}}, separators=(",", ":")))
    return 0


def cmd_translate(args) -> int:
    model, gloss_vocab, word_vocab, manifest = load_checkpoint(args.ckpt)
    tcfg = TrainingConfig.from_dict(manifest.get("training_config", {}))
    data = EncodedCorpus.build(load_corpus(args.corpus), gloss_vocab, word_vocab, strict=False)
    beam = args.beam if args.beam is not None else tcfg.beam_size
    alpha = args.alpha if args.alpha is not None else tcfg.alpha
    max_len = args.max_len if args.max_len is not None else tcfg.max_decode_len
    from .encoder import make_encoder_batch

    model.eval()
    lines = []
    for start in range(0, len(data), 32):
        recs = data.records[start: start + 32]
        frames = [r.frames for r in recs]
        batch = make_encoder_batch(frames, model.build_graphs(frames))
        glosses = model.recognize(batch, args.output_mode)
        texts = model.translate(batch, max_len, beam, alpha, greedy=args.greedy, mode=args.output_mode)
        for rec, g, t in zip(recs, glosses, texts):
            lines.append(json.dumps({"id": rec.id, "gloss": gloss_vocab.decode(g), "text": word_vocab.decode(t)},
                                    separators=(",", ":")))
    _write("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .plotting import plot_metric_bars

    rows, labels = [], []
    for ckpt in args.ckpt:
        model, gloss_vocab, word_vocab, manifest = load_checkpoint(ckpt)
        tcfg = manifest.get("training_config", {})
        cfg = TrainingConfig.from_dict(tcfg)
        data = EncodedCorpus.build(load_corpus(args.corpus), gloss_vocab, word_vocab, strict=False)
        report = evaluate(
            model, data, gloss_vocab, word_vocab, args.protocol,
            beam_size=args.beam if args.beam is not None else cfg.beam_size,
            alpha=args.alpha if args.alpha is not None else cfg.alpha,
            max_len=args.max_len if args.max_len is not None else cfg.max_decode_len,
            greedy=args.greedy, mode=args.output_mode, training_config=tcfg,
        )
        rows.append(report)
        labels.append(args.output_mode or model.cfg.output_mode)
    if len(rows) == 1 and not args.out:
        print(format_report(rows[0]))
        return 0
    text = "".join(
        json.dumps({"checkpoint": str(c), "output_mode": lab, **json.loads(format_report(r))}, separators=(",", ":"))
        + "\n"
        for c, lab, r in zip(args.ckpt, labels, rows)
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.jsonl").write_text(text)
        names = [str(c) for c in args.ckpt] if len(set(labels)) < len(labels) else labels
        plot_metric_bars(rows, names, out / "metrics.png")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    errors = full_model_gradcheck(seed=args.seed, loss_mode=args.loss_mode or "nll")
    worst = max(errors, key=errors.get)
    print(json.dumps({"max_relative_error": errors[worst], "worst_parameter": worst,
                      "parameters": len(errors)}, separators=(",", ":")))
    if errors[worst] >= TOLERANCE:
        print(f"gradient check failed: {worst} has relative error {errors[worst]:.3e}", file=sys.stderr)
        return 1
    return 0


# -- parser ----------------------------------------------------------------------
def _epsilon(text: str) -> float:
    value = float(text)
    if math.isnan(value) or value < 0:
        raise argparse.ArgumentTypeError("realign epsilon must be a non-negative number (or inf)")
    return value


def _training_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training overrides (win over --config)")
    g.add_argument("--config", help="JSON file of training fields plus an optional 'model' object")
    g.add_argument("--lambda-r", type=float)
    g.add_argument("--lambda-t", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--max-steps", type=int)
    g.add_argument("--pretrain-steps", type=int)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--realign-epsilon", type=_epsilon, help="dev WER improvement (points) that triggers a rebuild")
    g.add_argument("--max-realignments", type=int)
    g.add_argument("--loss-mode", choices=("prob", "nll"), help="recognition loss: 1-p or -log p")
    g.add_argument("--beam", type=int)
    g.add_argument("--alpha", type=float, help="length penalty exponent")
    g.add_argument("--max-len", type=int)
    m = p.add_argument_group("model overrides")
    m.add_argument("--d-model", type=int)
    m.add_argument("--n-heads", type=int)
    m.add_argument("--d-ff", type=int)
    m.add_argument("--n-fusion-layers", type=int)
    m.add_argument("--n-encoder-layers", type=int)
    m.add_argument("--n-decoder-layers", type=int)
    m.add_argument("--output-mode", choices=("visual", "textual", "concat"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphslt", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None if name in ("pretrain", "train") else 0)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "write a synthetic corpus as line-delimited JSON")
    p.add_argument("--records", type=int, default=50)
    p.add_argument("--gloss-vocab", type=int, default=20)
    p.add_argument("--word-vocab", type=int, default=25)
    p.add_argument("--max-frames", type=int, default=30)
    p.add_argument("--d-input", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--prefix", default="rec")
    p.add_argument("--lexicon-seed", type=int, default=0, help="shared across splits of one language")
    p.add_argument("--out")

    p = add("pretrain", cmd_pretrain, "fit the recognition path alone and save a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True, help="checkpoint directory")
    _training_flags(p)

    p = add("align", cmd_align, "pseudo-label a corpus and write one graph file per record")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = add("build-graph", cmd_build_graph, "build the graph of one pseudo-label sequence")
    p.add_argument("--labels", required=True, help="frame labels, e.g. '7,7,0,7,0,5,5,0' (0 is PAD)")
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--out")

    p = add("train", cmd_train, "pretrain (unless --init-ckpt) and train jointly with graph re-alignment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev")
    p.add_argument("--init-ckpt", help="start from a pretrained checkpoint and skip pretraining")
    p.add_argument("--static-graphs", action="store_true", help="never rebuild the training graphs")
    p.add_argument("--out", required=True, help="directory for the best checkpoint, final/, history and figure")
    _training_flags(p)

    p = add("translate", cmd_translate, "write gloss and text hypotheses for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--output-mode", choices=("visual", "textual", "concat"))
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "score checkpoints on a corpus; several --ckpt give one row each")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True, action="append")
    p.add_argument("--protocol", choices=PROTOCOLS, default="gsign2gloss_text")
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--output-mode", choices=("visual", "textual", "concat"))
    p.add_argument("--out", help="directory for report.jsonl and metrics.png")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every parameter of a small model")
    p.add_argument("--loss-mode", choices=("prob", "nll"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (GraphSLTError, OSError, ValueError, KeyError) as exc:
        print(f"graphslt {args.command}: error: {exc}", file=sys.stderr)
        return 1
