"""Corpus records, line-delimited JSON I/O and the synthetic desk-scale corpus."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .alignment import PAD_ID
from .errors import ParseError
from .seq2seq import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class CorpusRecord:
    id: str
    frames: np.ndarray  # (N, d_in)
    gloss: list[str]
    text: list[str]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or len(self.frames) == 0:
            raise ParseError(f"record {self.id!r}: frames must be a non-empty list of vectors", field="frames")
        if len(self.gloss) > len(self.frames):
            raise ParseError(f"record {self.id!r}: more glosses than frames", field="gloss")

    def to_dict(self) -> dict:
        return {"id": self.id, "frames": self.frames.tolist(), "gloss": list(self.gloss), "text": list(self.text)}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CorpusRecord)
            and self.id == other.id
            and self.gloss == other.gloss
            and self.text == other.text
            and np.array_equal(self.frames, other.frames)
        )


def tokenize(sentence: str) -> list[str]:
    """Lower-cased whitespace tokenization."""
    return sentence.lower().split()


def _tokens(value, field: str, lower: bool) -> list[str]:
    if isinstance(value, str):
        return tokenize(value) if lower else value.split()
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise ParseError("expected a string or list of strings", field=field)
    return [t.lower() for t in value] if lower else list(value)


def parse_record(obj, line: int) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line=line)
    for key in ("id", "frames", "gloss", "text"):
        if key not in obj:
            raise ParseError("missing field", line=line, field=key)
    rid = str(obj["id"])
    frames = obj["frames"]
    if not isinstance(frames, list) or not frames:
        raise ParseError(f"record {rid!r}: frames must be non-empty", line=line, field="frames")
    try:
        arr = np.asarray(frames, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"record {rid!r}: frames are not a numeric matrix", line=line, field="frames") from exc
    if arr.ndim != 2:
        raise ParseError(f"record {rid!r}: frames must be a list of equal-length vectors", line=line, field="frames")
    try:
        return CorpusRecord(rid, arr, _tokens(obj["gloss"], "gloss", False), _tokens(obj["text"], "text", True))
    except ParseError as exc:
        raise ParseError(str(exc), line=line, field=exc.field) from None


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", line=lineno) from exc
            records.append(parse_record(obj, lineno))
    if not records:
        log.warning("corpus %s is empty", path)
    return records


def save_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")


def build_vocabularies(records: Sequence[CorpusRecord]) -> tuple[Vocabulary, Vocabulary]:
    glosses = Vocabulary.for_glosses(g for r in records for g in r.gloss)
    words = Vocabulary.for_words(w for r in records for w in r.text)
    return glosses, words


# -- synthetic corpus ------------------------------------------------------------
def expand_runs(glosses: Sequence[int], lengths: Sequence[int], gaps: Sequence[int] | None = None) -> list[int]:
    """Latent per-frame labels: each gloss repeated for its run length.

    ``gaps[i]`` PAD frames precede gloss ``i``; ``gaps[len(glosses)]``, if
    given, trails the sequence.
    """
    gaps = list(gaps) if gaps is not None else [0] * (len(glosses) + 1)
    labels: list[int] = []
    for i, (g, n) in enumerate(zip(glosses, lengths)):
        labels.extend([PAD_ID] * gaps[i])
        labels.extend([g] * n)
    if len(gaps) > len(glosses):
        labels.extend([PAD_ID] * gaps[len(glosses)])
    return labels


@dataclass
class SyntheticSpec:
    records: int = 50
    gloss_vocab: int = 20
    word_vocab: int = 25
    max_frames: int = 30
    d_input: int = 16
    min_glosses: int = 2
    max_glosses: int = 5
    max_run: int = 4
    noise: float = 0.3


def gloss_to_words(spec: SyntheticSpec) -> dict[int, list[int]]:
    """Deterministic lexicon: the first glosses map to one word, the rest to two.

    Uses exactly ``word_vocab`` distinct words when
    ``gloss_vocab <= word_vocab <= 2 * gloss_vocab``.
    """
    doubles = min(max(spec.word_vocab - spec.gloss_vocab, 0), spec.gloss_vocab)
    singles = spec.gloss_vocab - doubles
    mapping = {}
    word = 0
    for g in range(1, spec.gloss_vocab + 1):
        n = 1 if g <= singles else 2
        mapping[g] = [(word + k) % spec.word_vocab for k in range(n)]
        word += n
    return mapping


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int = 0, prefix: str = "rec",
                              lexicon_seed: int = 0) -> list[CorpusRecord]:
    """Noisy frame embeddings of a latent gloss run-length expansion.

    Frame ``i`` is ``prototype[label_i] + noise``; prototypes (including one
    for PAD) and the gloss-to-word lexicon depend only on ``lexicon_seed``, so
    corpora drawn with different ``seed`` share one language.  The spoken
    sentence is the lexicon image of the gloss sequence.
    """
    lex_rng = np.random.default_rng(lexicon_seed)
    prototypes = lex_rng.normal(size=(spec.gloss_vocab + 1, spec.d_input))
    lexicon = gloss_to_words(spec)
    rng = np.random.default_rng(seed)
    records = []
    while len(records) < spec.records:
        n_gloss = int(rng.integers(spec.min_glosses, spec.max_glosses + 1))
        glosses = [int(g) for g in rng.integers(1, spec.gloss_vocab + 1, size=n_gloss)]
        lengths = [int(n) for n in rng.integers(1, spec.max_run + 1, size=n_gloss)]
        gaps = [int(n) for n in rng.integers(0, 3, size=n_gloss + 1)]
        for i in range(1, n_gloss):
            if glosses[i] == glosses[i - 1]:
                gaps[i] = max(gaps[i], 1)
        labels = expand_runs(glosses, lengths, gaps)
        if len(labels) > spec.max_frames:
            continue
        frames = prototypes[labels] + spec.noise * rng.normal(size=(len(labels), spec.d_input))
        words = [w for g in glosses for w in lexicon[g]]
        records.append(
            CorpusRecord(
                id=f"{prefix}{len(records):04d}",
                frames=frames,
                gloss=[f"g{g:02d}" for g in glosses],
                text=[f"w{w:02d}" for w in words],
            )
        )
    return records
