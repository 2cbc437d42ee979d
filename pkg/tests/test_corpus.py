import json
import logging

import numpy as np
import pytest

from graphslt.alignment import collapse
from graphslt.corpus import (
    CorpusRecord,
    SyntheticSpec,
    build_vocabularies,
    expand_runs,
    generate_synthetic_corpus,
    gloss_to_words,
    load_corpus,
    save_corpus,
    tokenize,
)
from graphslt.errors import ParseError


def write_lines(path, objs):
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs))


GOOD = {"id": "a", "frames": [[0.0, 1.0], [1.0, 0.0]], "gloss": ["X"], "text": "Hello World"}


def test_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_corpus(path) == []
    assert "empty" in caplog.text


def test_parse_and_tokenize(tmp_path):
    path = tmp_path / "c.jsonl"
    write_lines(path, [GOOD])
    (rec,) = load_corpus(path)
    assert rec.text == ["hello", "world"]
    assert rec.gloss == ["X"]
    assert rec.frames.shape == (2, 2)
    assert tokenize("A  b\tC") == ["a", "b", "c"]


@pytest.mark.parametrize(
    "bad, field",
    [
        ({**GOOD, "frames": []}, "frames"),
        ({**GOOD, "frames": [[1.0], [1.0, 2.0]]}, "frames"),
        ({**GOOD, "gloss": ["X", "Y", "Z"]}, "gloss"),
        ({k: v for k, v in GOOD.items() if k != "text"}, "text"),
        ({**GOOD, "gloss": [1, 2]}, "gloss"),
    ],
)
def test_invalid_records_report_line_and_field(tmp_path, bad, field):
    path = tmp_path / "c.jsonl"
    write_lines(path, [GOOD, bad])
    with pytest.raises(ParseError) as info:
        load_corpus(path)
    assert info.value.line == 2
    assert info.value.field == field
    assert "line 2" in str(info.value)


def test_malformed_json_line(tmp_path):
    path = tmp_path / "c.jsonl"
    write_lines(path, [GOOD, "{not json"])
    with pytest.raises(ParseError) as info:
        load_corpus(path)
    assert info.value.line == 2


def test_round_trip(tmp_path):
    records = generate_synthetic_corpus(SyntheticSpec(records=5), seed=3)
    path = tmp_path / "c.jsonl"
    save_corpus(records, path)
    assert load_corpus(path) == records


def test_expand_runs():
    assert expand_runs([3, 5], [2, 3]) == [3, 3, 5, 5, 5]
    assert expand_runs([3, 3], [1, 1], [0, 1, 2]) == [3, 0, 3, 0, 0]


def test_synthetic_is_deterministic():
    a = generate_synthetic_corpus(SyntheticSpec(records=10), seed=4)
    b = generate_synthetic_corpus(SyntheticSpec(records=10), seed=4)
    c = generate_synthetic_corpus(SyntheticSpec(records=10), seed=5)
    assert a == b
    assert a != c


def test_synthetic_structure():
    spec = SyntheticSpec()
    records = generate_synthetic_corpus(spec, seed=1)
    lexicon = gloss_to_words(spec)
    assert len({w for ws in lexicon.values() for w in ws}) == spec.word_vocab
    for rec in records:
        assert len(rec.frames) <= spec.max_frames
        assert spec.min_glosses <= len(rec.gloss) <= spec.max_glosses
        words = [f"w{w:02d}" for g in rec.gloss for w in lexicon[int(g[1:])]]
        assert rec.text == words
    gv, wv = build_vocabularies(records)
    assert len(gv) <= spec.gloss_vocab + 1
    assert len(wv) <= spec.word_vocab + 4


def test_latent_labels_recoverable():
    # Frames are noisy prototypes, so nearest-prototype labelling collapses to the glosses.
    spec = SyntheticSpec(records=20, noise=0.05)
    records = generate_synthetic_corpus(spec, seed=6)
    prototypes = np.random.default_rng(0).normal(size=(spec.gloss_vocab + 1, spec.d_input))
    for rec in records:
        dists = ((rec.frames[:, None, :] - prototypes[None]) ** 2).sum(-1)
        labels = list(dists.argmin(axis=1))
        assert [f"g{g:02d}" for g in collapse(labels)] == rec.gloss


def test_record_validation():
    with pytest.raises(ParseError):
        CorpusRecord("x", np.zeros((0, 2)), [], [])
