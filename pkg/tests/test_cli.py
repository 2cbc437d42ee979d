import json

import pytest

from graphslt import cli
from graphslt.graph import deserialize

SMALL = ["--d-model", "16", "--n-heads", "2", "--d-ff", "24", "--n-fusion-layers", "1",
         "--n-encoder-layers", "1", "--n-decoder-layers", "1", "--batch-size", "4"]


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    common = ["--gloss-vocab", "5", "--word-vocab", "7", "--max-frames", "12", "--d-input", "4"]
    assert cli.main(["gen-corpus", "--seed", "1", "--records", "10", *common, "--out", str(root / "train.jsonl")]) == 0
    assert cli.main(["gen-corpus", "--seed", "2", "--records", "4", "--prefix", "dev", *common,
                     "--out", str(root / "dev.jsonl")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpora):
    out = corpora / "run"
    code = cli.main(["train", "--corpus", str(corpora / "train.jsonl"), "--dev", str(corpora / "dev.jsonl"),
                     "--pretrain-steps", "10", "--max-steps", "20", "--eval-every", "10", "--max-len", "6",
                     "--seed", "4", *SMALL, "--out", str(out)])
    assert code == 0
    return out


def test_gen_corpus_is_reproducible(capsys):
    _, a, _ = run(["gen-corpus", "--records", "3", "--seed", "9"], capsys)
    _, b, _ = run(["gen-corpus", "--records", "3", "--seed", "9"], capsys)
    assert a == b and len(a.splitlines()) == 3


def test_build_graph(capsys):
    code, out, _ = run(["build-graph", "--labels", "7,7,0,7,0,5,5,0"], capsys)
    assert code == 0
    graph = deserialize(out)
    assert graph.textual_glosses == (7, 7, 5) and len(graph.inter_edges) == 5
    code, out, _ = run(["build-graph", "--labels", "1 1 0", "--format", "dot"], capsys)
    assert out.startswith("graph")


def test_train_outputs(trained):
    history = json.loads((trained / "history.json").read_text())
    assert [e["step"] for e in history["evals"]] == [10, 20]
    assert (trained / "training_curves.png").stat().st_size > 0
    assert (trained / "manifest.json").exists() and (trained / "final" / "manifest.json").exists()


def test_align_writes_one_graph_per_record(corpora, trained, tmp_path):
    assert cli.main(["align", "--corpus", str(corpora / "dev.jsonl"), "--ckpt", str(trained),
                     "--out", str(tmp_path / "g")]) == 0
    files = sorted(p.name for p in (tmp_path / "g").iterdir())
    assert files == [f"dev{i:04d}.json" for i in range(4)]
    for f in files:
        assert deserialize((tmp_path / "g" / f).read_bytes()).check_invariants() == []


def test_evaluate_and_translate(corpora, trained, capsys, tmp_path):
    args = ["evaluate", "--corpus", str(corpora / "dev.jsonl"), "--ckpt", str(trained), "--beam", "2"]
    code, first, _ = run(args, capsys)
    _, second, _ = run(args, capsys)
    assert code == 0 and first == second
    assert set(json.loads(first)) == {"wer", "bleu1", "bleu2", "bleu3", "bleu4", "rougeL"}
    code, out, _ = run(["translate", "--corpus", str(corpora / "dev.jsonl"), "--ckpt", str(trained)], capsys)
    rows = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and [r["id"] for r in rows] == [f"dev{i:04d}" for i in range(4)]


def test_evaluate_several_checkpoints(corpora, trained, tmp_path):
    ckpts = [str(trained), str(trained / "final")]
    assert cli.main(["evaluate", "--corpus", str(corpora / "dev.jsonl"), "--ckpt", ckpts[0], "--ckpt", ckpts[1],
                     "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "report.jsonl").read_text().splitlines()
    assert [json.loads(r)["checkpoint"] for r in rows] == ckpts
    assert (tmp_path / "metrics.png").stat().st_size > 0


def test_static_graphs_and_config_precedence(corpora, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_steps": 30, "eval_every": 10, "pretrain_steps": 5, "realign_epsilon": 0.0,
                               "model": {"d_model": 16, "n_heads": 2, "d_ff": 24, "n_fusion_layers": 1,
                                         "n_encoder_layers": 1, "n_decoder_layers": 1}}))
    out = tmp_path / "static"
    assert cli.main(["train", "--corpus", str(corpora / "train.jsonl"), "--config", str(cfg), "--max-steps", "10",
                     "--static-graphs", "--out", str(out)]) == 0
    history = json.loads((out / "history.json").read_text())
    assert history["final_step"] == 10
    assert history["realignments"] == []
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["training_config"]["realign_epsilon"] == "inf"
    assert manifest["model_config"]["d_model"] == 16


def test_pretrained_checkpoint_rejects_text_protocol(corpora, tmp_path, capsys):
    assert cli.main(["pretrain", "--corpus", str(corpora / "train.jsonl"), "--pretrain-steps", "5", *SMALL,
                     "--out", str(tmp_path / "pre")]) == 0
    code, _, err = run(["evaluate", "--corpus", str(corpora / "dev.jsonl"), "--ckpt", str(tmp_path / "pre")], capsys)
    assert code == 1 and "lambda_T=0" in err
    code, out, _ = run(["evaluate", "--corpus", str(corpora / "dev.jsonl"), "--ckpt", str(tmp_path / "pre"),
                        "--protocol", "sign2gloss"], capsys)
    assert code == 0 and json.loads(out)["bleu4"] is None


def test_gradcheck_passes(capsys):
    code, out, _ = run(["gradcheck", "--seed", "7"], capsys)
    assert code == 0
    assert json.loads(out)["max_relative_error"] < 1e-4


def test_gradcheck_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "full_model_gradcheck", lambda seed, loss_mode: {"w": 0.5, "b": 1e-9})
    code, out, err = run(["gradcheck"], capsys)
    assert code == 1 and "w" in err


def test_usage_errors(capsys):
    for argv in (["train", "--bogus"], ["nope"], [], ["build-graph"]):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 2
    capsys.readouterr()


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--static-graphs", "--output-mode", "--loss-mode", "--alpha", "--beam", "--config", "--seed"):
        assert flag in out


def test_runtime_error_exit_code(tmp_path, capsys):
    code, _, err = run(["align", "--corpus", str(tmp_path / "missing.jsonl"), "--ckpt", str(tmp_path),
                        "--out", str(tmp_path / "g")], capsys)
    assert code == 1 and err.startswith("graphslt align: error:")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    code, _, err = run(["train", "--corpus", "x", "--config", str(bad), "--out", str(tmp_path)], capsys)
    assert code == 1 and "JSON object" in err
