"""Checkpoint directories: ``manifest.json`` plus one little-endian blob per tensor."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaVersionError
from .model import JointModel, ModelConfig
from .seq2seq import Vocabulary

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


def model_state(model: JointModel) -> dict[str, np.ndarray]:
    """Copies of every parameter and buffer, keyed by name."""
    state = {name: p.data.copy() for name, p in model.named_parameters()}
    state.update({name: buf.copy() for name, buf in model.named_buffers()})
    return state


def load_state(model: JointModel, state: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    missing = (set(params) | set(buffers)) - set(state)
    if missing:
        raise ParseError(f"state lacks tensors: {sorted(missing)[:5]}")
    for name, p in params.items():
        p.data[...] = state[name]
    for name, buf in buffers.items():
        buf[...] = state[name]


def save_checkpoint(
    directory: str | Path,
    model: JointModel,
    gloss_vocab: Vocabulary,
    word_vocab: Vocabulary,
    training_config: dict | None = None,
    step: int = 0,
    dev_metrics: dict | None = None,
    state: dict[str, np.ndarray] | None = None,
    float32: bool = False,
) -> Path:
    """Write ``state`` (default: the model's current tensors) to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = state if state is not None else model_state(model)
    kinds = {name: "buffer" for name, _ in model.named_buffers()}
    dtype = "<f4" if float32 else "<f8"
    entries = []
    for name in sorted(state):
        arr = np.asarray(state[name])
        fname = f"{name}.bin"
        (directory / fname).write_bytes(arr.astype(dtype).tobytes())
        entries.append({
            "name": name,
            "file": fname,
            "shape": list(arr.shape),
            "length": int(arr.size),
            "kind": kinds.get(name, "parameter"),
        })
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "dtype": "float32" if float32 else "float64",
        "model_config": model.cfg.to_dict(),
        "training_config": training_config or {},
        "step": step,
        "dev_metrics": dev_metrics or {},
        "vocab": {"gloss": gloss_vocab.to_dict(), "word": word_vocab.to_dict()},
        "tensors": entries,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifest: {exc.msg}", line=exc.lineno) from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported checkpoint schema_version {manifest.get('schema_version')!r}", field="schema_version"
        )
    return manifest


def load_checkpoint(directory: str | Path) -> tuple[JointModel, Vocabulary, Vocabulary, dict]:
    """Rebuild the model and vocabularies stored in ``directory``."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = JointModel(cfg, seed=manifest.get("training_config", {}).get("seed", 0))
    dtype = "<f4" if manifest["dtype"] == "float32" else "<f8"
    names = [e["name"] for e in manifest["tensors"]]
    if len(names) != len(set(names)):
        raise ParseError("checkpoint lists a tensor twice", field="tensors")
    state = {}
    for entry in manifest["tensors"]:
        raw = np.frombuffer((directory / entry["file"]).read_bytes(), dtype=dtype)
        if raw.size != entry["length"]:
            raise ParseError(f"blob {entry['file']} has {raw.size} values, manifest says {entry['length']}",
                             field=entry["name"])
        state[entry["name"]] = raw.astype(np.float64).reshape(entry["shape"])
    expected = {n for n, _ in model.named_parameters()} | {n for n, _ in model.named_buffers()}
    if set(state) != expected:
        raise ParseError("checkpoint tensors do not match the model", field="tensors")
    load_state(model, state)
    gloss = Vocabulary.from_dict(manifest["vocab"]["gloss"])
    word = Vocabulary.from_dict(manifest["vocab"]["word"])
    return model, gloss, word, manifest
