"""The multi-modal graph: textual gloss nodes, visual frame nodes, inter-modal edges.

Intra-modal edges are implicit (each modality is a complete graph), so only
the bipartite inter-modal edges are stored.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .alignment import AlignmentTable
from .errors import BoundsError, ParseError, SchemaVersionError

SCHEMA_VERSION = 1


class Modality(enum.Enum):
    TEXTUAL = "textual"
    VISUAL = "visual"


@dataclass(frozen=True)
class MultiModalGraph:
    num_visual: int
    textual_glosses: tuple[int, ...]
    inter_edges: tuple[tuple[int, int], ...]

    @property
    def num_textual(self) -> int:
        return len(self.textual_glosses)

    def adjacency(self) -> np.ndarray:
        """Dense ``T x N`` 0/1 matrix of inter-modal edges."""
        adj = np.zeros((self.num_textual, self.num_visual))
        for t, v in self.inter_edges:
            adj[t, v] = 1.0
        return adj

    def textual_neighbors(self, visual_index: int) -> list[int]:
        if not 0 <= visual_index < self.num_visual:
            raise BoundsError(f"visual index {visual_index} outside [0, {self.num_visual})")
        return sorted(t for t, v in self.inter_edges if v == visual_index)

    def visual_neighbors(self, textual_index: int) -> list[int]:
        if not 0 <= textual_index < self.num_textual:
            raise BoundsError(f"textual index {textual_index} outside [0, {self.num_textual})")
        return sorted(v for t, v in self.inter_edges if t == textual_index)

    def check_invariants(self) -> list[str]:
        """Return a list of violated invariants (empty when the graph is valid)."""
        problems = []
        seen_visual = set()
        linked_textual = set()
        for t, v in self.inter_edges:
            if not (0 <= t < self.num_textual and 0 <= v < self.num_visual):
                problems.append(f"edge {(t, v)} out of range")
            if v in seen_visual:
                problems.append(f"visual node {v} has more than one inter-modal edge")
            seen_visual.add(v)
            linked_textual.add(t)
        missing = set(range(self.num_textual)) - linked_textual
        if missing:
            problems.append(f"textual nodes without inter-modal edge: {sorted(missing)}")
        return problems


def build_graph(n_frames: int, table: AlignmentTable) -> MultiModalGraph:
    for _, frame in table.pairs:
        if not 0 <= frame < n_frames:
            raise BoundsError(f"frame index {frame} outside [0, {n_frames})")
    glosses = tuple(g.gloss for g in sorted(table.groups, key=lambda g: g.gp))
    return MultiModalGraph(n_frames, glosses, tuple(sorted(table.pairs)))


def empty_graph(n_frames: int) -> MultiModalGraph:
    return MultiModalGraph(n_frames, (), ())


def to_dict(graph: MultiModalGraph) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "num_visual": graph.num_visual,
        "textual_glosses": list(graph.textual_glosses),
        "inter_edges": [list(e) for e in graph.inter_edges],
    }


def serialize(graph: MultiModalGraph) -> bytes:
    return (json.dumps(to_dict(graph), separators=(",", ":")) + "\n").encode("utf-8")


def _int_field(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"expected integer, got {value!r}", field=field)
    return value


def from_dict(obj, line: int | None = None) -> MultiModalGraph:
    if not isinstance(obj, dict):
        raise ParseError("graph record must be a JSON object", line=line)
    for key in ("schema_version", "num_visual", "textual_glosses", "inter_edges"):
        if key not in obj:
            raise ParseError("missing field", line=line, field=key)
    if obj["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema_version {obj['schema_version']!r} (this build reads {SCHEMA_VERSION})",
            line=line,
            field="schema_version",
        )
    n = _int_field(obj["num_visual"], "num_visual")
    if not isinstance(obj["textual_glosses"], list):
        raise ParseError("expected list", line=line, field="textual_glosses")
    glosses = tuple(_int_field(g, f"textual_glosses[{i}]") for i, g in enumerate(obj["textual_glosses"]))
    if not isinstance(obj["inter_edges"], list):
        raise ParseError("expected list", line=line, field="inter_edges")
    edges = []
    for i, edge in enumerate(obj["inter_edges"]):
        if not isinstance(edge, list) or len(edge) != 2:
            raise ParseError("edge must be a [textual, visual] pair", line=line, field=f"inter_edges[{i}]")
        edges.append((_int_field(edge[0], f"inter_edges[{i}][0]"), _int_field(edge[1], f"inter_edges[{i}][1]")))
    graph = MultiModalGraph(n, glosses, tuple(edges))
    problems = graph.check_invariants()
    if problems:
        raise ParseError(problems[0], line=line, field="inter_edges")
    return graph


def deserialize(data: bytes | str) -> MultiModalGraph:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed graph record: {exc.msg} at column {exc.colno}", line=exc.lineno) from exc
    return from_dict(obj, line=1)


def to_dot(graph: MultiModalGraph, gloss_names: Sequence[str] | None = None) -> str:
    """Graphviz rendering: visual nodes as boxes, textual nodes as ellipses, inter-edges only."""
    lines = ["graph multimodal {"]
    for v in range(graph.num_visual):
        lines.append(f'  f{v} [shape=box, label="f{v}"];')
    for t, g in enumerate(graph.textual_glosses):
        name = gloss_names[g] if gloss_names is not None else str(g)
        lines.append(f'  g{t} [shape=ellipse, label="{name}"];')
    for t, v in graph.inter_edges:
        lines.append(f"  g{t} -- f{v};")
    lines.append("}")
    return "\n".join(lines) + "\n"
