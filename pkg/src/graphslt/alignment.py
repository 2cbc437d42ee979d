"""Pseudo-label sequences and the frame/gloss grouping that links them.

A pseudo-primitive sequence holds one label per frame: a gloss id or
``PAD_ID`` (which doubles as the CTC blank).  Grouping walks the sequence
with a counter that starts at -1 and opens a new group whenever a non-PAD
label differs from its predecessor; PAD frames belong to no group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError

PAD_ID = 0


@dataclass(frozen=True)
class GroupedNode:
    """One textual node: a gloss and the consecutive frames it covers."""

    gp: int
    gloss: int
    frames: tuple[int, ...]


@dataclass(frozen=True)
class AlignmentTable:
    groups: tuple[GroupedNode, ...] = ()
    pairs: tuple[tuple[int, int], ...] = field(default=())

    @property
    def size(self) -> int:
        """Number of (textual node, frame) pairs."""
        return len(self.pairs)

    def glosses(self) -> list[int]:
        return [g.gloss for g in self.groups]


def best_path_decode(frame_logits) -> list[int]:
    """Per-frame argmax of an ``N x V`` score matrix; ties go to the lowest id."""
    scores = np.asarray(getattr(frame_logits, "data", frame_logits), dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ContractError(f"best_path_decode needs a non-empty N x V matrix, got shape {scores.shape}")
    if scores.shape[1] < 2:
        raise ContractError("best_path_decode needs at least two classes (PAD plus one gloss)")
    return [int(i) for i in np.argmax(scores, axis=1)]


def collapse(labels: Sequence[int]) -> list[int]:
    """Merge runs of equal labels, then drop PAD."""
    out = []
    prev = None
    for label in labels:
        if label != PAD_ID and label != prev:
            out.append(int(label))
        prev = label
    return out


def group_pseudo_labels(labels: Sequence[int]) -> AlignmentTable:
    """Group frames of a pseudo-primitive sequence into textual nodes.

    Position 0 is handled like any other position with a predecessor that
    never matches, so a leading PAD frame stays ungrouped.
    """
    count = -1
    gp_of: list[int | None] = []
    prev = None
    for label in labels:
        if label == PAD_ID:
            gp_of.append(None)
        else:
            if label != prev:
                count += 1
            gp_of.append(count)
        prev = label

    groups: list[GroupedNode] = []
    pairs: list[tuple[int, int]] = []
    for frame, gp in enumerate(gp_of):
        if gp is None:
            continue
        if groups and groups[-1].gp == gp:
            last = groups[-1]
            groups[-1] = GroupedNode(gp, last.gloss, last.frames + (frame,))
        else:
            groups.append(GroupedNode(gp, int(labels[frame]), (frame,)))
        pairs.append((gp, frame))
    return AlignmentTable(tuple(groups), tuple(pairs))


def expand_table(table: AlignmentTable, n_frames: int) -> list[int]:
    """Rebuild a pseudo-primitive sequence (PAD where no group) from a table."""
    labels = [PAD_ID] * n_frames
    for group in table.groups:
        for frame in group.frames:
            labels[frame] = group.gloss
    return labels


def align_consistency_check(table: AlignmentTable, labels: Sequence[int]) -> bool:
    """True iff the table is internally valid and agrees with ``labels``."""
    n = len(labels)
    if len(table.pairs) > n:
        return False
    expected_pairs = {(g.gp, f) for g in table.groups for f in g.frames}
    if set(table.pairs) != expected_pairs or len(table.pairs) != len(expected_pairs):
        return False
    frames = [f for _, f in table.pairs]
    if len(frames) != len(set(frames)):
        return False
    if any(f < 0 or f >= n for f in frames):
        return False
    for i, group in enumerate(table.groups):
        if group.gp != i or group.gloss == PAD_ID or not group.frames:
            return False
        if list(group.frames) != list(range(group.frames[0], group.frames[0] + len(group.frames))):
            return False
        if any(labels[f] != group.gloss for f in group.frames):
            return False
    if set(frames) != {i for i, p in enumerate(labels) if p != PAD_ID}:
        return False
    return table.glosses() == collapse(labels)
