"""Hand-crafted feature augmentation of skeleton sequences.

Every dimension (joint) ``j`` at every time step ``i`` becomes a feature
vector laid out as::

    [ position (l) | pairwise edge angles (p) | offset (l) | centroid distance (1) ]

so ``f = 2l + p + 1``, where ``p`` is the largest number of incident edge
pairs over all tree nodes. Nodes with fewer pairs are zero padded at the end
of the angle block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class SkeletonTopology:
    """A rooted tree over ``m`` dimensions living in ``coords``-D space."""

    parent: tuple[int | None, ...]
    coords: int = 2

    def __post_init__(self) -> None:
        parent = tuple(None if p is None or p < 0 else int(p) for p in self.parent)
        object.__setattr__(self, "parent", parent)
        m = len(parent)
        if m < 1:
            raise InputError("topology needs at least one dimension")
        if self.coords < 1:
            raise InputError("coordinate dimensionality must be positive")
        roots = [j for j, p in enumerate(parent) if p is None]
        if len(roots) != 1:
            raise InputError(f"topology must have exactly one root, found {len(roots)}")
        for j, p in enumerate(parent):
            if p is not None and not 0 <= p < m:
                raise InputError(f"parent of dimension {j} is out of range: {p}")
        for j in range(m):
            seen = set()
            node: int | None = j
            while node is not None:
                if node in seen:
                    raise InputError(f"parent links contain a cycle through dimension {j}")
                seen.add(node)
                node = parent[node]

    @property
    def m(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return self.parent.index(None)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in range(self.m)]
        for j, p in enumerate(self.parent):
            if p is not None:
                kids[p].append(j)
        return tuple(tuple(sorted(k)) for k in kids)

    def neighbors(self, j: int) -> tuple[int, ...]:
        """Tree neighbours of ``j`` in ascending index order."""
        p = self.parent[j]
        return tuple(sorted(self.children[j] + (() if p is None else (p,))))

    def angle_pairs(self, j: int) -> list[tuple[int, int]]:
        return list(combinations(self.neighbors(j), 2))

    @cached_property
    def n_angles(self) -> int:
        return max(len(self.angle_pairs(j)) for j in range(self.m))

    @property
    def n_features(self) -> int:
        return 2 * self.coords + self.n_angles + 1

    def is_adjacent(self, a: int, b: int) -> bool:
        return self.parent[a] == b or self.parent[b] == a


def binary_tree(levels: int = 3, coords: int = 2) -> SkeletonTopology:
    """Full binary tree with ``2**levels - 1`` nodes in breadth-first numbering."""
    m = 2**levels - 1
    return SkeletonTopology(tuple([None] + [(j - 1) // 2 for j in range(1, m)]), coords)


@dataclass
class STSSequence:
    """One labelled sequence of ``n`` frames, each ``m`` points in ``l``-D."""

    frames: np.ndarray
    label: int
    topology: SkeletonTopology = field(repr=False)

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise InputError(f"frames must be (n, m, l), got shape {self.frames.shape}")
        n, m, l = self.frames.shape
        if (m, l) != (self.topology.m, self.topology.coords):
            raise InputError(f"frames have (m, l) = ({m}, {l}) but topology expects ({self.topology.m}, {self.topology.coords})")
        if n < 1:
            raise InputError("a sequence needs at least one frame")
        if not np.isfinite(self.frames).all():
            raise InputError("frames contain non-finite coordinates")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class STSTensorPair:
    """Inputs for both streams.

    ``tdf`` has shape ``(m, T, f)`` (dimensions as channels, temporal
    stream); ``dtf`` has shape ``(T, 2m - 1, f)`` (time steps as channels,
    rows in bidirectional traversal order, structural stream).
    """

    tdf: np.ndarray
    dtf: np.ndarray


# per-element extractors --------------------------------------------------------

def extract_position(frame: np.ndarray, j: int) -> np.ndarray:
    return np.array(frame[j], dtype=np.float64)


def extract_angles(frame: np.ndarray, j: int, topology: SkeletonTopology) -> np.ndarray:
    """Angles between every pair of edges incident on ``j``, scaled to [0, 1] and zero padded to ``p``."""
    out = np.zeros(topology.n_angles)
    for slot, (a, b) in enumerate(topology.angle_pairs(j)):
        ea = frame[a] - frame[j]
        eb = frame[b] - frame[j]
        norms = np.linalg.norm(ea) * np.linalg.norm(eb)
        if norms == 0.0:
            continue
        cos = np.clip(np.dot(ea, eb) / norms, -1.0, 1.0)
        out[slot] = np.arccos(cos) / np.pi
    return out


def extract_offset(frames: np.ndarray, i: int, j: int) -> np.ndarray:
    """Displacement of ``j`` since the previous frame; zero at the first frame."""
    if i == 0:
        return np.zeros(frames.shape[2])
    return frames[i, j] - frames[i - 1, j]


def extract_distance(frame: np.ndarray, j: int) -> float:
    return float(np.linalg.norm(frame[j] - frame.mean(axis=0)))


# vectorised assembly ---------------------------------------------------------

def feature_tensor(frames: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """All feature vectors of a sequence, shape ``(n, m, f)``."""
    frames = np.asarray(frames, dtype=np.float64)
    n, m, l = frames.shape
    angles = np.zeros((n, m, topology.n_angles))
    for j in range(m):
        pairs = topology.angle_pairs(j)
        if not pairs:
            continue
        a_idx = [a for a, _ in pairs]
        b_idx = [b for _, b in pairs]
        ea = frames[:, a_idx] - frames[:, j : j + 1]
        eb = frames[:, b_idx] - frames[:, j : j + 1]
        norms = np.linalg.norm(ea, axis=-1) * np.linalg.norm(eb, axis=-1)
        dots = (ea * eb).sum(axis=-1)
        safe = np.where(norms > 0.0, norms, 1.0)
        cos = np.clip(dots / safe, -1.0, 1.0)
        angles[:, j, : len(pairs)] = np.where(norms > 0.0, np.arccos(cos) / np.pi, 0.0)
    offsets = np.zeros_like(frames)
    offsets[1:] = frames[1:] - frames[:-1]
    centroid = frames.mean(axis=1, keepdims=True)
    distance = np.linalg.norm(frames - centroid, axis=-1, keepdims=True)
    return np.concatenate([frames, angles, offsets, distance], axis=-1)


def bidirectional_traversal(topology: SkeletonTopology) -> list[int]:
    """Euler tour from the root, re-emitting a node whenever the walk returns to it.

    Children are visited in ascending index order; the tour has ``2m - 1``
    entries.
    """
    root = topology.root
    tour = [root]
    stack = [(root, iter(topology.children[root]))]
    while stack:
        node, kids = stack[-1]
        child = next(kids, None)
        if child is None:
            stack.pop()
            if stack:
                tour.append(stack[-1][0])
            continue
        tour.append(child)
        stack.append((child, iter(topology.children[child])))
    return tour


def assemble(sequence: STSSequence, topology: SkeletonTopology | None = None) -> STSTensorPair:
    topology = sequence.topology if topology is None else topology
    if sequence.frames.shape[1:] != (topology.m, topology.coords):
        raise InputError(
            f"sequence frames {sequence.frames.shape[1:]} do not match topology ({topology.m}, {topology.coords})"
        )
    feats = feature_tensor(sequence.frames, topology)
    tour = bidirectional_traversal(topology)
    return STSTensorPair(
        tdf=np.ascontiguousarray(feats.transpose(1, 0, 2)),
        dtf=np.ascontiguousarray(feats[:, tour, :]),
    )


def assemble_batch(sequences: Sequence[STSSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack the tensor pairs of equal-length sequences into ``(X_tdf, X_dtf, labels)``."""
    pairs = [assemble(s) for s in sequences]
    return (
        np.stack([p.tdf for p in pairs]),
        np.stack([p.dtf for p in pairs]),
        np.array([s.label for s in sequences], dtype=np.int64),
    )
