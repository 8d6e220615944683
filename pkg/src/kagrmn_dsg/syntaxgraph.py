"""Aspect-oriented graphs derived from a dependency parse.

The sparse graph merges the aspect tokens into one node and keeps the rest
of the tree; the dense graph is a star around that node whose edges carry
either the dependency label (direct neighbours) or a bucketed tree distance.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class DependencyParse:
    heads: tuple[int, ...]
    rels: tuple[str, ...]

    def __init__(self, heads: Sequence[int], rels: Sequence[str]):
        object.__setattr__(self, "heads", tuple(int(h) for h in heads))
        object.__setattr__(self, "rels", tuple(rels))
        self.validate()

    def __len__(self):
        return len(self.heads)

    def validate(self):
        n = len(self.heads)
        if n == 0:
            raise ParseError("empty parse")
        if len(self.rels) != n:
            raise ParseError(f"{n} heads but {len(self.rels)} relation labels")
        roots = [i for i, h in enumerate(self.heads) if h == -1]
        if len(roots) != 1:
            raise ParseError(f"expected exactly one root, found {len(roots)}")
        for i, h in enumerate(self.heads):
            if h != -1 and not 0 <= h < n:
                raise ParseError(f"token {i}: head {h} out of range")
            if h == i:
                raise ParseError(f"token {i} is its own head")
        # every token must reach the root without revisiting a node
        for i in range(n):
            seen = set()
            j = i
            while j != -1:
                if j in seen:
                    raise ParseError(f"cycle through token {j}")
                seen.add(j)
                j = self.heads[j]

    def undirected_edges(self) -> list[tuple[int, int]]:
        return [(i, h) for i, h in enumerate(self.heads) if h != -1]


@dataclass(frozen=True)
class SparseGraph:
    num_nodes: int
    adjacency: tuple[tuple[int, ...], ...]
    aspect_node: int

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.adjacency)

    def edges(self) -> set[frozenset[int]]:
        return {frozenset((i, j)) for i, nbrs in enumerate(self.adjacency) for j in nbrs}

    def to_json(self) -> dict:
        return {"num_nodes": self.num_nodes, "aspect_node": self.aspect_node,
                "adjacency": [list(a) for a in self.adjacency]}


@dataclass(frozen=True)
class DenseGraph:
    aspect_node: int
    rel_ids: tuple[int, ...]  # per node; -1 at the aspect node itself
    labels: tuple[str, ...]

    @property
    def num_nodes(self):
        return len(self.rel_ids)

    def context_nodes(self) -> list[int]:
        return [j for j in range(len(self.rel_ids)) if j != self.aspect_node]

    def to_json(self) -> dict:
        return {"aspect_node": self.aspect_node, "rel_ids": list(self.rel_ids), "labels": list(self.labels)}


UNK_REL = "rel:unk"
FAR = "dist:far"


def dist_label(k: int) -> str:
    return f"dist:{k}"


class RelationVocab:
    """Dependency labels plus distance buckets dist:1..dist:D_max, dist:far."""

    def __init__(self, labels: Iterable[str] = (), d_max: int = 4):
        self.d_max = d_max
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for lab in [UNK_REL, *(dist_label(k) for k in range(1, d_max + 1)), FAR, *labels]:
            self.add(lab)

    def add(self, label: str) -> int:
        if label not in self.stoi:
            self.stoi[label] = len(self.itos)
            self.itos.append(label)
        return self.stoi[label]

    def __len__(self):
        return len(self.itos)

    def id(self, label: str) -> int:
        return self.stoi.get(label, self.stoi[UNK_REL])

    def save(self, path):
        Path(path).write_text(f"#d_max {self.d_max}\n" + "".join(s + "\n" for s in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RelationVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        d_max = int(lines[0].split()[1])
        vocab = cls(d_max=d_max)
        if vocab.itos != lines[1 : 1 + len(vocab.itos)]:
            raise ValueError(f"{path}: reserved relation block does not match d_max={d_max}")
        for lab in lines[1:]:
            vocab.add(lab)
        return vocab


def _check_span(parse: DependencyParse, span):
    start, end = span
    if not 0 <= start < end <= len(parse):
        raise ParseError(f"aspect span {tuple(span)} invalid for {len(parse)} tokens")


def merged_index(n_tokens: int, span) -> list[int]:
    """Old token index -> node index after collapsing the span to one node."""
    start, end = span
    width = end - start
    return [i if i < start else start if i < end else i - width + 1 for i in range(n_tokens)]


def build_sparse(parse: DependencyParse, aspect_span) -> SparseGraph:
    _check_span(parse, aspect_span)
    start, end = aspect_span
    n = len(parse) - (end - start) + 1
    remap = merged_index(len(parse), aspect_span)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i, h in parse.undirected_edges():
        a, b = remap[i], remap[h]
        if a == b:
            continue  # edge inside the aspect
        nbrs[a].add(b)
        nbrs[b].add(a)
    return SparseGraph(n, tuple(tuple(sorted(s)) for s in nbrs), start)


def _hops_from(adjacency, source: int) -> list[int]:
    dist = [-1] * len(adjacency)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def dense_labels(parse: DependencyParse, aspect_span, d_max: int = 4) -> list[str | None]:
    """Relation label from the aspect node to every merged node (None for the aspect)."""
    _check_span(parse, aspect_span)
    start, end = aspect_span
    remap = merged_index(len(parse), aspect_span)
    graph = build_sparse(parse, aspect_span)
    first_label: dict[int, str] = {}
    for i, h in parse.undirected_edges():
        in_i, in_h = start <= i < end, start <= h < end
        if in_i == in_h:
            continue
        other = remap[h] if in_i else remap[i]
        # the dependent token carries the label; first occurrence wins
        first_label.setdefault(other, parse.rels[i])
    hops = _hops_from(graph.adjacency, graph.aspect_node)
    labels: list[str | None] = []
    for j in range(graph.num_nodes):
        if j == graph.aspect_node:
            labels.append(None)
        elif j in first_label:
            labels.append(first_label[j])
        else:
            k = hops[j]
            labels.append(dist_label(k) if 0 < k <= d_max else FAR)
    return labels


def build_dense(parse: DependencyParse, aspect_span, vocab: RelationVocab, d_max: int | None = None) -> DenseGraph:
    d_max = vocab.d_max if d_max is None else d_max
    labels = dense_labels(parse, aspect_span, d_max)
    rel_ids = tuple(-1 if lab is None else vocab.id(lab) for lab in labels)
    return DenseGraph(aspect_span[0], rel_ids, tuple("" if lab is None else lab for lab in labels))


def position_weights(n: int, tau: int) -> np.ndarray:
    """w_i = 1 - |i - tau| / (n + 1)."""
    if not 0 <= tau < n:
        raise ValueError(f"tau={tau} outside [0, {n})")
    i = np.arange(n)
    return 1.0 - np.abs(i - tau) / (n + 1)


def normalized_neighbourhoods(graph: SparseGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edge list (src, dst, weight) for self-inclusive mean-style aggregation.

    Each node i receives from itself and its neighbours with weight 1 / (d_i + 1).
    """
    src, dst, w = [], [], []
    for i, nbrs in enumerate(graph.adjacency):
        scale = 1.0 / (len(nbrs) + 1)
        for j in (i, *nbrs):
            src.append(j)
            dst.append(i)
            w.append(scale)
    return np.array(src), np.array(dst), np.array(w)
