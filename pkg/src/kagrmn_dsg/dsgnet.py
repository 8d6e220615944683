"""Dual syntax graph network: position-aware GCN, relational MHA and their fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ParameterStore, ShapeError, Tensor
from .syntaxgraph import DenseGraph, SparseGraph, normalized_neighbourhoods


@dataclass(frozen=True)
class DsgConfig:
    d_e: int = 64
    gcn_layers: int = 2
    rel_heads: int = 2
    d_r: int = 16
    num_relations: int = 8
    fusion_hidden: int | None = None
    use_pgcn: bool = True
    use_relational: bool = True

    def __post_init__(self):
        if self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")
        if self.rel_heads < 1:
            raise ValueError("rel_heads must be >= 1")


def pgcn_layer(H: Tensor, graph: SparseGraph, w_p, W: Tensor, b: Tensor) -> Tensor:
    """h_i = sum over j in N(i) + {i} of W (w_j h_j) / (d_i + 1) + b."""
    n = graph.num_nodes
    w_p = np.asarray(w_p)
    if H.ndim != 2 or H.shape[0] != n or w_p.shape != (n,):
        raise ShapeError("pgcn_layer", H.shape, (n,), w_p.shape)
    src, dst, weight = normalized_neighbourhoods(graph)
    if src.size and src.max() >= n:
        raise IndexError(f"pgcn_layer: neighbour index {src.max()} out of range for {n} nodes")
    dtype = H.data.dtype
    XW = (H * Tensor(w_p[:, None], dtype=dtype)) @ W
    messages = XW[src] * Tensor(weight[:, None], dtype=dtype)
    return nx.segment_sum(messages, dst, n) + b


def relational_mha(H: Tensor, graph: DenseGraph, rel_emb: Tensor, heads: list[dict[str, Tensor]],
                   trace: list | None = None) -> Tensor:
    """Star-graph attention whose scores come from relation embeddings only.

    The aspect node attends over every context node; each context node's
    only neighbour is the aspect node. Head outputs are averaged.
    """
    n = graph.num_nodes
    if H.ndim != 2 or H.shape[0] != n:
        raise ShapeError("relational_mha", H.shape, (n,))
    a = graph.aspect_node
    ctx = graph.context_nodes()
    rel = np.array([graph.rel_ids[j] for j in ctx], dtype=np.int64)
    if rel.size and (rel.min() < 0 or rel.max() >= rel_emb.shape[0]):
        bad = rel[(rel < 0) | (rel >= rel_emb.shape[0])][0]
        raise IndexError(f"relational_mha: unknown relation id {bad}")
    proj_sum = None
    h_a_sum = None
    for head in heads:
        proj = H @ head["W1"]
        proj_sum = proj if proj_sum is None else proj_sum + proj
        if ctx:
            g = nx.relu(rel_emb[rel] @ head["W2"] + head["b1"]) @ head["W3"] + head["b2"]
            beta = nx.softmax(nx.reshape(g, (len(ctx),)))
            if trace is not None:
                trace.append(beta)
            h_a = beta @ proj[np.array(ctx)]
            h_a_sum = h_a if h_a_sum is None else h_a_sum + h_a
    scale = 1.0 / len(heads)
    proj_mean = proj_sum * scale
    # every leaf's single neighbour is the aspect node, so beta == 1 there
    out = proj_mean[np.full(n, a)]
    if h_a_sum is None:
        h_a_mean = Tensor(np.zeros(H.shape[1]), dtype=H.data.dtype)
    else:
        h_a_mean = h_a_sum * scale
    return nx.scatter_row(out, a, h_a_mean)


def fuse(h_gcn: Tensor, h_rel: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    """One-hidden-layer ReLU MLP over the concatenated branch outputs."""
    if h_gcn.shape != h_rel.shape:
        raise ShapeError("fuse", h_gcn.shape, h_rel.shape)
    x = nx.concat([h_gcn, h_rel], axis=-1)
    if W1.shape[0] != x.shape[-1]:
        raise ShapeError("fuse", x.shape, W1.shape)
    return nx.relu(x @ W1 + b1) @ W2 + b2


class DsgNet:
    def __init__(self, cfg: DsgConfig, store: ParameterStore, prefix: str = "dsgnet"):
        self.cfg = cfg
        self.p = store
        self.prefix = prefix
        d = cfg.d_e
        if cfg.use_pgcn:
            for l in range(cfg.gcn_layers):
                store.create(f"{prefix}.pgcn{l}.W", (d, d))
                store.create(f"{prefix}.pgcn{l}.b", (d,), "zeros")
        if cfg.use_relational:
            store.create(f"{prefix}.rel_emb", (cfg.num_relations, cfg.d_r), "normal")
            for m in range(cfg.rel_heads):
                h = f"{prefix}.rmha{m}"
                store.create(f"{h}.W1", (d, d))
                store.create(f"{h}.W2", (cfg.d_r, cfg.d_r))
                store.create(f"{h}.b1", (cfg.d_r,), "zeros")
                store.create(f"{h}.W3", (cfg.d_r, 1))
                store.create(f"{h}.b2", (1,), "zeros")
        hidden = cfg.fusion_hidden or d
        store.create(f"{prefix}.fuse.W1", (2 * d, hidden))
        store.create(f"{prefix}.fuse.b1", (hidden,), "zeros")
        store.create(f"{prefix}.fuse.W2", (hidden, d))
        store.create(f"{prefix}.fuse.b2", (d,), "zeros")

    def heads(self) -> list[dict[str, Tensor]]:
        return [{k: self.p[f"{self.prefix}.rmha{m}.{k}"] for k in ("W1", "W2", "b1", "W3", "b2")}
                for m in range(self.cfg.rel_heads)]

    def pgcn(self, H: Tensor, graph: SparseGraph, w_p) -> Tensor:
        for l in range(self.cfg.gcn_layers):
            if l > 0:
                H = nx.relu(H)
            H = pgcn_layer(H, graph, w_p, self.p[f"{self.prefix}.pgcn{l}.W"], self.p[f"{self.prefix}.pgcn{l}.b"])
        return H

    def run(self, M_C: Tensor, sparse: SparseGraph, dense: DenseGraph, w_p,
            trace: list | None = None) -> tuple[Tensor, Tensor]:
        """Returns (R_a_tilde, fused node sequence)."""
        if not (M_C.shape[0] == sparse.num_nodes == dense.num_nodes == len(w_p)):
            raise ShapeError("dsgnet.run", M_C.shape, (sparse.num_nodes,), (dense.num_nodes,), (len(w_p),))
        zeros = Tensor(np.zeros(M_C.shape), dtype=M_C.data.dtype)
        h_gcn = self.pgcn(M_C, sparse, w_p) if self.cfg.use_pgcn else zeros
        if self.cfg.use_relational:
            h_rel = relational_mha(M_C, dense, self.p[f"{self.prefix}.rel_emb"], self.heads(), trace)
        else:
            h_rel = zeros
        f = f"{self.prefix}.fuse"
        fused = fuse(h_gcn, h_rel, self.p[f"{f}.W1"], self.p[f"{f}.b1"], self.p[f"{f}.W2"], self.p[f"{f}.b2"])
        return fused[sparse.aspect_node], fused
