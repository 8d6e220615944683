"""End-to-end composition: encoder -> memory network -> graph network -> heads."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .dsgnet import DsgNet
from .encoder import Encoder, Vocabulary, build_memory_banks
from .gates import apply_gate, create_gate
from .heads import LABEL_IDS, a2c_attention, classify, loss
from .kagrmn import Kagrmn
from .numerics import ParameterStore, Tensor
from .pipeline.config import ModelConfig
from .pipeline.data import Sample
from .syntaxgraph import DenseGraph, RelationVocab, SparseGraph, build_dense, build_sparse, position_weights


@dataclass
class Prepared:
    """Everything about a sample that does not depend on parameters."""

    sample_id: str
    context_ids: list[int]
    aspect_ids: list[int]
    description_ids: list[int]
    aspect_span: tuple[int, int]
    sparse: SparseGraph
    dense: DenseGraph
    w_p: np.ndarray
    label: int

    def mask_aspect(self, unk_id: int) -> "Prepared":
        """Copy with every aspect token replaced by UNK (context and pair segment)."""
        s, e = self.aspect_span
        ctx = list(self.context_ids)
        ctx[s:e] = [unk_id] * (e - s)
        return dataclasses.replace(self, context_ids=ctx, aspect_ids=[unk_id] * len(self.aspect_ids))


@dataclass
class Output:
    P: Tensor
    trace: dict = field(default_factory=dict)


class KagrmnDsgModel:
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, relations: RelationVocab):
        self.cfg = cfg
        self.switch = cfg.switch
        self.vocab = vocab
        self.relations = relations
        self.params = ParameterStore(seed=cfg.seed)
        s = self.switch
        d = cfg.d_e
        self.encoder = Encoder(cfg.encoder(), len(vocab), self.params)
        self.kagrmn = Kagrmn(cfg.kagrmn(), self.params)
        self.dsgnet = DsgNet(cfg.dsgnet(len(relations)), self.params) if s.use_dsg else None
        if s.use_ki_gate:
            create_gate(self.params, "heads.gate.W", s.gate2, d)
        if s.use_a2c:
            self.params.create("heads.a2c.W_ac", (d, d))
            self.params.create("heads.a2c.b_ac", (d,), "zeros")
        self.params.create("heads.cls.W_p", (2 * d, 3))
        self.params.create("heads.cls.b_p", (3,), "zeros")

    def prepare(self, sample: Sample) -> Prepared:
        if self.switch.use_knowledge and sample.description_tokens:
            desc = sample.description_tokens
        else:
            desc = sample.aspect_tokens
        parse = sample.parse
        sparse = build_sparse(parse, sample.aspect_span)
        dense = build_dense(parse, sample.aspect_span, self.relations, self.cfg.d_max)
        return Prepared(
            sample_id=sample.id,
            context_ids=self.vocab.ids(sample.tokens),
            aspect_ids=self.vocab.ids(sample.aspect_tokens),
            description_ids=self.vocab.ids(desc),
            aspect_span=sample.aspect_span,
            sparse=sparse,
            dense=dense,
            w_p=position_weights(sparse.num_nodes, sparse.aspect_node),
            label=LABEL_IDS[sample.label],
        )

    def forward(self, prep: Prepared, train: bool = False, rng: np.random.Generator | None = None,
                trace: bool = False) -> Output:
        s = self.switch
        p = self.params
        rate = self.cfg.dropout
        out = Output(P=None)
        h_cls, H_C = self.encoder.encode_pair(prep.context_ids, prep.aspect_ids, self.vocab, train, rng)
        H_D = self.encoder.encode_single(prep.description_ids, self.vocab, train, rng)
        banks = build_memory_banks(h_cls, H_C, prep.aspect_span, H_D)
        a = banks.aspect_index
        alphas = [] if trace else None
        state = self.kagrmn.run(banks, train, rng, alphas)
        if trace:
            out.trace["a2d_alpha"] = alphas
            out.trace["banks"] = banks
            out.trace["state"] = state
        if s.only_kagrmn:
            R = state.r_a
        else:
            fused = None
            if self.dsgnet is not None:
                betas = [] if trace else None
                R_tilde, fused = self.dsgnet.run(state.M_C, prep.sparse, prep.dense, prep.w_p, betas)
                if trace:
                    out.trace["rmha_beta"] = betas
            else:
                R_tilde = state.r_a
            R_a = R_tilde
            if s.use_ki_gate:
                R_a = apply_gate(s.gate2, R_tilde, state.r_k, p["heads.gate.W"], self.cfg.gate_activation)
            if s.use_a2c:
                source = fused if (self.cfg.a2c_source == "fused" and fused is not None) else state.M_C
                H = nx.scatter_row(source, a, R_a)
                beta, R = a2c_attention(H, R_a, p["heads.a2c.W_ac"], p["heads.a2c.b_ac"])
                if trace:
                    out.trace["a2c_beta"] = beta
            else:
                R = R_a
        R = nx.dropout(R, rate, rng, train)
        out.P = classify(nx.dropout(h_cls, rate, rng, train), R, p["heads.cls.W_p"], p["heads.cls.b_p"])
        return out

    def loss(self, prep: Prepared, train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        P = self.forward(prep, train, rng).P
        return loss(P, prep.label), P

    def predict_proba(self, prep: Prepared) -> np.ndarray:
        return self.forward(prep, train=False).P.data.astype(np.float64)
