"""Small trainable transformer encoder and memory-bank construction.

Stands in for a pretrained encoder: same interface (a summary state at the
CLS position plus one state per input token, with sentence-pair
conditioning through segment embeddings), trained from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .numerics import ParameterStore, Tensor

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)


class EncodingError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        token = token.lower()
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token: str):
        return token.lower() in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token.lower(), self.stoi[UNK])

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    @property
    def cls_id(self):
        return 2

    @property
    def sep_id(self):
        return 3

    def save(self, path):
        # reserved block is implicit: line k holds id k + 4
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]]) -> "Vocabulary":
        vocab = cls()
        for toks in token_lists:
            for t in toks:
                vocab.add(t)
        return vocab


@dataclass(frozen=True)
class EncoderConfig:
    d_e: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 128
    ff_mult: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_e % self.heads:
            raise ValueError(f"d_e={self.d_e} not divisible by heads={self.heads}")


@dataclass
class MemoryBanks:
    M_D: Tensor
    M_C: Tensor
    aspect_index: int
    h_cls: Tensor

    @property
    def N(self) -> int:
        return self.M_C.shape[0]


class Encoder:
    """Token + position + segment embeddings followed by post-LN attention blocks."""

    def __init__(self, cfg: EncoderConfig, vocab_size: int, store: ParameterStore, prefix: str = "encoder"):
        self.cfg = cfg
        self.p = store
        self.prefix = prefix
        d = cfg.d_e
        store.create(f"{prefix}.tok_emb", (vocab_size, d), "normal")
        store.create(f"{prefix}.pos_emb", (cfg.max_len, d), "normal")
        store.create(f"{prefix}.seg_emb", (2, d), "normal")
        store.create(f"{prefix}.emb_ln.gamma", (d,), "ones")
        store.create(f"{prefix}.emb_ln.beta", (d,), "zeros")
        for i in range(cfg.layers):
            b = f"{prefix}.block{i}"
            for w in ("W_q", "W_k", "W_v", "W_o"):
                store.create(f"{b}.attn.{w}", (d, d))
            store.create(f"{b}.attn.b_o", (d,), "zeros")
            store.create(f"{b}.ln1.gamma", (d,), "ones")
            store.create(f"{b}.ln1.beta", (d,), "zeros")
            store.create(f"{b}.ff.W1", (d, cfg.ff_mult * d))
            store.create(f"{b}.ff.b1", (cfg.ff_mult * d,), "zeros")
            store.create(f"{b}.ff.W2", (cfg.ff_mult * d, d))
            store.create(f"{b}.ff.b2", (d,), "zeros")
            store.create(f"{b}.ln2.gamma", (d,), "ones")
            store.create(f"{b}.ln2.beta", (d,), "zeros")

    def _w(self, name):
        return self.p[f"{self.prefix}.{name}"]

    def _attention(self, x: Tensor, b: str, train: bool, rng) -> Tensor:
        h = self.cfg.heads
        ds = self.cfg.d_e // h
        q = x @ self._w(f"{b}.attn.W_q")
        k = x @ self._w(f"{b}.attn.W_k")
        v = x @ self._w(f"{b}.attn.W_v")
        outs = []
        for i in range(h):
            cols = slice(i * ds, (i + 1) * ds)
            att = nx.softmax((q[:, cols] @ k[:, cols].T) * (1.0 / math.sqrt(ds)))
            att = nx.dropout(att, self.cfg.dropout, rng, train)
            outs.append(att @ v[:, cols])
        return nx.concat(outs, axis=-1) @ self._w(f"{b}.attn.W_o") + self._w(f"{b}.attn.b_o")

    def forward(self, ids: Sequence[int], segments: Sequence[int], train: bool = False, rng=None) -> Tensor:
        n = len(ids)
        if n > self.cfg.max_len:
            raise EncodingError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        ids = np.asarray(ids, dtype=np.int64)
        x = self._w("tok_emb")[ids] + self._w("pos_emb")[np.arange(n)] + self._w("seg_emb")[np.asarray(segments)]
        x = nx.layer_norm(x, self._w("emb_ln.gamma"), self._w("emb_ln.beta"))
        x = nx.dropout(x, self.cfg.dropout, rng, train)
        for i in range(self.cfg.layers):
            b = f"block{i}"
            a = nx.dropout(self._attention(x, b, train, rng), self.cfg.dropout, rng, train)
            x = nx.layer_norm(x + a, self._w(f"{b}.ln1.gamma"), self._w(f"{b}.ln1.beta"))
            f = nx.relu(x @ self._w(f"{b}.ff.W1") + self._w(f"{b}.ff.b1")) @ self._w(f"{b}.ff.W2") + self._w(f"{b}.ff.b2")
            f = nx.dropout(f, self.cfg.dropout, rng, train)
            x = nx.layer_norm(x + f, self._w(f"{b}.ln2.gamma"), self._w(f"{b}.ln2.beta"))
        return x

    def encode_pair(self, context_ids: Sequence[int], aspect_ids: Sequence[int], vocab: Vocabulary,
                    train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Encode ``[CLS] C [SEP] A [SEP]``; returns ``(h_cls, H_C)``."""
        if not context_ids or not aspect_ids:
            raise EncodingError("context and aspect must be non-empty")
        total = len(context_ids) + len(aspect_ids) + 3
        if total > self.cfg.max_len:
            raise EncodingError(
                f"pair length {total} (context {len(context_ids)}, aspect {len(aspect_ids)}) "
                f"exceeds max_len {self.cfg.max_len}")
        ids = [vocab.cls_id, *context_ids, vocab.sep_id, *aspect_ids, vocab.sep_id]
        segs = [0] * (len(context_ids) + 2) + [1] * (len(aspect_ids) + 1)
        h = self.forward(ids, segs, train, rng)
        return h[0], h[1 : 1 + len(context_ids)]

    def encode_single(self, description_ids: Sequence[int], vocab: Vocabulary,
                      train: bool = False, rng=None) -> Tensor:
        """Encode ``[CLS] D [SEP]``; returns the N_D description states."""
        if not description_ids:
            raise EncodingError("description must be non-empty")
        total = len(description_ids) + 2
        if total > self.cfg.max_len:
            raise EncodingError(f"description length {total} exceeds max_len {self.cfg.max_len}")
        ids = [vocab.cls_id, *description_ids, vocab.sep_id]
        h = self.forward(ids, [0] * len(ids), train, rng)
        return h[1 : 1 + len(description_ids)]


def build_memory_banks(h_cls: Tensor, H_C: Tensor, aspect_span: tuple[int, int], H_D: Tensor) -> MemoryBanks:
    """Collapse the aspect rows of ``H_C`` into a single row holding ``h_cls``."""
    start, end = aspect_span
    n_c = H_C.shape[0]
    if not 0 <= start < end <= n_c:
        raise EncodingError(f"aspect span {aspect_span} invalid for {n_c} context tokens")
    parts = []
    if start > 0:
        parts.append(H_C[:start])
    parts.append(nx.reshape(h_cls, (1, h_cls.shape[0])))
    if end < n_c:
        parts.append(H_C[end:])
    M_C = nx.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    return MemoryBanks(M_D=H_D, M_C=M_C, aspect_index=start, h_cls=h_cls)
