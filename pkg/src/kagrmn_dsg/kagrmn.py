"""Knowledge-aware gated recurrent memory network.

Each step summarises the description bank with the current aspect state
(A2D attention), gates the summary into the aspect state, writes it back
into the context bank and lets the bank attend to itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import numerics as nx
from .encoder import MemoryBanks
from .gates import adaki_gate, apply_gate, create_gate
from .numerics import ParameterStore, ShapeError, Tensor

__all__ = ["KagrmnConfig", "KagrmnState", "Kagrmn", "a2d_attention", "adaki_gate", "self_mha_update"]


@dataclass(frozen=True)
class KagrmnConfig:
    d_e: int = 64
    time_steps: int = 2
    heads: int = 4
    gate_activation: str = "none"
    gate_kind: str = "adaki"
    share_step_params: bool = True
    use_a2d: bool = True
    use_self_mha: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_e % self.heads:
            raise ValueError(f"heads={self.heads} must divide d_e={self.d_e}")
        if self.time_steps < 0:
            raise ValueError("time_steps must be >= 0")

    @property
    def d_s(self) -> int:
        return self.d_e // self.heads


@dataclass
class KagrmnState:
    r_a: Tensor
    r_k: Tensor
    M_C: Tensor
    step: int


def a2d_attention(M_D: Tensor, r_a: Tensor, W_d: Tensor, b_d: Tensor) -> tuple[Tensor, Tensor]:
    """alpha = softmax((M_D W_d + b_d) r_a); r_k = alpha M_D."""
    if M_D.ndim != 2 or M_D.shape[0] == 0:
        raise ShapeError("a2d_attention", M_D.shape)
    if r_a.shape != (M_D.shape[1],):
        raise ShapeError("a2d_attention", M_D.shape, r_a.shape)
    scores = (M_D @ W_d + b_d) @ r_a
    alpha = nx.softmax(scores)
    return alpha, alpha @ M_D


def self_mha_update(M: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor, heads: int,
                    dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
    """Concatenated per-head softmax(Q K^T / sqrt(d_s)) V; no output projection or residual."""
    if M.ndim != 2 or M.shape[0] == 0:
        raise ShapeError("self_mha_update", M.shape)
    d = M.shape[1]
    for W in (W_q, W_k, W_v):
        if W.shape != (d, d):
            raise ShapeError("self_mha_update", M.shape, W.shape)
    ds = d // heads
    q, k, v = M @ W_q, M @ W_k, M @ W_v
    outs = []
    for h in range(heads):
        cols = slice(h * ds, (h + 1) * ds)
        att = nx.softmax((q[:, cols] @ k[:, cols].T) * (1.0 / math.sqrt(ds)))
        att = nx.dropout(att, dropout, rng, train)
        outs.append(att @ v[:, cols])
    return nx.concat(outs, axis=-1) if heads > 1 else outs[0]


class Kagrmn:
    def __init__(self, cfg: KagrmnConfig, store: ParameterStore, prefix: str = "kagrmn"):
        self.cfg = cfg
        self.p = store
        self.prefix = prefix
        d = cfg.d_e
        if cfg.use_a2d:
            store.create(f"{prefix}.a2d.W_d", (d, d))
            store.create(f"{prefix}.a2d.b_d", (d,), "zeros")
        create_gate(store, f"{prefix}.gate.W_k", cfg.gate_kind, d)
        if cfg.use_self_mha:
            for t in self._step_tags():
                for w in ("W_q", "W_k", "W_v"):
                    store.create(f"{prefix}.mha{t}.{w}", (d, d))

    def _step_tags(self):
        if self.cfg.share_step_params:
            return [""]
        return [f".step{t}" for t in range(1, self.cfg.time_steps + 1)]

    def _mha(self, M: Tensor, t: int, rng, train: bool) -> Tensor:
        tag = "" if self.cfg.share_step_params else f".step{t}"
        base = f"{self.prefix}.mha{tag}"
        return self_mha_update(M, self.p[f"{base}.W_q"], self.p[f"{base}.W_k"], self.p[f"{base}.W_v"],
                               self.cfg.heads, self.cfg.dropout, rng, train)

    def summarize(self, M_D: Tensor, r_a: Tensor) -> tuple[Tensor | None, Tensor]:
        if not self.cfg.use_a2d:
            return None, nx.mean(M_D, axis=0)
        return a2d_attention(M_D, r_a, self.p[f"{self.prefix}.a2d.W_d"], self.p[f"{self.prefix}.a2d.b_d"])

    def run(self, banks: MemoryBanks, train: bool = False, rng=None, trace: list | None = None) -> KagrmnState:
        """Unroll T steps; ``trace`` (if given) collects per-step A2D weights."""
        a = banks.aspect_index
        M_C = banks.M_C
        r_a = M_C[a]
        if self.cfg.time_steps == 0:
            return KagrmnState(r_a, nx.mean(banks.M_D, axis=0), M_C, 0)
        W_gate = self.p[f"{self.prefix}.gate.W_k"]
        r_k = None
        for t in range(1, self.cfg.time_steps + 1):
            alpha, r_k = self.summarize(banks.M_D, r_a)
            if trace is not None:
                trace.append(alpha)
            r_star = apply_gate(self.cfg.gate_kind, r_a, r_k, W_gate, self.cfg.gate_activation)
            M_star = nx.scatter_row(M_C, a, r_star)
            M_C = self._mha(M_star, t, rng, train) if self.cfg.use_self_mha else M_star
            r_a = M_C[a]
        return KagrmnState(r_a, r_k, M_C, self.cfg.time_steps)
