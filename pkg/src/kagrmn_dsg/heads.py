"""Knowledge re-enhancement, aspect-to-context aggregation and the classifier."""

from __future__ import annotations

from . import numerics as nx
from .gates import ki_gate
from .numerics import ShapeError, Tensor

LABELS = ("negative", "positive", "neutral")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}

__all__ = ["LABELS", "LABEL_IDS", "a2c_attention", "classify", "ki_gate", "loss"]


def a2c_attention(H: Tensor, R_a: Tensor, W_ac: Tensor, b_ac: Tensor) -> tuple[Tensor, Tensor]:
    """beta = softmax((H W_ac + b_ac) R_a); returns (beta, beta H)."""
    if H.ndim != 2 or H.shape[0] == 0:
        raise ShapeError("a2c_attention", H.shape)
    if R_a.shape != (H.shape[1],):
        raise ShapeError("a2c_attention", H.shape, R_a.shape)
    beta = nx.softmax((H @ W_ac + b_ac) @ R_a)
    return beta, beta @ H


def classify(h_cls: Tensor, R_f: Tensor, W_p: Tensor, b_p: Tensor) -> Tensor:
    """Class distribution over (negative, positive, neutral)."""
    if h_cls.shape != R_f.shape or h_cls.ndim != 1:
        raise ShapeError("classify", h_cls.shape, R_f.shape)
    if W_p.shape != (2 * h_cls.shape[0], len(LABELS)):
        raise ShapeError("classify", W_p.shape, (2 * h_cls.shape[0], len(LABELS)))
    return nx.softmax(nx.concat([h_cls, R_f]) @ W_p + b_p)


def loss(P: Tensor, gold: int) -> Tensor:
    """Cross-entropy against the gold label, probabilities floored at 1e-12."""
    return nx.nll_from_probs(P, gold, floor=1e-12)
