"""The two knowledge-integration gates.

Both add gated knowledge to a representation: the vector gate scales each
dimension of the knowledge separately, the scalar gate scales it as a whole.
Either may sit at either gate position, which is how the gate-swap variants
are expressed.
"""

from __future__ import annotations

from . import numerics as nx
from .numerics import ParameterStore, ShapeError, Tensor

GATE_KINDS = ("adaki", "ki")


def adaki_gate(r_prev: Tensor, r_k: Tensor, W_k: Tensor, activation: str = "none") -> Tensor:
    """r_prev + r_k * (W_k [r_prev, r_k]) with a per-dimension gate."""
    if r_prev.shape != r_k.shape or r_prev.ndim != 1:
        raise ShapeError("adaki_gate", r_prev.shape, r_k.shape)
    d = r_prev.shape[0]
    if W_k.shape != (2 * d, d):
        raise ShapeError("adaki_gate", W_k.shape, (2 * d, d))
    gate = nx.concat([r_prev, r_k]) @ W_k
    if activation == "sigmoid":
        gate = nx.sigmoid(gate)
    elif activation != "none":
        raise ValueError(f"unknown gate activation {activation!r}")
    return r_prev + r_k * gate


def ki_gate(R: Tensor, r_k: Tensor, W: Tensor, activation: str = "none") -> Tensor:
    """R + r_k * s where s = W [R, r_k] is a single scalar."""
    if R.shape != r_k.shape or R.ndim != 1:
        raise ShapeError("ki_gate", R.shape, r_k.shape)
    if W.shape != (2 * R.shape[0], 1):
        raise ShapeError("ki_gate", W.shape, (2 * R.shape[0], 1))
    s = nx.concat([R, r_k]) @ W
    if activation == "sigmoid":
        s = nx.sigmoid(s)
    elif activation != "none":
        raise ValueError(f"unknown gate activation {activation!r}")
    return R + r_k * s


def create_gate(store: ParameterStore, name: str, kind: str, d: int) -> Tensor:
    if kind == "adaki":
        return store.create(name, (2 * d, d))
    if kind == "ki":
        return store.create(name, (2 * d, 1))
    raise ValueError(f"unknown gate kind {kind!r}; expected one of {GATE_KINDS}")


def apply_gate(kind: str, r: Tensor, r_k: Tensor, W: Tensor, activation: str = "none") -> Tensor:
    if kind == "adaki":
        return adaki_gate(r, r_k, W, activation)
    return ki_gate(r, r_k, W, activation)
