"""Tape-based reverse-mode differentiation over small dense numpy arrays.

Every op computes its forward value eagerly and, when a :class:`Tape` is
active and some input requires a gradient, appends a node to that tape.
Backward rules live in :data:`BACKWARD`, keyed by op name, and are looked
up when the tape is replayed.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "BACKWARD",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "concat",
    "cross_entropy",
    "dropout",
    "exp",
    "get_dtype",
    "layer_norm",
    "log_softmax",
    "matmul",
    "mean",
    "nll_from_probs",
    "reshape",
    "index",
    "precision",
    "relu",
    "scatter_row",
    "segment_sum",
    "sigmoid",
    "softmax",
    "stack",
    "tensor_sum",
    "transpose",
    "verification_mode",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = {"dtype": np.float32, "check_finite": False}
_tapes: list["Tape"] = []


def get_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype, check_finite: bool | None = None):
    """Temporarily switch the dtype used for new tensors."""
    saved = dict(_state)
    _state["dtype"] = np.dtype(dtype).type
    if check_finite is not None:
        _state["check_finite"] = check_finite
    try:
        yield
    finally:
        _state.update(saved)


def verification_mode():
    """float64 with a hard failure on any non-finite op output."""
    return precision(np.float64, check_finite=True)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _state["dtype"])
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self)))

    def __rsub__(self, other):
        return add(as_tensor(other, self), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap constants; ``like`` fixes the dtype so a float64 graph stays float64."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=None if like is None else like.data.dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    return as_tensor(a, b), b


class Tape:
    """Records op nodes for a single forward pass.

    Use as a context manager; ops executed inside record onto it.
    ``backward`` may run once, after which the tape is consumed.
    """

    def __init__(self):
        self.nodes: list[tuple[str, Tensor, tuple[Tensor, ...], dict]] = []
        self.consumed = False

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor):
        if self.consumed:
            raise TapeError("backward() already ran on this tape")
        if loss.data.size != 1:
            raise ShapeError("backward", loss.shape, (1,))
        if not self.nodes:
            raise TapeError("tape is empty")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op, out, parents, ctx in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if out.requires_grad:
                out.grad = g if out.grad is None else out.grad + g
            parent_grads = BACKWARD[op](g, out, parents, ctx)
            for p, pg in zip(parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # whatever is left belongs to leaves
        leaves = {}
        for _, _, parents, _ in self.nodes:
            for p in parents:
                if p.requires_grad and id(p) in grads:
                    leaves[id(p)] = p
        for key, p in leaves.items():
            g = grads[key]
            p.grad = g if p.grad is None else p.grad + g
        self.nodes = []


def backward(loss: Tensor):
    """Populate ``.grad`` on everything ``loss`` depends on."""
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not produced under an active Tape")
    tape.backward(loss)


BACKWARD: dict[str, Callable] = {}


def _rule(name):
    def deco(fn):
        BACKWARD[name] = fn
        return fn

    return deco


def _make(op: str, value: np.ndarray, parents: Sequence[Tensor], ctx: dict | None = None) -> Tensor:
    if _state["check_finite"] and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.name = None
    out._tape = None
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs and _tapes:
        tape = _tapes[-1]
        tape.nodes.append((op, out, tuple(parents), ctx or {}))
        out._tape = tape
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b))


@_rule("add")
def _add_bw(g, out, parents, ctx):
    a, b = parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def neg(a) -> Tensor:
    return _make("neg", -a.data, (a,))


@_rule("neg")
def _neg_bw(g, out, parents, ctx):
    return (-g,)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b))


@_rule("mul")
def _mul_bw(g, out, parents, ctx):
    a, b = parents
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def relu(x: Tensor) -> Tensor:
    return _make("relu", np.maximum(x.data, 0), (x,))


@_rule("relu")
def _relu_bw(g, out, parents, ctx):
    return (g * (parents[0].data > 0),)


def sigmoid(x: Tensor) -> Tensor:
    return _make("sigmoid", 1.0 / (1.0 + np.exp(-x.data)), (x,))


@_rule("sigmoid")
def _sigmoid_bw(g, out, parents, ctx):
    s = out.data
    return (g * s * (1 - s),)


def exp(x: Tensor) -> Tensor:
    return _make("exp", np.exp(x.data), (x,))


@_rule("exp")
def _exp_bw(g, out, parents, ctx):
    return (g * out.data,)


# --- linear algebra / shape --------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make("matmul", a.data @ b.data, (a, b))


@_rule("matmul")
def _matmul_bw(g, out, parents, ctx):
    a, b = parents
    A = a.data if a.ndim == 2 else a.data[None, :]
    B = b.data if b.ndim == 2 else b.data[:, None]
    G = g.reshape(A.shape[0], B.shape[1])
    ga = (G @ B.T).reshape(a.shape)
    gb = (A.T @ G).reshape(b.shape)
    return ga, gb


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    return _make("transpose", x.data.T, (x,))


@_rule("transpose")
def _transpose_bw(g, out, parents, ctx):
    return (g.T,)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError("reshape", x.shape, shape)
    return _make("reshape", x.data.reshape(shape), (x,))


@_rule("reshape")
def _reshape_bw(g, out, parents, ctx):
    return (g.reshape(parents[0].shape),)


def index(x: Tensor, key) -> Tensor:
    """Basic and integer-array indexing (row gather, column slice, pick)."""
    try:
        value = x.data[key]
    except IndexError as e:
        raise IndexError(f"index: {e} for shape {x.shape}") from None
    if np.ndim(value) == 0:
        value = np.reshape(value, 1)
    return _make("index", np.array(value), (x,), {"key": key})


@_rule("index")
def _index_bw(g, out, parents, ctx):
    x = parents[0]
    full = np.zeros_like(x.data)
    key = ctx["key"]
    target_shape = np.shape(x.data[key])
    np.add.at(full, key, g.reshape(target_shape))
    return (full,)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    return _make("concat", value, tensors, {"axis": axis, "sizes": sizes})


@_rule("concat")
def _concat_bw(g, out, parents, ctx):
    cuts = np.cumsum(ctx["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=ctx["axis"]))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *[t.shape for t in tensors])
    return _make("stack", np.stack([t.data for t in tensors]), tensors)


@_rule("stack")
def _stack_bw(g, out, parents, ctx):
    return tuple(g[i] for i in range(len(parents)))


def scatter_row(m: Tensor, row: int, v: Tensor) -> Tensor:
    """Copy of ``m`` with row ``row`` replaced by ``v``."""
    if m.ndim != 2 or v.shape != m.shape[1:]:
        raise ShapeError("scatter_row", m.shape, v.shape)
    if not 0 <= row < m.shape[0]:
        raise IndexError(f"scatter_row: row {row} out of range for {m.shape[0]} rows")
    value = m.data.copy()
    value[row] = v.data
    return _make("scatter_row", value, (m, v), {"row": row})


@_rule("scatter_row")
def _scatter_row_bw(g, out, parents, ctx):
    gm = g.copy()
    gm[ctx["row"]] = 0
    return gm, g[ctx["row"]].copy()


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """out[s] = sum of rows x[i] with segment_ids[i] == s."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise ShapeError("segment_sum", x.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(f"segment_sum: segment id outside [0, {num_segments})")
    value = np.zeros((num_segments, x.shape[1]), dtype=x.data.dtype)
    np.add.at(value, ids, x.data)
    return _make("segment_sum", value, (x,), {"ids": ids})


@_rule("segment_sum")
def _segment_sum_bw(g, out, parents, ctx):
    return (g[ctx["ids"]],)


# --- reductions ----------------------------------------------------------------

def tensor_sum(x: Tensor, axis: int | None = None) -> Tensor:
    value = x.data.sum(axis=axis)
    value = np.reshape(value, 1) if np.ndim(value) == 0 else value
    return _make("sum", value, (x,), {"axis": axis})


@_rule("sum")
def _sum_bw(g, out, parents, ctx):
    x = parents[0]
    axis = ctx["axis"]
    if axis is None:
        return (np.broadcast_to(g.reshape(()), x.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis), 1.0 / n)


# --- normalisation / probabilistic ---------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    if x.shape[-1] == 0:
        raise ShapeError("softmax", x.shape)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return _make("softmax", e / e.sum(axis=-1, keepdims=True), (x,))


@_rule("softmax")
def _softmax_bw(g, out, parents, ctx):
    y = out.data
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return _make("log_softmax", z - lse, (x,))


@_rule("log_softmax")
def _log_softmax_bw(g, out, parents, ctx):
    p = np.exp(out.data)
    return (g - p * g.sum(axis=-1, keepdims=True),)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] for a single logit vector."""
    if logits.ndim != 1 or not 0 <= target < logits.shape[0]:
        raise ShapeError("cross_entropy", logits.shape, (target,))
    return neg(index(log_softmax(logits), target))


def nll_from_probs(p: Tensor, target: int, floor: float = 1e-12) -> Tensor:
    """-log(max(p[target], floor)); zero gradient while clamped."""
    if p.ndim != 1 or not 0 <= target < p.shape[0]:
        raise ShapeError("nll_from_probs", p.shape, (target,))
    value = max(float(p.data[target]), floor)
    out = np.array([-math.log(value)], dtype=p.data.dtype)
    return _make("nll_from_probs", out, (p,), {"target": target, "floor": floor})


@_rule("nll_from_probs")
def _nll_bw(g, out, parents, ctx):
    p = parents[0]
    gp = np.zeros_like(p.data)
    pt = p.data[ctx["target"]]
    if pt > ctx["floor"]:
        gp[ctx["target"]] = -g[0] / pt
    return (gp,)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return _make("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), {"xhat": xhat, "inv": inv})


@_rule("layer_norm")
def _layer_norm_bw(g, out, parents, ctx):
    x, gamma, _ = parents
    xhat, inv = ctx["xhat"], ctx["inv"]
    gx_hat = g * gamma.data
    n = x.shape[-1]
    gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
    red = tuple(range(g.ndim - 1))
    return gx, (g * xhat).sum(axis=red), g.sum(axis=red)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity unless ``train`` and ``rate > 0``."""
    if not train or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.data.dtype) / (1.0 - rate)
    return _make("dropout", x.data * mask, (x,), {"mask": mask})


@_rule("dropout")
def _dropout_bw(g, out, parents, ctx):
    return (g * ctx["mask"],)
