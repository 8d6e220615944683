"""Finite-difference verification of every backward rule and of the full model.

All checks run in float64 with non-finite detection on. The error measure
is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)``. The floor
matters for gradients that vanish by construction (a bias added to every
softmax score, say): there the central difference at h = 1e-6 measures pure
round-off, around 1e-9, which a smaller floor would turn into a false alarm.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..encoder import Vocabulary
from ..model import KagrmnDsgModel
from ..numerics import ParameterStore, Tape, Tensor
from ..syntaxgraph import RelationVocab
from .config import ModelConfig
from .data import Sample

log = logging.getLogger(__name__)

STEP = 1e-6
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-4


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ERROR_FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, idx: tuple, h: float = STEP) -> float:
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def check_tensors(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], samples_per_tensor: int | None = None,
                  rng: np.random.Generator | None = None, h: float = STEP) -> dict[str, float]:
    """Max relative error per tensor (keyed by name or position).

    ``loss_fn`` must rebuild the graph from the current tensor values each call.
    ``samples_per_tensor=None`` checks every element.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for t in tensors}

    def value():
        return loss_fn().item()

    errors = {}
    for k, t in enumerate(tensors):
        flat = [np.unravel_index(i, t.shape) for i in range(t.data.size)]
        if samples_per_tensor is not None and len(flat) > samples_per_tensor:
            picks = rng.choice(len(flat), size=samples_per_tensor, replace=False)
            flat = [flat[i] for i in sorted(picks)]
        worst = 0.0
        for idx in flat:
            num = numeric_gradient(value, t.data, idx, h)
            worst = max(worst, float(relative_error(analytic[id(t)][idx], num)))
        errors[t.name or f"input{k}"] = worst
    return errors


# --- op-level cases ----------------------------------------------------------

def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[list[Tensor], Callable[..., Tensor]]]:
    """One random instance per differentiable op: (inputs, fn(*inputs) -> tensor)."""
    m, k, n = (int(x) for x in rng.integers(1, 5, size=3))
    seg = rng.integers(0, 3, size=m + 1)
    row = int(rng.integers(m))
    target = int(rng.integers(n))
    drop_seed = int(rng.integers(1 << 30))
    # probabilities bounded away from the clamp floor
    probs_logits = _rand(rng, n)

    def dropout_fn(x):
        return nx.dropout(x, 0.3, np.random.default_rng(drop_seed), train=True)

    def relu_fn(x):
        return nx.relu(x)

    relu_in = Tensor(rng.uniform(0.1, 1.0, size=(m, n)) * rng.choice([-1, 1], size=(m, n)), requires_grad=True)
    return {
        "matmul": ([_rand(rng, m, k), _rand(rng, k, n)], lambda a, b: a @ b),
        "matvec": ([_rand(rng, m, k), _rand(rng, k)], lambda a, b: a @ b),
        "vecmat": ([_rand(rng, k), _rand(rng, k, n)], lambda a, b: a @ b),
        "add_bias": ([_rand(rng, m, n), _rand(rng, n)], lambda a, b: a + b),
        "mul": ([_rand(rng, m, n), _rand(rng, m, n)], lambda a, b: a * b),
        "mul_scalar_broadcast": ([_rand(rng, n), _rand(rng, 1)], lambda a, b: a * b),
        "neg_sub": ([_rand(rng, m, n), _rand(rng, m, n)], lambda a, b: a - b),
        "relu": ([relu_in], relu_fn),
        "sigmoid": ([_rand(rng, m, n)], nx.sigmoid),
        "exp": ([_rand(rng, m, n)], nx.exp),
        "softmax": ([_rand(rng, m, n)], nx.softmax),
        "log_softmax": ([_rand(rng, m, n)], nx.log_softmax),
        "transpose": ([_rand(rng, m, n)], lambda a: a.T),
        "reshape": ([_rand(rng, m, n)], lambda a: nx.reshape(a, (m * n,))),
        "index_rows": ([_rand(rng, m, n)], lambda a: a[np.array([0, m - 1, 0])]),
        "index_cols": ([_rand(rng, m, n + 1)], lambda a: a[:, 1:]),
        "index_pick": ([_rand(rng, m, n)], lambda a: a[row]),
        "concat_last": ([_rand(rng, m, k), _rand(rng, m, n)], lambda a, b: nx.concat([a, b], axis=-1)),
        "concat_rows": ([_rand(rng, m, n), _rand(rng, k, n)], lambda a, b: nx.concat([a, b], axis=0)),
        "stack": ([_rand(rng, n), _rand(rng, n)], lambda a, b: nx.stack([a, b])),
        "scatter_row": ([_rand(rng, m, n), _rand(rng, n)], lambda a, b: nx.scatter_row(a, row, b)),
        "segment_sum": ([_rand(rng, m + 1, n)], lambda a: nx.segment_sum(a, seg, 3)),
        "sum": ([_rand(rng, m, n)], lambda a: nx.tensor_sum(a)),
        "mean_axis0": ([_rand(rng, m, n)], lambda a: nx.mean(a, axis=0)),
        "layer_norm": ([_rand(rng, m, n + 1), _rand(rng, n + 1), _rand(rng, n + 1)], nx.layer_norm),
        "cross_entropy": ([_rand(rng, n)], lambda a: nx.cross_entropy(a, target)),
        "nll_from_probs": ([probs_logits], lambda a: nx.nll_from_probs(nx.softmax(a), target)),
        "dropout": ([_rand(rng, m, n)], dropout_fn),
    }


def check_op(name: str, seed: int) -> float:
    """Worst relative error for one op instance, using a random linear read-out."""
    with nx.verification_mode():
        rng = np.random.default_rng(seed)
        inputs, fn = op_cases(rng)[name]
        probe = rng.normal(size=fn(*inputs).shape)

        def loss():
            return nx.tensor_sum(fn(*inputs) * Tensor(probe))

        return max(check_tensors(loss, inputs).values())


# --- model-level -------------------------------------------------------------

def tiny_sample() -> Sample:
    """Six context tokens with a two-token aspect (N = 5) and a 3-token description."""
    return Sample(
        id="gradcheck",
        tokens=["the", "battery", "life", "is", "really", "short"],
        aspect_span=(1, 3),
        label="negative",
        dep_heads=[2, 2, 5, 5, 5, -1],
        dep_rels=["det", "compound", "nsubj", "cop", "advmod", "root"],
        description_tokens=["stored", "electric", "energy"],
    )


def tiny_config(base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    return base.replace(d_e=8, enc_layers=1, enc_heads=2, self_heads=2, rel_heads=2, d_r=4, max_len=16,
                        time_steps=2, dropout=0.0)


def tiny_model(cfg: ModelConfig, sample: Sample, scale: float = 0.5) -> KagrmnDsgModel:
    """Tiny model with every parameter redrawn from N(0, scale^2).

    Training-time initialisation leaves some gradients (relation embeddings,
    zero biases) so small that finite differences drown in round-off.
    """
    vocab = Vocabulary.build([sample.tokens, sample.description_tokens or []])
    relations = RelationVocab(sample.dep_rels, d_max=cfg.d_max)
    model = KagrmnDsgModel(cfg, vocab, relations)
    rng = np.random.default_rng(cfg.seed)
    for _, t in model.params.items():
        t.data = rng.normal(0.0, scale, size=t.shape).astype(t.data.dtype)
    return model


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class GradcheckReport:
    groups: dict[str, float] = field(default_factory=dict)
    parameters: dict[str, float] = field(default_factory=dict)
    tolerance: float = TOLERANCE
    seconds: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.groups.values())

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.parameters.items() if v > self.tolerance}

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tolerance": self.tolerance, "seconds": round(self.seconds, 3),
                "groups": self.groups, "failures": self.failures(), "warnings": self.warnings}


def check_parameters(loss_fn: Callable[[], Tensor], params: ParameterStore, samples_per_tensor: int = 3,
                     seed: int = 0, report: GradcheckReport | None = None) -> GradcheckReport:
    report = report or GradcheckReport()
    if len(params) == 0:
        msg = "model has no parameters; gradient check is vacuous"
        warnings.warn(msg, stacklevel=2)
        report.warnings.append(msg)
        return report
    errors = check_tensors(loss_fn, params.tensors(), samples_per_tensor, np.random.default_rng(seed))
    for name, err in errors.items():
        report.parameters[name] = err
        g = group_of(name)
        report.groups[g] = max(report.groups.get(g, 0.0), err)
    return report


def gradcheck(config: ModelConfig | None = None, samples_per_tensor: int = 3, op_seeds: int = 3,
              seed: int = 0) -> GradcheckReport:
    """Run op-level and end-to-end checks at tiny width; see module docstring."""
    started = time.perf_counter()
    report = GradcheckReport()
    for name in op_cases(np.random.default_rng(0)):
        worst = max(check_op(name, seed * 1000 + s) for s in range(op_seeds))
        report.parameters[f"numerics.{name}"] = worst
        report.groups["numerics"] = max(report.groups.get("numerics", 0.0), worst)
    with nx.verification_mode():
        cfg = tiny_config(config).replace(seed=seed)
        sample = tiny_sample()
        model = tiny_model(cfg, sample)
        prep = model.prepare(sample)

        def loss():
            return model.loss(prep, train=False)[0]

        check_parameters(loss, model.params, samples_per_tensor, seed, report)
    report.seconds = time.perf_counter() - started
    return report
