"""Training, evaluation and prediction over prepared samples."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..encoder import Vocabulary
from ..heads import LABELS
from ..model import KagrmnDsgModel
from ..numerics import Adam, Tape, load_checkpoint, save_checkpoint
from ..syntaxgraph import RelationVocab
from .config import ModelConfig
from .data import Sample
from .metrics import compute_metrics

log = logging.getLogger(__name__)

CHECKPOINT = "model.ckpt"
BEST_CHECKPOINT = "best.ckpt"


class TrainingError(RuntimeError):
    pass


def build_vocabularies(samples: Sequence[Sample], d_max: int) -> tuple[Vocabulary, RelationVocab]:
    vocab = Vocabulary()
    relations = RelationVocab(d_max=d_max)
    for s in samples:
        for t in s.tokens:
            vocab.add(t)
        for t in s.description_tokens or ():
            vocab.add(t)
        for r in s.dep_rels:
            relations.add(r)
    return vocab, relations


def emit_json(record: dict, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(record, sort_keys=True) + "\n")
    stream.flush()


@dataclass
class TrainResult:
    model: KagrmnDsgModel
    epoch_log: list[dict] = field(default_factory=list)
    best_eval: dict | None = None


def save_artifacts(model: KagrmnDsgModel, out_dir, checkpoint_name: str = CHECKPOINT):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.params, out / checkpoint_name)
    model.cfg.save(out / "config.json")
    model.vocab.save(out / "vocab.txt")
    model.relations.save(out / "relations.txt")


def load_model(out_dir, checkpoint_name: str = CHECKPOINT, config: ModelConfig | None = None) -> KagrmnDsgModel:
    out = Path(out_dir)
    cfg = config or ModelConfig.load(out / "config.json")
    model = KagrmnDsgModel(cfg, Vocabulary.load(out / "vocab.txt"), RelationVocab.load(out / "relations.txt"))
    load_checkpoint(model.params, out / checkpoint_name)
    return model


def _first_nonfinite(model: KagrmnDsgModel) -> str:
    for name, t in model.params.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            return name
    for name, t in model.params.items():
        if not np.all(np.isfinite(t.data)):
            return name
    return "<none: loss itself is non-finite>"


def train(cfg: ModelConfig, train_samples: Sequence[Sample], out_dir=None,
          eval_samples: Sequence[Sample] | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch Adam training; single-threaded and seeded end to end."""
    if not train_samples:
        raise TrainingError("no training samples")
    vocab, relations = build_vocabularies(train_samples, cfg.d_max)
    model = KagrmnDsgModel(cfg, vocab, relations)
    prepared = [model.prepare(s) for s in train_samples]
    eval_prepared = [model.prepare(s) for s in eval_samples] if eval_samples else None
    opt = Adam(model.params, lr=cfg.learning_rate)
    order_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)
    mask_rng = np.random.default_rng(cfg.seed + 2)
    result = TrainResult(model)
    best_acc = -1.0
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(prepared))
        total_loss = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [prepared[i] for i in order[start : start + cfg.batch_size]]
            with Tape() as tape:
                losses = []
                for prep in batch:
                    if cfg.aspect_unk_rate > 0 and mask_rng.random() < cfg.aspect_unk_rate:
                        prep = prep.mask_aspect(vocab.unk_id)
                    l, P = model.loss(prep, train=True, rng=dropout_rng)
                    losses.append(l)
                    correct += int(np.argmax(P.data) == prep.label)
                batch_loss = nx.mean(nx.stack(losses))
            value = batch_loss.item()
            tape.backward(batch_loss)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}; first offending parameter: "
                                    f"{_first_nonfinite(model)}")
            # parameters outside this batch's graph (e.g. no context nodes) get a zero gradient
            for t in model.params.tensors():
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
            opt.step()
            total_loss += value * len(batch)
        record = {"epoch": epoch, "loss": total_loss / len(prepared), "accuracy": correct / len(prepared)}
        if eval_prepared:
            metrics = evaluate_prepared(model, eval_prepared)
            record["eval_accuracy"] = metrics["accuracy"]
            record["eval_macro_f1"] = metrics["macro_f1"]
            if out_dir is not None and metrics["accuracy"] > best_acc:
                best_acc = metrics["accuracy"]
                result.best_eval = metrics
                save_artifacts(model, out_dir, BEST_CHECKPOINT)
        result.epoch_log.append(record)
        if on_epoch:
            on_epoch(record)
    if out_dir is not None:
        save_artifacts(model, out_dir)
        with open(Path(out_dir) / "train_log.jsonl", "w", encoding="utf-8") as fh:
            for rec in result.epoch_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return result


def evaluate_prepared(model: KagrmnDsgModel, prepared) -> dict:
    gold, pred = [], []
    for prep in prepared:
        gold.append(prep.label)
        pred.append(int(np.argmax(model.predict_proba(prep))))
    return compute_metrics(gold, pred)


def evaluate(model: KagrmnDsgModel, samples: Sequence[Sample]) -> dict:
    return evaluate_prepared(model, [model.prepare(s) for s in samples])


def predict(model: KagrmnDsgModel, samples: Sequence[Sample]) -> list[dict]:
    rows = []
    for s in samples:
        P = model.predict_proba(model.prepare(s))
        rows.append({"id": s.id, "distribution": [float(x) for x in P], "label": LABELS[int(np.argmax(P))]})
    return rows
