"""Command-line entry point: ``kagrmn-dsg <subcommand> ...``.

Every subcommand logs JSON lines on stdout. Settings come from an optional
``--config`` JSON file, overridden by ``--seed``, ``--variant`` and
``--time-steps``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..retrieval import EmbeddingTable, KnowledgeStore, Resolution, RetrievalConfig, coverage, resolve
from ..syntaxgraph import RelationVocab, build_dense, build_sparse, position_weights
from .config import VARIANTS, ModelConfig
from .data import load_dataset, save_dataset
from .gradcheck import gradcheck
from .toy import generate_toy
from .training import emit_json, evaluate, load_model, predict, train

log = logging.getLogger("kagrmn_dsg")


def resolve_config(args) -> ModelConfig:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.variant is not None:
        changes["variant"] = args.variant
    if args.time_steps is not None:
        changes["time_steps"] = args.time_steps
    return cfg.replace(**changes) if changes else cfg


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_retrieve(args) -> int:
    cfg = resolve_config(args)
    store = KnowledgeStore.load(args.kb)
    table = EmbeddingTable.load(args.embeddings)
    label = args.domain_label or cfg.domain_label
    if label is None:
        raise SystemExit("retrieve: a domain label is needed (--domain-label or config domain_label)")
    rcfg = RetrievalConfig(table, label, alpha=cfg.alpha, stopwords=store.stopwords)
    samples = load_dataset(args.data)
    out, resolutions = [], []
    for s in samples:
        desc = resolve(s.aspect_tokens, s.tokens, store, rcfg)
        resolutions.append(Resolution(s.aspect_tokens, desc))
        s.description_tokens = desc
        out.append(s)
    save_dataset(out, args.out)
    emit_json({"event": "retrieve", "samples": len(out), "coverage": coverage(resolutions), "out": str(args.out)})
    return 0


def cmd_build_graphs(args) -> int:
    cfg = resolve_config(args)
    samples = load_dataset(args.data)
    relations = RelationVocab(d_max=cfg.d_max)
    for s in samples:
        for r in s.dep_rels:
            relations.add(r)
    stream = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for s in samples:
            sparse = build_sparse(s.parse, s.aspect_span)
            dense = build_dense(s.parse, s.aspect_span, relations, cfg.d_max)
            w = position_weights(sparse.num_nodes, sparse.aspect_node)
            emit_json({"id": s.id, "sparse": sparse.to_json(), "dense": dense.to_json(),
                       "position_weights": [float(x) for x in w]}, stream)
    finally:
        if args.out:
            stream.close()
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    train_samples = load_dataset(args.data)
    eval_samples = load_dataset(args.eval_data) if args.eval_data else None
    out = Path(args.out)
    emit_json({"event": "config", **cfg.to_dict()})
    result = train(cfg, train_samples, out, eval_samples, on_epoch=lambda rec: emit_json({"event": "epoch", **rec}))
    metrics = {"train": evaluate(result.model, train_samples)}
    if eval_samples:
        metrics["eval"] = evaluate(result.model, eval_samples)
        if result.best_eval is not None:
            metrics["best_eval"] = result.best_eval
    _write_json(out / "metrics.json", metrics)
    emit_json({"event": "done", "checkpoint": str(out / "model.ckpt"), **{k: v["accuracy"] for k, v in metrics.items()}})
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model, args.checkpoint)
    metrics = evaluate(model, load_dataset(args.data))
    _write_json(Path(args.out or args.model) / "metrics.json", metrics)
    emit_json({"event": "eval", **metrics})
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model, args.checkpoint)
    rows = predict(model, load_dataset(args.data))
    stream = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for row in rows:
            emit_json(row, stream)
    finally:
        if args.out:
            stream.close()
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(resolve_config(args), samples_per_tensor=args.samples, seed=args.seed or 0)
    emit_json({"event": "gradcheck", **report.to_dict()})
    if args.out:
        _write_json(Path(args.out), report.to_dict())
    return 0 if report.passed else 1


def cmd_gen_toy(args) -> int:
    corpus = generate_toy(args.seed or 0, args.n_train, args.n_test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(corpus.train, out / "train.jsonl")
    save_dataset(corpus.test, out / "test.jsonl")
    _write_json(out / "kb.json", corpus.store.to_json())
    corpus.embeddings.save(out / "embeddings.txt")
    emit_json({"event": "gen-toy", "train": len(corpus.train), "test": len(corpus.test), "out": str(out)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file mirroring ModelConfig")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=VARIANTS, type=str.upper)
    common.add_argument("--time-steps", type=int)
    common.add_argument("--out")

    parser = argparse.ArgumentParser(prog="kagrmn-dsg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retrieve", parents=[common], help="fill description_tokens from a knowledge store")
    p.add_argument("--data", required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--domain-label")
    p.set_defaults(func=cmd_retrieve, out_required=True)

    p = sub.add_parser("build-graphs", parents=[common], help="emit sparse/dense graphs per sample")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint directory")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train, out_required=True)

    for name, func, help_ in (("eval", cmd_eval, "accuracy, macro-F1 and confusion matrix"),
                              ("predict", cmd_predict, "per-sample distributions as JSON lines")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--model", required=True, help="directory written by train")
        p.add_argument("--checkpoint", default="model.ckpt")
        p.add_argument("--data", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check; exit 1 on failure")
    p.add_argument("--samples", type=int, default=3, help="entries checked per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-toy", parents=[common], help="write the synthetic corpus")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=60)
    p.set_defaults(func=cmd_gen_toy, out_required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_required", False) and not args.out:
        parser.error(f"{args.command}: --out is required")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early
        sys.stdout = None
        return 0
    except (ValueError, OSError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
