"""Synthetic corpus whose labels partly depend on aspect knowledge.

Sentences plant a sentiment cue next to the aspect. Three cues have a fixed
polarity; "hot" and "cold" flip polarity depending on whether the aspect is
a dish or a gadget, which only the retrieved description reveals. The
held-out split uses aspects never seen in training together with the
flipping cues, so a model can only get it right through the description.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..retrieval import EmbeddingTable, KnowledgeStore, RetrievalConfig, resolve
from .data import Sample

FOOD_TRAIN = ("pizza", "pasta", "sushi", "burger", "soup", "salad")
DEVICE_TRAIN = ("laptop", "screen", "battery", "keyboard", "mouse", "charger")
FOOD_TEST = ("taco", "curry")
DEVICE_TEST = ("tablet", "printer")
HOMONYM = "apple"

FIXED_CUES = {"great": "positive", "awful": "negative", "okay": "neutral"}
FLIP_CUES = {"hot": {"food": "positive", "device": "negative"},
             "cold": {"food": "negative", "device": "positive"}}

FOOD_DESC = ["a", "tasty", "dish", "you", "eat"]
DEVICE_DESC = ["an", "electronic", "gadget", "you", "use"]
DOMAIN_LABEL = "review"
HINTS = {"food": "dinner", "device": "office"}


@dataclass
class ToyCorpus:
    train: list[Sample]
    test: list[Sample]
    store: KnowledgeStore
    embeddings: EmbeddingTable

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(self.embeddings, DOMAIN_LABEL, alpha=0.5, stopwords=self.store.stopwords)


def _category(aspect: str) -> str:
    return "food" if aspect in FOOD_TRAIN + FOOD_TEST else "device"


def toy_knowledge() -> dict[str, list[list[str]]]:
    kb = {a: [FOOD_DESC] for a in FOOD_TRAIN + FOOD_TEST}
    kb.update({a: [DEVICE_DESC] for a in DEVICE_TRAIN + DEVICE_TEST})
    kb.update({f"mini {a}": list(v) for a, v in kb.items()})
    kb[HOMONYM] = [DEVICE_DESC, FOOD_DESC]
    return kb


def toy_embeddings(seed: int = 0, dim: int = 8) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    food_axis = np.eye(dim)[0]
    device_axis = np.eye(dim)[1]
    vectors = {}
    food_words = [*FOOD_TRAIN, *FOOD_TEST, "tasty", "dish", "eat", "dinner"]
    device_words = [*DEVICE_TRAIN, *DEVICE_TEST, "electronic", "gadget", "use", "office"]
    for w in food_words:
        vectors[w] = food_axis + 0.1 * rng.normal(size=dim)
    for w in device_words:
        vectors[w] = device_axis + 0.1 * rng.normal(size=dim)
    for w in [*FIXED_CUES, *FLIP_CUES, "service", "think", "mini", "but"]:
        vectors[w] = 0.3 * rng.normal(size=dim)
    vectors[HOMONYM] = 0.5 * (food_axis + device_axis)
    vectors[DOMAIN_LABEL] = 0.2 * np.ones(dim)
    return EmbeddingTable(vectors)


def _sentence(rng, aspect: str, cue: str, hint: str | None, compound: bool):
    """Build tokens, aspect span and a dependency parse for one template."""
    asp = ["mini", aspect] if compound else [aspect]
    template = int(rng.integers(4))
    toks: list[str] = []
    heads: list[int] = []
    rels: list[str] = []

    def push(tok, head, rel):
        toks.append(tok)
        heads.append(head)
        rels.append(rel)
        return len(toks) - 1

    # heads are patched once the governing token's index is known
    prefix_root = None
    if template == 2:
        push("i", None, "nsubj")
        prefix_root = push("think", -1, "root")
    det = push("the", None, "det")
    start = len(toks)
    if compound:
        push("mini", None, "compound")
    head_noun = push(aspect, None, "nsubj")
    cop = push("was" if template == 1 else "is", None, "cop")
    adv = push("really", None, "advmod") if template == 1 else None
    cue_i = push(cue, -1 if prefix_root is None else prefix_root, "root" if prefix_root is None else "ccomp")
    heads[det] = head_noun
    if compound:
        heads[start] = head_noun
    heads[head_noun] = cue_i
    heads[cop] = cue_i
    if adv is not None:
        heads[adv] = cue_i
    if prefix_root is not None:
        heads[0] = prefix_root
    if template == 3:
        other = str(rng.choice(list(FIXED_CUES)))
        but = push("but", None, "cc")
        det2 = push("the", None, "det")
        svc = push("service", None, "nsubj")
        cop2 = push("is", None, "cop")
        cue2 = push(other, cue_i, "conj")
        heads[but] = cue2
        heads[det2] = svc
        heads[svc] = cue2
        heads[cop2] = cue2
    if hint is not None:
        at = push("at", cue_i, "prep")
        push(hint, at, "pobj")
    return toks, (start, head_noun + 1), heads, rels


def _make_sample(rng, idx, prefix, aspect, cue, store, rcfg, homonym_category=None) -> Sample:
    category = homonym_category or _category(aspect)
    hint = HINTS[category] if homonym_category else None
    compound = homonym_category is None and rng.random() < 0.2
    toks, span, heads, rels = _sentence(rng, aspect, cue, hint, compound)
    label = FIXED_CUES[cue] if cue in FIXED_CUES else FLIP_CUES[cue][category]
    desc = resolve(toks[span[0]:span[1]], toks, store, rcfg)
    return Sample(f"{prefix}-{idx:04d}", toks, span, label, heads, rels, desc)


def generate_toy(seed: int = 0, n_train: int = 200, n_test: int = 60) -> ToyCorpus:
    rng = np.random.default_rng(seed)
    store = KnowledgeStore(toy_knowledge())
    emb = toy_embeddings(seed)
    rcfg = RetrievalConfig(emb, DOMAIN_LABEL, alpha=0.5, stopwords=store.stopwords)
    cues = [*FIXED_CUES, *FLIP_CUES]
    aspects = FOOD_TRAIN + DEVICE_TRAIN
    train = []
    for i in range(n_train):
        cue = cues[int(rng.integers(len(cues)))]
        if rng.random() < 0.1:
            cat = "food" if rng.random() < 0.5 else "device"
            train.append(_make_sample(rng, i, "train", HOMONYM, cue, store, rcfg, homonym_category=cat))
        else:
            aspect = aspects[int(rng.integers(len(aspects)))]
            train.append(_make_sample(rng, i, "train", aspect, cue, store, rcfg))
    test = []
    held_out = FOOD_TEST + DEVICE_TEST
    flip = list(FLIP_CUES)
    for i in range(n_test):
        aspect = held_out[i % len(held_out)]
        cue = flip[(i // len(held_out)) % len(flip)]
        test.append(_make_sample(rng, i, "test", aspect, cue, store, rcfg))
    return ToyCorpus(train, test, store, emb)


def toy_config(variant: str = "M0", seed: int = 0, **overrides):
    """Narrow configuration under which the toy corpus is learnable in 50 epochs.

    Aspect tokens are masked to UNK for 30% of training samples so that the
    description, not the aspect word, carries the category.
    """
    from .config import ModelConfig

    base = dict(d_e=32, enc_heads=2, self_heads=2, time_steps=2, epochs=50, dropout=0.1,
                learning_rate=3e-3, aspect_unk_rate=0.3, domain_label=DOMAIN_LABEL)
    base.update(overrides)
    return ModelConfig(variant=variant, seed=seed, **base)
