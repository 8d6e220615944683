"""Aspect description lookup with embedding-similarity disambiguation.

Among several candidate descriptions for an aspect, the winner maximises

    cos(alpha * avg(context) + (1 - alpha) * e(domain_label), avg(candidate))

where ``avg`` is the mean static word embedding over non-stop-word tokens.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class RetrievalError(ValueError):
    pass


def default_stopwords() -> frozenset[str]:
    text = resources.files("kagrmn_dsg.data").joinpath("stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


# Ordered longest-first; each rule is (suffix, replacement, minimum remaining stem length).
_SUFFIX_RULES = (
    ("ies", "y", 2),
    ("sses", "ss", 1),
    ("shes", "sh", 1),
    ("ches", "ch", 1),
    ("xes", "x", 1),
    ("ing", "", 3),
    ("ied", "y", 2),
    ("ed", "", 3),
    ("s", "", 2),
)
_KEEP_S = ("ss", "us", "is")


def lemmatize(token: str) -> str:
    """Crude suffix stripping for plural nouns and common verb endings."""
    w = token.lower()
    for suffix, repl, min_stem in _SUFFIX_RULES:
        if w.endswith(suffix) and len(w) - len(suffix) >= min_stem:
            if suffix == "s" and w.endswith(_KEEP_S):
                continue
            return w[: len(w) - len(suffix)] + repl
    return w


def normalize_key(tokens: Sequence[str], stopwords: frozenset[str]) -> str:
    kept = [lemmatize(t) for t in tokens if t.lower() not in stopwords]
    if not kept:
        kept = [lemmatize(t) for t in tokens]
    return " ".join(kept)


class EmbeddingTable:
    def __init__(self, vectors: Mapping[str, np.ndarray]):
        self.vectors = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise RetrievalError(f"inconsistent embedding widths {sorted(dims)}")
        self.dim = next(iter(dims))[0] if dims else 0

    def __contains__(self, token: str):
        return token.lower() in self.vectors

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[token.lower()]

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        vectors = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            try:
                vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise RetrievalError(f"{path}:{lineno}: non-numeric embedding value") from None
        return cls(vectors)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok, vec in self.vectors.items():
                fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


@dataclass
class RetrievalConfig:
    embeddings: EmbeddingTable
    domain_label: str
    alpha: float = 0.5
    stopwords: frozenset[str] = field(default_factory=default_stopwords)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise RetrievalError(f"alpha={self.alpha} outside [0, 1]")
        if self.domain_label not in self.embeddings:
            raise RetrievalError(f"domain label {self.domain_label!r} has no embedding")


class KnowledgeStore:
    """Aspect key -> candidate descriptions (token lists)."""

    def __init__(self, entries: Mapping[str, Sequence[Sequence[str]]], stopwords: frozenset[str] | None = None):
        self.stopwords = default_stopwords() if stopwords is None else stopwords
        self.entries: dict[str, list[list[str]]] = {}
        for key, cands in entries.items():
            if not cands:
                raise RetrievalError(f"aspect {key!r} has no candidate descriptions")
            norm = normalize_key(key.split(), self.stopwords)
            self.entries.setdefault(norm, []).extend([list(c) for c in cands])

    def candidates(self, aspect_tokens: Sequence[str]) -> list[list[str]] | None:
        return self.entries.get(normalize_key(aspect_tokens, self.stopwords))

    @classmethod
    def load(cls, path, stopwords: frozenset[str] | None = None) -> "KnowledgeStore":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise RetrievalError(f"{path}: expected a JSON object")
        entries = {}
        for key, cands in raw.items():
            try:
                entries[key] = [list(c["tokens"]) for c in cands]
            except (TypeError, KeyError):
                raise RetrievalError(f"{path}: entry {key!r} must be a list of {{'tokens': [...]}}") from None
        return cls(entries, stopwords)

    def to_json(self) -> dict:
        return {k: [{"tokens": c} for c in v] for k, v in self.entries.items()}


def avg_embedding(tokens: Sequence[str], table: EmbeddingTable, stopwords: frozenset[str] = frozenset()) -> np.ndarray:
    vecs = [table[t] for t in tokens if t.lower() not in stopwords and t in table]
    if not vecs:
        raise RetrievalError(f"no embeddable tokens in {list(tokens)!r}")
    return np.mean(vecs, axis=0)


def similarity(context_tokens: Sequence[str], candidate_tokens: Sequence[str], cfg: RetrievalConfig) -> float:
    query = cfg.alpha * avg_embedding(context_tokens, cfg.embeddings, cfg.stopwords) \
        + (1.0 - cfg.alpha) * cfg.embeddings[cfg.domain_label]
    cand = avg_embedding(candidate_tokens, cfg.embeddings, cfg.stopwords)
    nq, nc = np.linalg.norm(query), np.linalg.norm(cand)
    if nq == 0.0 or nc == 0.0:
        raise RetrievalError("zero-norm vector in similarity")
    return float(np.clip(query @ cand / (nq * nc), -1.0, 1.0))


def resolve(aspect_tokens: Sequence[str], context_tokens: Sequence[str], store: KnowledgeStore,
            cfg: RetrievalConfig) -> list[str] | None:
    """Best description for the aspect, or None when the store has no entry."""
    cands = store.candidates(aspect_tokens)
    if cands is None:
        return None
    if len(cands) == 1:
        return list(cands[0])
    best, best_score = 0, -math.inf
    for i, cand in enumerate(cands):
        try:
            score = similarity(context_tokens, cand, cfg)
        except RetrievalError:
            # an unscorable candidate (or context) loses to anything scorable
            continue
        if score > best_score:
            best, best_score = i, score
    return list(cands[best])


@dataclass
class Resolution:
    aspect: list[str]
    description: list[str] | None

    @property
    def resolved(self) -> bool:
        return self.description is not None


def coverage(resolutions: Sequence[Resolution]) -> float:
    if not resolutions:
        return 0.0
    return sum(r.resolved for r in resolutions) / len(resolutions)
