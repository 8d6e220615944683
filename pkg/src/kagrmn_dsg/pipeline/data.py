"""JSONL dataset records."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..heads import LABELS
from ..syntaxgraph import DependencyParse, ParseError

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    tokens: list[str]
    aspect_span: tuple[int, int]
    label: str
    dep_heads: list[int]
    dep_rels: list[str]
    description_tokens: list[str] | None = None

    def __post_init__(self):
        self.aspect_span = tuple(self.aspect_span)
        self.validate()

    def validate(self):
        n = len(self.tokens)
        if n == 0:
            raise DatasetError("tokens: empty")
        if len(self.aspect_span) != 2:
            raise DatasetError("aspect_span: expected [start, end)")
        s, e = self.aspect_span
        if not 0 <= s < e <= n:
            raise DatasetError(f"aspect_span: {list(self.aspect_span)} invalid for {n} tokens")
        if self.label not in LABELS:
            raise DatasetError(f"label: {self.label!r} not in {LABELS}")
        if len(self.dep_heads) != n or len(self.dep_rels) != n:
            raise DatasetError("dep_heads/dep_rels: length differs from tokens")
        try:
            DependencyParse(self.dep_heads, self.dep_rels)
        except ParseError as e:
            raise DatasetError(f"dep_heads: {e}") from None
        if self.description_tokens is not None and not self.description_tokens:
            raise DatasetError("description_tokens: empty list (omit the field instead)")

    @property
    def aspect_tokens(self) -> list[str]:
        s, e = self.aspect_span
        return self.tokens[s:e]

    @property
    def parse(self) -> DependencyParse:
        return DependencyParse(self.dep_heads, self.dep_rels)

    def to_dict(self) -> dict:
        d = {"id": self.id, "tokens": list(self.tokens), "aspect_span": list(self.aspect_span),
             "label": self.label, "dep_heads": list(self.dep_heads), "dep_rels": list(self.dep_rels)}
        if self.description_tokens is not None:
            d["description_tokens"] = list(self.description_tokens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        required = ("id", "tokens", "aspect_span", "label", "dep_heads", "dep_rels")
        for key in required:
            if key not in d:
                raise DatasetError(f"{key}: missing")
        return cls(str(d["id"]), list(d["tokens"]), tuple(d["aspect_span"]), d["label"],
                   list(d["dep_heads"]), list(d["dep_rels"]), d.get("description_tokens"))


def load_dataset(path) -> list[Sample]:
    samples = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            if not isinstance(raw, dict):
                raise DatasetError("record is not a JSON object")
            samples.append(Sample.from_dict(raw))
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
        except (DatasetError, TypeError, ValueError) as e:
            raise DatasetError(f"{path}:{lineno}: {e}") from None
    if not samples:
        log.warning("dataset %s is empty", path)
    return samples


def save_dataset(samples: Iterable[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict()) + "\n")
