"""Labeled request examples with lightweight TF-IDF retrieval.

Scores are cosine similarities between raw term-frequency vectors weighted
by a smoothed inverse document frequency, ln(1 + N / (1 + df)). Everything
is deterministic: ties break by ascending entry id.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from slicegraph.domain import IntentLabel, ValidationError

_TOKEN_RE = re.compile(r"[^a-z0-9\s]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class KbEntry:
    id: int
    text: str
    label: IntentLabel

    def __post_init__(self) -> None:
        if not self.text:
            raise ValidationError(f"empty text for kb entry {self.id}")


class KnowledgeBase:
    def __init__(self, entries: list[KbEntry]):
        ids = [e.id for e in entries]
        for eid in ids:
            if ids.count(eid) > 1:
                raise ValidationError(f"duplicate kb entry id {eid}")
        self.entries = sorted(entries, key=lambda e: e.id)
        self._tokens = {e.id: tokenize(e.text) for e in self.entries}
        df: dict[str, int] = {}
        for tokens in self._tokens.values():
            for term in set(tokens):
                df[term] = df.get(term, 0) + 1
        n = len(self.entries)
        self._idf = {term: math.log(1 + n / (1 + count)) for term, count in df.items()}
        self._vectors = {
            e.id: self._vectorize(self._tokens[e.id]) for e in self.entries
        }

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self, entry_id: int) -> KbEntry:
        for entry in self.entries:
            if entry.id == entry_id:
                return entry
        raise KeyError(entry_id)

    def without(self, entry_id: int) -> KnowledgeBase:
        """Copy with one entry removed (leave-one-out evaluation)."""
        return KnowledgeBase([e for e in self.entries if e.id != entry_id])

    def _vectorize(self, tokens: list[str]) -> dict[str, float]:
        counts: dict[str, int] = {}
        for term in tokens:
            counts[term] = counts.get(term, 0) + 1
        return {
            term: count * self._idf[term]
            for term, count in counts.items()
            if term in self._idf
        }

    def score(self, query: str, entry: KbEntry) -> float:
        q = self._vectorize(tokenize(query))
        d = self._vectors[entry.id]
        dot = sum(w * d.get(term, 0.0) for term, w in q.items())
        if dot == 0.0:
            return 0.0
        nq = math.sqrt(sum(w * w for w in q.values()))
        nd = math.sqrt(sum(w * w for w in d.values()))
        return dot / (nq * nd)


def retrieve(kb: KnowledgeBase, query: str, k: int) -> list[tuple[KbEntry, float]]:
    """Top-k entries by TF-IDF cosine; zero-score entries never appear."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [(entry, kb.score(query, entry)) for entry in kb.entries]
    scored = [(entry, s) for entry, s in scored if s > 0.0]
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return scored[:k]


def load_kb(path: str | Path) -> KnowledgeBase:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"kb parse error at line {exc.lineno}: {exc.msg}") from exc
    return kb_from_list(data)


def kb_from_list(data: list) -> KnowledgeBase:
    if not isinstance(data, list):
        raise ValidationError("kb file must be a JSON array")
    entries = [
        KbEntry(
            id=int(item["id"]),
            text=str(item["text"]),
            label=IntentLabel.from_dict(item["label"]),
        )
        for item in data
    ]
    return KnowledgeBase(entries)


def default_kb() -> KnowledgeBase:
    raw = resources.files("slicegraph.data").joinpath("kb_default.json").read_text("utf-8")
    return kb_from_list(json.loads(raw))
