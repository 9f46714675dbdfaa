"""Levenshtein distance baselines.

Strings are compared code point by code point; transpositions are not a
primitive edit, so ``"ß"`` vs ``"ss"`` costs 2.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

__all__ = [
    "CostTable",
    "levenshtein",
    "weighted_levenshtein",
    "edit_script",
    "rank_by_edit_distance",
    "estimate_confusion_matrix",
]


def levenshtein(s: str, t: str) -> int:
    """Unit-cost edit distance with two-row dynamic programming."""
    if len(s) < len(t):
        s, t = t, s
    if not t:
        return len(s)
    prev = list(range(len(t) + 1))
    for i, a in enumerate(s, 1):
        cur = [i]
        append = cur.append
        for j, b in enumerate(t, 1):
            sub = prev[j - 1] + (a != b)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            append(min(sub, ins, dele))
        prev = cur
    return prev[-1]


@dataclass
class CostTable:
    """Per-event edit costs; anything not listed costs ``default``.

    ``sub[(a, b)]`` is the cost of reading ``a`` as ``b``; ``ins[c]`` of a
    spurious ``c``; ``dele[c]`` of losing ``c``.
    """

    sub: dict = field(default_factory=dict)
    ins: dict = field(default_factory=dict)
    dele: dict = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self):
        for table in (self.sub, self.ins, self.dele):
            for key, cost in table.items():
                if cost < 0 or math.isnan(cost):
                    raise ValueError(f"negative cost {cost} for {key!r}")
        if self.default < 0:
            raise ValueError("default cost must be non-negative")

    def substitution(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return self.sub.get((a, b), self.default)

    def insertion(self, c: str) -> float:
        return self.ins.get(c, self.default)

    def deletion(self, c: str) -> float:
        return self.dele.get(c, self.default)

    def to_text(self) -> str:
        """Tab-separated ``event  cost`` lines, sorted for stable output."""
        lines = [f"default\t{self.default!r}"]
        lines += [f"sub\t{a}\t{b}\t{c!r}" for (a, b), c in sorted(self.sub.items())]
        lines += [f"ins\t{a}\t{c!r}" for a, c in sorted(self.ins.items())]
        lines += [f"del\t{a}\t{c!r}" for a, c in sorted(self.dele.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CostTable":
        table = cls()
        for line in text.splitlines():
            if not line:
                continue
            kind, *rest = line.split("\t")
            if kind == "default":
                table.default = float(rest[0])
            elif kind == "sub":
                table.sub[(rest[0], rest[1])] = float(rest[2])
            elif kind == "ins":
                table.ins[rest[0]] = float(rest[1])
            elif kind == "del":
                table.dele[rest[0]] = float(rest[1])
            else:
                raise ValueError(f"unknown cost event {kind!r}")
        table.__post_init__()
        return table


def weighted_levenshtein(s: str, t: str, costs: CostTable | None = None) -> float:
    """Minimum total cost of editing ``s`` into ``t``."""
    if costs is None:
        return float(levenshtein(s, t))
    prev = [0.0]
    for b in t:
        prev.append(prev[-1] + costs.insertion(b))
    for a in s:
        cur = [prev[0] + costs.deletion(a)]
        da = costs.deletion(a)
        for j, b in enumerate(t, 1):
            cur.append(min(
                prev[j - 1] + costs.substitution(a, b),
                cur[j - 1] + costs.insertion(b),
                prev[j] + da,
            ))
        prev = cur
    return prev[-1]


def edit_script(s: str, t: str) -> list[tuple]:
    """One minimal unit-cost script turning ``s`` into ``t``.

    Events are ``("sub", a, b)``, ``("ins", b)``, ``("del", a)`` and
    ``("keep", a)``.  Backtracking prefers keep/substitute, then delete,
    then insert, so the script is deterministic.
    """
    n, m = len(s), len(t)
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        D[i][0] = i
    for j in range(m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i][j] = min(D[i - 1][j - 1] + (s[i - 1] != t[j - 1]),
                          D[i - 1][j] + 1, D[i][j - 1] + 1)
    script = []
    i, j = n, m
    while i or j:
        if i and j and D[i][j] == D[i - 1][j - 1] + (s[i - 1] != t[j - 1]):
            a, b = s[i - 1], t[j - 1]
            script.append(("keep", a) if a == b else ("sub", a, b))
            i, j = i - 1, j - 1
        elif i and D[i][j] == D[i - 1][j] + 1:
            script.append(("del", s[i - 1]))
            i -= 1
        else:
            script.append(("ins", t[j - 1]))
            j -= 1
    script.reverse()
    return script


def estimate_confusion_matrix(pairs: Iterable[tuple[str, str]]) -> CostTable:
    """Edit costs from aligned ``(ocr_text, gold_text)`` pairs.

    Each gold string is aligned to its OCR reading by a minimal unit-cost
    script.  Every possible event over the observed alphabet gets its count
    plus one; the cost is the negative log of its share of the total, scaled
    so the largest cost is 1.  Unseen characters fall back to cost 1.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no aligned pairs given")
    counts: Counter = Counter()
    alphabet: set[str] = set()
    for ocr, gold in pairs:
        alphabet.update(ocr)
        alphabet.update(gold)
        for event in edit_script(gold, ocr):
            if event[0] != "keep":
                counts[event] += 1
    chars = sorted(alphabet)
    events = [("sub", a, b) for a in chars for b in chars if a != b]
    events += [("ins", c) for c in chars] + [("del", c) for c in chars]
    if not events:
        return CostTable()
    total = sum(counts[e] + 1 for e in events)
    raw = {e: -math.log((counts[e] + 1) / total) for e in events}
    top = max(raw.values())
    table = CostTable()
    for e, cost in raw.items():
        cost = cost / top if top > 0 else 1.0
        if e[0] == "sub":
            table.sub[(e[1], e[2])] = cost
        elif e[0] == "ins":
            table.ins[e[1]] = cost
        else:
            table.dele[e[1]] = cost
    return table


class EditRanking(NamedTuple):
    hits: list
    seconds: float


def rank_by_edit_distance(query: str, vocab: Sequence[str], top_n: int | None = None,
                          costs: CostTable | None = None) -> EditRanking:
    """Exhaustive scan of ``vocab``: ascending distance, ties by vocab index.

    Returns the ``(token, distance)`` hits and the wall time of the scan.
    """
    start = time.perf_counter()
    if costs is None:
        dists = [levenshtein(query, tok) for tok in vocab]
    else:
        dists = [weighted_levenshtein(query, tok, costs) for tok in vocab]
    order = sorted(range(len(vocab)), key=lambda j: (dists[j], j))
    if top_n is not None:
        order = order[:top_n]
    hits = [(vocab[j], dists[j]) for j in order]
    return EditRanking(hits, time.perf_counter() - start)
