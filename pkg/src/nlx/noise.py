"""Synthetic OCR corruption and corpus generation.

A word is corrupted with probability ``word_rate``; a corrupted word has
each character independently survive, get deleted, substituted, or followed
by a spurious insertion.  Substitutions follow the channel's confusion
weights where the character has any, otherwise they are uniform over the
charset.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .corpus import AlignmentRecord, Candidate
from .phoc import DEFAULT_CHARSET

__all__ = [
    "NoiseChannel",
    "OCR_CONFUSIONS",
    "PROFILES",
    "corrupt",
    "load_lexicon",
    "generate_corpus",
]

# Visually motivated confusions, weights relative per source character.
OCR_CONFUSIONS = {
    ("e", "c"): 4, ("e", "o"): 2, ("c", "e"): 3, ("o", "a"): 2, ("a", "o"): 2,
    ("n", "u"): 3, ("u", "n"): 3, ("n", "m"): 1, ("m", "n"): 2, ("h", "b"): 2,
    ("b", "h"): 2, ("l", "i"): 3, ("i", "l"): 3, ("l", "1"): 2, ("i", "1"): 1,
    ("t", "f"): 2, ("f", "t"): 2, ("r", "n"): 1, ("s", "a"): 1, ("ä", "a"): 4,
    ("ö", "o"): 4, ("ü", "u"): 4, ("ß", "B"): 3, ("ß", "s"): 2, ("S", "5"): 1,
    ("I", "l"): 3, ("O", "0"): 2, ("d", "a"): 1, ("g", "q"): 1, ("k", "h"): 1,
    ("v", "y"): 1, ("w", "v"): 1, ("D", "O"): 1, ("E", "F"): 1, ("R", "B"): 1,
}


@dataclass(frozen=True)
class NoiseChannel:
    substitution: float = 0.0
    deletion: float = 0.0
    insertion: float = 0.0
    confusions: dict = field(default_factory=dict, hash=False)
    seed: int = 0
    charset: str = DEFAULT_CHARSET
    word_rate: float = 1.0

    def __post_init__(self):
        rates = (self.substitution, self.deletion, self.insertion)
        if any(not 0.0 <= r <= 1.0 for r in rates + (self.word_rate,)):
            raise ValueError(f"rates must lie in [0, 1]: {rates + (self.word_rate,)}")
        if sum(rates) > 1.0 + 1e-12:
            raise ValueError(f"rates sum to {sum(rates)} > 1")
        table: dict[str, tuple[list[str], np.ndarray]] = {}
        for (a, b), w in sorted(self.confusions.items()):
            if w < 0:
                raise ValueError(f"negative confusion weight for {(a, b)!r}")
            targets, weights = table.setdefault(a, ([], []))
            targets.append(b)
            weights.append(float(w))
        object.__setattr__(self, "_table", {
            a: (t, np.asarray(w) / sum(w)) for a, (t, w) in table.items() if sum(w) > 0
        })

    def with_seed(self, seed: int) -> "NoiseChannel":
        return NoiseChannel(self.substitution, self.deletion, self.insertion,
                            self.confusions, seed, self.charset, self.word_rate)


# Errors cluster by word: a word is either read cleanly or sent through the
# character channel.  The default profile puts about 60% of corrupted lexicon
# words within edit distance 2 of their source (checked in the test suite).
PROFILES = {
    "none": NoiseChannel(),
    "light": NoiseChannel(0.8, 0.1, 0.1, word_rate=0.2),
    "default": NoiseChannel(0.8, 0.1, 0.1, word_rate=0.45),
    "heavy": NoiseChannel(0.8, 0.1, 0.1, word_rate=0.7),
    "per-char": NoiseChannel(0.45, 0.07, 0.07),
    "confusions": NoiseChannel(0.8, 0.1, 0.1, OCR_CONFUSIONS, word_rate=0.45),
}


def _rng(channel: NoiseChannel, word: str, position: int) -> np.random.Generator:
    return np.random.default_rng([channel.seed & (2**64 - 1), position, zlib.crc32(word.encode("utf-8"))])


def _draw(channel: NoiseChannel, rng: np.random.Generator, source: str) -> str:
    entry = channel._table.get(source)
    if entry is not None:
        targets, probs = entry
        return targets[int(rng.choice(len(targets), p=probs))]
    pool = channel.charset.replace(source, "") if source else channel.charset
    return pool[int(rng.integers(len(pool)))]


def corrupt(word: str, channel: NoiseChannel, position: int = 0) -> str:
    """Noisy reading of ``word``; deterministic in (word, channel, position).

    Insertions consult confusion weights keyed ``("", c)`` if any exist.
    """
    rng = _rng(channel, word, position)
    if rng.random() >= channel.word_rate:
        return word
    d, s, i = channel.deletion, channel.substitution, channel.insertion
    out = []
    for ch in word:
        u = rng.random()
        if u < d:
            continue
        if u < d + s:
            out.append(_draw(channel, rng, ch))
        elif u < d + s + i:
            out.append(ch)
            out.append(_draw(channel, rng, ""))
        else:
            out.append(ch)
    return "".join(out)


def load_lexicon() -> list[tuple[str, float]]:
    """Bundled German lexicon with Zipf weights (1 / frequency rank)."""
    text = resources.files("nlx").joinpath("data/german_lexicon.txt").read_text("utf-8")
    words = [w.strip() for w in text.splitlines() if w.strip()]
    return [(w, 1.0 / rank) for rank, w in enumerate(words, 1)]


def generate_corpus(lexicon: Sequence[tuple[str, float]], pages: int, words_per_page: int,
                    channel: NoiseChannel) -> tuple[list[Candidate], list[AlignmentRecord]]:
    """Synthetic OCR token list plus its gold alignment.

    Words are drawn by frequency, laid out on a grid of ten words per line,
    and corrupted through ``channel``.  A reading that loses every character
    becomes a single random character, since OCR still reports the ink blob.
    """
    if not lexicon:
        raise ValueError("lexicon is empty")
    words = [w for w, _ in lexicon]
    weights = np.asarray([f for _, f in lexicon], dtype=np.float64)
    weights = weights / weights.sum()
    candidates, alignments = [], []
    for page_no in range(pages):
        page_id = f"page{page_no + 1:03d}"
        rng = np.random.default_rng([channel.seed & (2**64 - 1), 1 + page_no])
        picks = rng.choice(len(words), size=words_per_page, p=weights)
        x = 0
        for word_id, pick in enumerate(picks):
            gold = words[int(pick)]
            ocr = corrupt(gold, channel, position=page_no * words_per_page + word_id)
            if not ocr:
                ocr = channel.charset[int(rng.integers(len(channel.charset)))]
            if word_id % 10 == 0:
                x = 50
            y = 60 + 40 * (word_id // 10)
            width = 18 * len(gold)
            conf = 100.0 if ocr == gold else 60.0
            candidates.append(Candidate(page_id, word_id, ocr, (x, y, x + width, y + 32), conf))
            alignments.append(AlignmentRecord(page_id, word_id, ocr, gold))
            x += width + 14
    return candidates, alignments
