"""Pyramidal histogram of characters (PHOC) word encoding.

A word of ``n`` characters is cut into ``level`` equal regions for every
pyramid level.  Character ``k`` occupies ``[k/n, (k+1)/n]`` and is assigned
to every region covering at least half of that interval.  The vector is the
concatenation, level by level and region by region, of one presence bit per
charset entry.

Bit layout: level-major, then region index within the level, then charset
index.  Bit ``(level_pos, r, c)`` therefore lives at
``len(charset) * (sum(levels[:level_pos]) + r) + c``.

All boundary tests are done on integers (cross-multiplied), so the exact-50%
cases are deterministic and assign a character to both neighbouring regions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DEFAULT_CHARSET",
    "DEFAULT_LEVELS",
    "PhocConfig",
    "PhocError",
    "occupancy",
    "assign_regions",
    "encode",
    "encode_many",
]

# 52 ASCII letters, 10 digits, German (7) and Polish (18) diacritics, and 9
# punctuation marks: 96 entries.  Shipped as a constant, not a claim about any
# particular historical character inventory.
DEFAULT_CHARSET = (
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789"
    "äöüÄÖÜß"
    "ąćęłńóśźżĄĆĘŁŃÓŚŹŻ"
    ".,;:!?-'\""
)
DEFAULT_LEVELS = (1, 2, 4, 8)


class PhocError(ValueError):
    """Raised for invalid configurations, positions, or un-encodable words."""


@dataclass(frozen=True)
class PhocConfig:
    charset: str = DEFAULT_CHARSET
    levels: tuple[int, ...] = DEFAULT_LEVELS
    case_sensitive: bool = True
    _lookup: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        charset = "".join(self.charset)
        levels = tuple(int(level) for level in self.levels)
        object.__setattr__(self, "charset", charset)
        object.__setattr__(self, "levels", levels)
        if not charset:
            raise PhocError("charset is empty")
        if len(set(charset)) != len(charset):
            raise PhocError("charset entries must be unique")
        if not levels:
            raise PhocError("at least one level is required")
        if any(level < 1 for level in levels):
            raise PhocError(f"levels must be positive: {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise PhocError(f"levels must be strictly increasing: {levels}")

        lookup: dict[str, int] = {}
        for i, ch in enumerate(charset):
            key = ch if self.case_sensitive else ch.lower()
            lookup.setdefault(key, i)
        object.__setattr__(self, "_lookup", lookup)

    def dimension(self) -> int:
        return len(self.charset) * sum(self.levels)

    def index_of(self, ch: str) -> int | None:
        """Charset index of ``ch``, or None when it is outside the charset."""
        if not self.case_sensitive:
            ch = ch.lower()
        return self._lookup.get(ch)

    def to_dict(self) -> dict:
        return {
            "charset": self.charset,
            "levels": list(self.levels),
            "case_sensitive": self.case_sensitive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhocConfig":
        return cls(
            charset=d["charset"],
            levels=tuple(d["levels"]),
            case_sensitive=bool(d["case_sensitive"]),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "PhocConfig":
        return cls.from_dict(json.loads(text))


def _check_position(k: int, n: int) -> None:
    if n < 1 or not 0 <= k < n:
        raise PhocError(f"position {k} outside word of length {n}")


def occupancy(k: int, n: int) -> tuple[Fraction, Fraction]:
    """Closed interval ``[k/n, (k+1)/n]`` occupied by character ``k``."""
    _check_position(k, n)
    return Fraction(k, n), Fraction(k + 1, n)


def _regions(k: int, n: int, level: int) -> tuple[int, ...]:
    # Scale both intervals by n * level: the character spans
    # [k*level, (k+1)*level] and region r spans [r*n, (r+1)*n].  The
    # character has width `level`, so the test is 2 * overlap >= level.
    lo, hi = k * level, (k + 1) * level
    out = []
    for r in range(lo // n, min(level, -(-hi // n))):
        overlap = min(hi, (r + 1) * n) - max(lo, r * n)
        if 2 * overlap >= level:
            out.append(r)
    return tuple(out)


def assign_regions(k: int, n: int, level: int) -> set[int]:
    """Regions of ``level`` that hold at least half of character ``k``.

    Empty when ``level > 2 * n``: regions narrower than half a character
    never hold half of it.
    """
    _check_position(k, n)
    if level < 1:
        raise PhocError(f"level must be positive, got {level}")
    return set(_regions(k, n, level))


@lru_cache(maxsize=4096)
def _offsets(n: int, levels: tuple[int, ...], nchars: int) -> tuple[np.ndarray, ...]:
    """Per position, the bit offsets (before adding the charset index)."""
    per_pos = []
    for k in range(n):
        offs = []
        base = 0
        for level in levels:
            offs.extend(nchars * (base + r) for r in _regions(k, n, level))
            base += level
        per_pos.append(np.asarray(offs, dtype=np.int64))
    return tuple(per_pos)


def encode(word: str, config: PhocConfig | None = None) -> np.ndarray:
    """PHOC bits of ``word`` as a ``uint8`` array of 0/1 values.

    Characters outside the charset still count toward the word length and
    shift their neighbours' occupancy; they just set no bits.
    """
    config = config or PhocConfig()
    out = np.zeros(config.dimension(), dtype=np.uint8)
    _encode_into(word, config, out)
    return out


def _encode_into(word: str, config: PhocConfig, out: np.ndarray) -> None:
    n = len(word)
    if n == 0:
        raise PhocError("cannot encode an empty word")
    idx = [config.index_of(ch) for ch in word]
    if all(i is None for i in idx):
        raise PhocError(f"word {word!r} has no characters in the charset")
    offsets = _offsets(n, config.levels, len(config.charset))
    for k, ci in enumerate(idx):
        if ci is not None:
            out[offsets[k] + ci] = 1


def encode_many(words: Iterable[str], config: PhocConfig | None = None,
                strict: bool = True) -> np.ndarray:
    """Stack the encodings of ``words`` into an ``(m, d)`` uint8 matrix.

    With ``strict=False`` un-encodable words become all-zero rows instead of
    raising.
    """
    config = config or PhocConfig()
    words = list(words)
    out = np.zeros((len(words), config.dimension()), dtype=np.uint8)
    for row, word in zip(out, words):
        try:
            _encode_into(word, config, row)
        except PhocError:
            if strict:
                raise
    return out


def split_levels(bits: np.ndarray, config: PhocConfig) -> list[np.ndarray]:
    """View ``bits`` as one ``(level, nchars)`` array per pyramid level."""
    nchars = len(config.charset)
    out = []
    start = 0
    for level in config.levels:
        stop = start + level * nchars
        out.append(np.asarray(bits[start:stop]).reshape(level, nchars))
        start = stop
    return out


def pack(bits: np.ndarray) -> np.ndarray:
    """Pack 0/1 rows 8 per byte (MSB first), each row padded to a byte boundary."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=-1)


def unpack(packed: np.ndarray, dimension: int) -> np.ndarray:
    return np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1, count=dimension)


def words_in_charset(words: Sequence[str], config: PhocConfig) -> list[bool]:
    return [any(config.index_of(ch) is not None for ch in w) for w in words]
