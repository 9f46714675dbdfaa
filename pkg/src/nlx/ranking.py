"""Cosine and CSLS scoring over an exhaustive dense index.

Scores are *similarities*: higher is better.  CSLS is
``2 cos(q, c) - r_k(q) - r_k(c)`` where ``r_k(v)`` is the mean cosine
similarity of ``v`` to its ``k`` most similar candidates (a candidate never
counts itself).  Candidate penalties are computed once when the index is
built; the query penalty once per query.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import phoc as _phoc
from . import subspace

__all__ = [
    "DEFAULT_K",
    "METRICS",
    "Occurrence",
    "SearchIndex",
    "Hit",
    "RankingError",
    "cosine",
    "compute_rk",
    "build_index",
    "query_penalty",
    "csls",
    "score_all",
    "rank",
    "search",
]

DEFAULT_K = 20
METRICS = ("cosine", "csls")
BLOCK = 1024


class RankingError(ValueError):
    pass


class Occurrence(NamedTuple):
    page_id: str
    word_id: int
    box: tuple[int, int, int, int]
    confidence: float | None = None


class Hit(NamedTuple):
    token: str
    score: float
    occurrences: list


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise RankingError("cosine of a zero vector is undefined")
    return float(x @ y / (nx * ny))


def _normalize_rows(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(V, axis=1)
    valid = norms > 0
    out = np.zeros_like(V)
    out[valid] = V[valid] / norms[valid, None]
    return out, valid


def _mean_top_k(S: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(S.shape[0])
    part = np.partition(S, S.shape[1] - k, axis=1)[:, S.shape[1] - k:]
    return np.sort(part, axis=1).sum(axis=1) / k


def compute_rk(P: np.ndarray, k: int, valid: np.ndarray | None = None, threads: int = 1) -> np.ndarray:
    """Mean cosine of each unit row of ``P`` to its ``k`` nearest other rows.

    Rows flagged invalid neither get a penalty (0) nor act as neighbours.
    Work is split in fixed-size row blocks so the result does not depend on
    ``threads``.
    """
    m = P.shape[0]
    if valid is None:
        valid = np.ones(m, dtype=bool)
    idx = np.flatnonzero(valid)
    rk = np.zeros(m)
    k = min(k, max(len(idx) - 1, 0))
    if k == 0 or len(idx) == 0:
        return rk
    V = np.ascontiguousarray(P[idx])

    def block(start: int) -> tuple[int, np.ndarray]:
        stop = min(start + BLOCK, len(idx))
        S = V[start:stop] @ V.T
        S[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        return start, _mean_top_k(S, k)

    starts = range(0, len(idx), BLOCK)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    for start, vals in parts:
        rk[idx[start:start + len(vals)]] = vals
    return rk


@dataclass(frozen=True, eq=False)
class SearchIndex:
    """Unit-normalized candidate vectors plus precomputed hub penalties.

    ``vectors`` is ``m x p`` (one row per unique token).  Rows that projected
    to zero are kept for layout but marked invalid and never ranked.
    """

    vectors: np.ndarray
    rk: np.ndarray
    k: int
    vocab: tuple[str, ...]
    postings: dict = field(default_factory=dict)
    valid: np.ndarray = None

    def __post_init__(self):
        if self.valid is None:
            object.__setattr__(self, "valid", np.linalg.norm(self.vectors, axis=1) > 0)
        for arr in (self.vectors, self.rk, self.valid):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def k_eff(self) -> int:
        return min(self.k, max(int(self.valid.sum()) - 1, 0))


def build_index(model: subspace.CcaModel, candidates, vocab: Sequence[str],
                postings: dict | None = None, k: int = DEFAULT_K,
                threads: int = 1) -> SearchIndex:
    """Project candidate PHOC rows, normalize them, and precompute ``rk``."""
    candidates = np.asarray(candidates)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise RankingError("the candidate set is empty")
    if candidates.shape[0] != len(vocab):
        raise RankingError(f"{candidates.shape[0]} candidate rows for {len(vocab)} tokens")
    if k < 0:
        raise RankingError(f"k must be non-negative, got {k}")
    P, valid = _normalize_rows(subspace.project_candidates(model, candidates))
    # an all-zero PHOC row (no in-charset character) is never rankable
    valid &= candidates.any(axis=1)
    P[~valid] = 0.0
    rk = compute_rk(P, k, valid, threads=threads)
    return SearchIndex(P, rk, int(k), tuple(vocab), dict(postings or {}), valid)


def query_penalty(index: SearchIndex, cos: np.ndarray) -> float:
    """``r_k`` of a query given its cosines to every valid candidate."""
    k = index.k_eff
    if k == 0:
        return 0.0
    return float(_mean_top_k(cos[None, :], k)[0])


def _unit_query(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0:
        raise RankingError("query vector is zero")
    return q / nq


def score_all(q, index: SearchIndex, metric: str = "csls") -> np.ndarray:
    """Scores of a projected query against every candidate (invalid ones get -inf)."""
    if metric not in METRICS:
        raise RankingError(f"unknown metric {metric!r}; expected one of {METRICS}")
    cos = index.vectors @ _unit_query(q)
    if metric == "cosine":
        scores = cos
    else:
        r_q = query_penalty(index, cos[index.valid])
        scores = 2.0 * cos - r_q - index.rk
    return np.where(index.valid, scores, -np.inf)


def csls(q, index: SearchIndex, j: int) -> float:
    """CSLS score of the projected query against candidate column ``j``."""
    return float(score_all(q, index, "csls")[j])


def rank(scores: np.ndarray, valid: np.ndarray, top_n: int | None = None) -> np.ndarray:
    """Valid candidate indices by descending score, ties by ascending index."""
    idx = np.flatnonzero(valid)
    order = idx[np.lexsort((idx, -scores[idx]))]
    return order if top_n is None else order[:top_n]


def search(query: str, index: SearchIndex, model: subspace.CcaModel,
           config: _phoc.PhocConfig, metric: str = "csls",
           top_n: int | None = 10) -> list[Hit]:
    """Encode, project, score, and return the ``top_n`` best tokens."""
    q = subspace.project_query(model, _phoc.encode(query, config).astype(np.float64))
    scores = score_all(q, index, metric)
    return [
        Hit(index.vocab[j], float(scores[j]), list(index.postings.get(index.vocab[j], ())))
        for j in rank(scores, index.valid, top_n)
    ]
