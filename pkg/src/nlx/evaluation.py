"""Retrieval evaluation over random page folds.

For every fold, CCA is fitted on the training pages' (gold, OCR) pairs, the
test pages' OCR tokens are indexed, and each distinct gold word on the test
pages is issued as a query.  A token is relevant to a query when one of its
occurrences is aligned to that gold word.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import special
from threadpoolctl import threadpool_limits

from . import editdist, phoc, ranking, subspace
from .corpus import AlignmentRecord, Candidate, build_vocab

__all__ = [
    "METHODS",
    "FoldPlan",
    "EvalSettings",
    "FoldResult",
    "EvalReport",
    "TTest",
    "average_precision",
    "paired_t_test",
    "run_protocol",
]

log = logging.getLogger(__name__)

# Display order follows the usual presentation: baseline first, then the
# vector methods from richest to plainest.
METHODS = ("edit", "cca+csls", "csls", "cca+cosine", "cosine")
EXTRA_METHODS = ("wedit",)


def average_precision(ranking_: Sequence, relevant) -> float:
    """Mean precision at each relevant item's rank, over all relevant items.

    Relevant items missing from the ranking contribute zero.
    """
    relevant = set(relevant)
    if not relevant:
        raise ValueError("average precision needs at least one relevant item")
    hits = 0
    total = 0.0
    for pos, item in enumerate(ranking_, 1):
        if item in relevant:
            hits += 1
            total += hits / pos
            if hits == len(relevant):
                break
    return total / len(relevant)


def _ap_from_positions(positions: np.ndarray, n_relevant: int) -> float:
    """AP given the 1-based ranks of the relevant items that were retrieved."""
    positions = np.sort(positions)
    return float(np.sum(np.arange(1, len(positions) + 1) / positions) / n_relevant)


class TTest(NamedTuple):
    t: float
    p: float
    reject: bool
    degenerate: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> TTest:
    """Two-sided paired t-test on per-fold scores.

    Identical samples give ``t = 0, p = 1``.  Constant non-zero differences
    have zero variance; they return ``p = 0`` with ``degenerate`` set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two paired observations")
    diff = a - b
    mean = diff.mean()
    sd = diff.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return TTest(0.0, 1.0, False)
        return TTest(math.copysign(math.inf, mean), 0.0, True, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    # two-sided tail of Student's t through the regularized incomplete beta
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTest(float(t), p, p < alpha)


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int = 0

    @classmethod
    def random(cls, pages: Iterable[str], n_folds: int = 20, seed: int = 0) -> "FoldPlan":
        """``n_folds`` random half/half page splits (train gets the floor half)."""
        pages = sorted(set(pages))
        if len(pages) < 2:
            raise ValueError("need at least two pages to split")
        rng = np.random.default_rng(seed)
        half = len(pages) // 2
        folds = []
        for _ in range(n_folds):
            perm = rng.permutation(len(pages))
            train = tuple(sorted(pages[i] for i in perm[:half]))
            test = tuple(sorted(pages[i] for i in perm[half:]))
            folds.append((train, test))
        return cls(tuple(folds), seed)


@dataclass(frozen=True)
class EvalSettings:
    lam: float = 100.0
    p: int | None = 100
    k: int = ranking.DEFAULT_K
    charset: str = phoc.DEFAULT_CHARSET
    levels: tuple = phoc.DEFAULT_LEVELS
    case_sensitive: bool = True
    occurrence_level: bool = False

    @property
    def phoc_config(self) -> phoc.PhocConfig:
        return phoc.PhocConfig(self.charset, tuple(self.levels), self.case_sensitive)


@dataclass
class FoldResult:
    fold: int
    n_queries: int
    noise_rate: float
    map: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


def _noise_rate(records: Sequence[AlignmentRecord]) -> float:
    chars = sum(len(r.gold_text) for r in records)
    edits = sum(editdist.levenshtein(r.gold_text, r.ocr_text) for r in records)
    return edits / chars if chars else 0.0


def evaluate_fold(fold_no: int, train_pages, test_pages, candidates: Sequence[Candidate],
                  alignments: Sequence[AlignmentRecord], methods: Sequence[str],
                  settings: EvalSettings) -> FoldResult | None:
    """Score every method on one split; None when no query is usable."""
    with threadpool_limits(1):
        return _evaluate_fold(fold_no, set(train_pages), set(test_pages), candidates,
                              alignments, methods, settings)


def _evaluate_fold(fold_no, train_pages, test_pages, candidates, alignments, methods, settings):
    config = settings.phoc_config
    gold = {(a.page_id, a.word_id): a.gold_text for a in alignments}
    test_cands = [c for c in candidates if c.page_id in test_pages]
    test_align = [a for a in alignments if a.page_id in test_pages]
    train_align = [a for a in alignments if a.page_id in train_pages]
    if not test_cands:
        warnings.warn(f"fold {fold_no}: no test candidates; skipped", RuntimeWarning)
        return None
    vocab, postings = build_vocab(test_cands)

    # ranked items are token indices, or (token index, occurrence index)
    # pairs when relevance is judged per occurrence
    item_gold: list[list[str | None]] = [
        [gold.get((o.page_id, o.word_id)) for o in postings[t]] for t in vocab]
    queries = sorted({a.gold_text for a in test_align})
    encodable = phoc.words_in_charset(queries, config)
    if not all(encodable):
        log.warning("fold %d: %d queries have no charset characters; skipped",
                    fold_no, encodable.count(False))
        queries = [q for q, ok in zip(queries, encodable) if ok]
    relevant: dict[str, list] = {q: [] for q in queries}
    for j, golds in enumerate(item_gold):
        if settings.occurrence_level:
            for o, g in enumerate(golds):
                if g in relevant:
                    relevant[g].append((j, o))
        else:
            for g in sorted({g for g in golds if g is not None}):
                if g in relevant:
                    relevant[g].append(j)
    queries = [q for q in queries if relevant[q]]
    if not queries:
        warnings.warn(f"fold {fold_no}: no query has a relevant candidate; skipped",
                      RuntimeWarning)
        return None

    result = FoldResult(fold_no, len(queries), _noise_rate(test_align))
    dense = phoc.encode_many(vocab, config, strict=False)
    query_bits = phoc.encode_many(queries, config).astype(np.float64)

    models: dict[str, subspace.CcaModel] = {"": subspace.identity_model(config.dimension())}
    if any(m.startswith("cca+") for m in methods):
        X = phoc.encode_many([a.gold_text for a in train_align], config, strict=False)
        Y = phoc.encode_many([a.ocr_text for a in train_align], config, strict=False)
        models["cca+"] = subspace.fit(X, Y, settings.lam, settings.p)

    indexes = {}
    for method in methods:
        if method in ("edit", "wedit"):
            continue
        prefix = "cca+" if method.startswith("cca+") else ""
        if prefix not in indexes:
            indexes[prefix] = ranking.build_index(models[prefix], dense, vocab, postings, settings.k)

    occ_counts = [len(postings[t]) for t in vocab]
    for method in methods:
        if method in ("edit", "wedit"):
            costs = None
            if method == "wedit":
                costs = editdist.estimate_confusion_matrix(
                    [(a.ocr_text, a.gold_text) for a in train_align])
            index_of = {t: j for j, t in enumerate(vocab)}
            orders, elapsed = [], 0.0
            for q in queries:
                ranked = editdist.rank_by_edit_distance(q, vocab, costs=costs)
                elapsed += ranked.seconds
                orders.append(np.fromiter((index_of[t] for t, _ in ranked.hits), dtype=np.int64))
        else:
            prefix = "cca+" if method.startswith("cca+") else ""
            metric = method[len(prefix):]
            index, model = indexes[prefix], models[prefix]
            orders = []
            start = time.perf_counter()
            for qv in query_bits:
                scores = ranking.score_all(subspace.project_query(model, qv), index, metric)
                orders.append(ranking.rank(scores, index.valid))
            elapsed = time.perf_counter() - start

        aps = [_ap(order, relevant[q], occ_counts, settings.occurrence_level, len(vocab))
               for q, order in zip(queries, orders)]
        result.map[method] = float(np.mean(aps))
        result.seconds[method] = elapsed
    return result


def _ap(order: np.ndarray, rel: list, occ_counts: list[int], per_occurrence: bool, m: int) -> float:
    if not per_occurrence:
        pos = np.empty(m, dtype=np.int64)
        pos[:] = -1
        pos[order] = np.arange(1, len(order) + 1)
        ranks = pos[np.asarray(rel)]
        return _ap_from_positions(ranks[ranks > 0], len(rel))
    # expand each token into its occurrences, in posting order
    counts = np.asarray(occ_counts)[order]
    start = np.zeros(m, dtype=np.int64)
    start[order] = np.concatenate(([0], np.cumsum(counts)[:-1]))
    retrieved = np.zeros(m, dtype=bool)
    retrieved[order] = True
    ranks = np.array([start[j] + o + 1 for j, o in rel if retrieved[j]], dtype=np.int64)
    return _ap_from_positions(ranks, len(rel))


@dataclass
class EvalReport:
    methods: tuple
    folds: list
    settings: EvalSettings
    skipped: int = 0

    def scores(self, method: str) -> np.ndarray:
        return np.array([f.map[method] for f in self.folds])

    def summary(self) -> dict:
        out = {}
        for m in self.methods:
            s = self.scores(m)
            sd = float(s.std(ddof=1)) if len(s) > 1 else 0.0
            secs = np.array([f.seconds[m] for f in self.folds])
            queries = sum(f.n_queries for f in self.folds)
            out[m] = {"mean": float(s.mean()), "sd": sd,
                      "seconds_per_fold": float(secs.mean()),
                      "seconds_per_query": float(secs.sum() / queries)}
        return out

    def t_tests(self) -> list[tuple[str, str, TTest]]:
        """Paired tests between neighbouring methods in display order."""
        if len(self.folds) < 2:
            return []
        return [(a, b, paired_t_test(self.scores(a), self.scores(b)))
                for a, b in zip(self.methods, self.methods[1:])]

    def to_text(self) -> str:
        """Fixed-width mAP and significance tables (no timing; deterministic)."""
        summ = self.summary()
        lines = [f"folds: {len(self.folds)} (skipped {self.skipped})",
                 f"queries: {sum(f.n_queries for f in self.folds)}",
                 "",
                 f"{'method':<12} {'mAP %':>8} {'s.d.':>7}",
                 "-" * 29]
        for m in self.methods:
            lines.append(f"{m:<12} {100 * summ[m]['mean']:>8.2f} {100 * summ[m]['sd']:>7.2f}")
        tests = self.t_tests()
        if tests:
            lines += ["", f"{'pair':<26} {'t':>9} {'p-value':>11} reject", "-" * 54]
            for a, b, r in tests:
                flag = "yes" if r.reject else "no"
                if r.degenerate:
                    flag += " (zero variance)"
                lines.append(f"{a + ' <> ' + b:<26} {r.t:>9.4f} {r.p:>11.3e} {flag}")
        return "\n".join(lines) + "\n"

    def timing_text(self) -> str:
        summ = self.summary()
        lines = [f"{'method':<12} {'s/fold':>9} {'ms/query':>9}", "-" * 32]
        for m in self.methods:
            lines.append(f"{m:<12} {summ[m]['seconds_per_fold']:>9.3f} "
                         f"{1000 * summ[m]['seconds_per_query']:>9.3f}")
        return "\n".join(lines) + "\n"

    def records(self) -> list[str]:
        """One JSON line per (fold, method) plus one per t-test."""
        out = []
        for f in self.folds:
            for m in self.methods:
                out.append(json.dumps({"kind": "fold", "fold": f.fold, "method": m,
                                       "map": f.map[m], "queries": f.n_queries,
                                       "noise_rate": f.noise_rate}, sort_keys=True))
        for a, b, r in self.t_tests():
            out.append(json.dumps({"kind": "t-test", "a": a, "b": b, "t": r.t, "p": r.p,
                                   "reject": r.reject, "degenerate": r.degenerate},
                                  sort_keys=True))
        return out

    def plot_data(self) -> list[str]:
        """Tab-separated (method, fold, noise_rate, map) rows."""
        rows = ["method\tfold\tnoise_rate\tmap"]
        for m in self.methods:
            for f in self.folds:
                rows.append(f"{m}\t{f.fold}\t{f.noise_rate!r}\t{f.map[m]!r}")
        return rows


def _fold_task(args):
    return evaluate_fold(*args)


def run_protocol(candidates: Sequence[Candidate], alignments: Sequence[AlignmentRecord],
                 methods: Sequence[str], plan: FoldPlan,
                 settings: EvalSettings | None = None, threads: int = 1) -> EvalReport:
    """Evaluate ``methods`` on every fold of ``plan``.

    Folds run in ``threads`` worker processes; each worker keeps BLAS
    single-threaded, so the numbers do not depend on the worker count.
    """
    settings = settings or EvalSettings()
    methods = tuple(methods)
    if not methods:
        raise ValueError("no methods selected")
    unknown = [m for m in methods if m not in METHODS + EXTRA_METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {METHODS + EXTRA_METHODS}")
    order = [m for m in METHODS + EXTRA_METHODS if m in methods]
    aligned_pages = {a.page_id for a in alignments}
    for _, test in plan.folds:
        missing = sorted(set(test) - aligned_pages)
        if missing:
            raise ValueError(f"test pages without alignment records: {missing}")
    tasks = [(i, train, test, candidates, alignments, order, settings)
             for i, (train, test) in enumerate(plan.folds)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(threads, len(tasks))) as pool:
            results = list(pool.map(_fold_task, tasks))
    else:
        results = [_fold_task(t) for t in tasks]
    folds = [r for r in results if r is not None]
    return EvalReport(tuple(order), folds, settings, skipped=len(results) - len(folds))
