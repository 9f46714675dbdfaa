import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nlx import editdist, evaluation as ev, noise, phoc, subspace
from nlx.corpus import AlignmentRecord, Candidate


@pytest.mark.parametrize("ranking, relevant, expected", [
    (["a"], {"a"}, 1.0),
    (["a", "b", "c"], {"a", "c"}, (1 + 2 / 3) / 2),
    (["a", "b", "c"], {"a", "b", "c"}, 1.0),
    (["x", "a"], {"a"}, 0.5),
    (["x", "y"], {"a"}, 0.0),
])
def test_average_precision(ranking, relevant, expected):
    assert ev.average_precision(ranking, relevant) == pytest.approx(expected, abs=1e-15)


def test_average_precision_needs_relevant_items():
    with pytest.raises(ValueError):
        ev.average_precision(["a"], set())


@settings(max_examples=200, deadline=None)
@given(st.permutations(list(range(12))), st.sets(st.integers(0, 11), min_size=1))
def test_ap_matches_reference_and_invariants(order, relevant):
    ap = ev.average_precision(order, relevant)
    assert ap == pytest.approx(oracles.average_precision_reference(order, relevant), abs=1e-12)
    assert 0.0 <= ap <= 1.0
    # shuffling non-relevant items below the last hit leaves AP alone
    last = max(order.index(r) for r in relevant)
    tail = order[last + 1:][::-1]
    assert ev.average_precision(order[:last + 1] + tail, relevant) == ap
    # relevant items moved to the front give AP 1
    front = [x for x in order if x in relevant] + [x for x in order if x not in relevant]
    assert ev.average_precision(front, relevant) == 1.0


def test_t_test_identical_samples():
    r = ev.paired_t_test([0.8, 0.7, 0.9], [0.8, 0.7, 0.9])
    assert (r.t, r.p, r.reject, r.degenerate) == (0.0, 1.0, False, False)


def test_t_test_known_case_against_integration_oracle():
    r = ev.paired_t_test([1, 2, 3], [0, 0, 0])
    assert r.t == pytest.approx(2 / (1 / math.sqrt(3)), abs=1e-12)
    assert r.t == pytest.approx(3.4641, abs=1e-4)
    assert r.p == pytest.approx(oracles.t_two_sided_p(r.t, 2), abs=1e-10)
    assert r.p == pytest.approx(0.0742, abs=1e-4)
    assert not r.reject


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=25))
def test_t_test_p_against_integration(diffs):
    d = np.asarray(diffs)
    if d.std(ddof=1) < 1e-6:
        return
    r = ev.paired_t_test(d, np.zeros_like(d))
    assert r.p == pytest.approx(oracles.t_two_sided_p(r.t, len(d) - 1), abs=1e-9)


def test_t_test_degenerate_and_errors():
    r = ev.paired_t_test([2, 3, 4], [1, 2, 3])
    assert r.p == 0.0 and r.degenerate and r.reject and math.isinf(r.t)
    with pytest.raises(ValueError):
        ev.paired_t_test([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        ev.paired_t_test([1], [2])


def test_fold_plan():
    pages = [f"p{i}" for i in range(18)]
    plan = ev.FoldPlan.random(pages, 20, seed=3)
    assert len(plan.folds) == 20
    for train, test in plan.folds:
        assert len(train) == len(test) == 9
        assert not set(train) & set(test)
        assert set(train) | set(test) == set(pages)
    assert ev.FoldPlan.random(pages, 20, seed=3) == plan
    assert ev.FoldPlan.random(pages, 20, seed=4) != plan
    with pytest.raises(ValueError):
        ev.FoldPlan.random(["only"], 2)


def make_corpus(pages, per_page, profile="default", seed=0):
    return noise.generate_corpus(noise.load_lexicon()[:120], pages, per_page,
                                 noise.PROFILES[profile].with_seed(seed))


def test_noiseless_cosine_is_perfect():
    cands, recs = make_corpus(6, 60, "none")
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 3, seed=1)
    report = ev.run_protocol(cands, recs, ["cosine", "edit"], plan)
    assert report.scores("cosine").tolist() == [1.0, 1.0, 1.0]
    assert report.scores("edit").tolist() == [1.0, 1.0, 1.0]


def test_single_fold_single_method():
    cands, recs = make_corpus(4, 40)
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 1, seed=0)
    report = ev.run_protocol(cands, recs, ["csls"], plan)
    assert report.methods == ("csls",)
    assert len(report.folds) == 1 and list(report.folds[0].map) == ["csls"]
    assert report.t_tests() == []
    assert "csls" in report.to_text()


def test_method_validation():
    cands, recs = make_corpus(2, 10)
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 1)
    with pytest.raises(ValueError):
        ev.run_protocol(cands, recs, [], plan)
    with pytest.raises(ValueError):
        ev.run_protocol(cands, recs, ["bm25"], plan)
    with pytest.raises(ValueError):
        ev.run_protocol(cands, [r for r in recs if r.page_id == "page001"], ["csls"],
                        ev.FoldPlan((( ("page001",), ("page002",)),)))


def test_fold_without_queries_is_skipped():
    cands = [Candidate("a", 0, "Reich", (0, 0, 1, 1)), Candidate("b", 0, "###", (0, 0, 1, 1))]
    recs = [AlignmentRecord("a", 0, "Reich", "Reich"), AlignmentRecord("b", 0, "###", "###")]
    plan = ev.FoldPlan(((("a",), ("b",)),))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = ev.run_protocol(cands, recs, ["cosine"], plan)
    assert report.folds == [] and report.skipped == 1


def reference_fold(train, test, cands, recs, method, lam, p, k):
    """A from-scratch re-scoring of one fold (the CCA fit itself is shared)."""
    cfg = phoc.PhocConfig()
    gold = {(r.page_id, r.word_id): r.gold_text for r in recs}
    tokens = {}
    for c in cands:
        if c.page_id in test:
            tokens.setdefault(c.text, set()).add(gold[(c.page_id, c.word_id)])
    vocab = sorted(tokens)
    queries = sorted({r.gold_text for r in recs if r.page_id in test})
    aps = []
    if method == "edit":
        for q in queries:
            order = sorted(range(len(vocab)), key=lambda j: (oracles.edit_distance_recursive(q, vocab[j]), j))
            aps.append(oracles.average_precision_reference(order, {j for j in order if q in tokens[vocab[j]]}))
        return sum(aps) / len(aps)

    def bits(w):
        return np.array(oracles.phoc_bits(w, cfg.charset, cfg.levels), dtype=float)

    V = [bits(t) for t in vocab]
    Q = [bits(q) for q in queries]
    if method.startswith("cca+"):
        tr = [r for r in recs if r.page_id in train]
        model = subspace.fit(np.array([bits(r.gold_text) for r in tr]),
                             np.array([bits(r.ocr_text) for r in tr]), lam, p)
        V = [(v - model.mean_y) @ model.Wy for v in V]
        Q = [(q - model.mean_x) @ model.Wx for q in Q]
        method = method[4:]
    V = [list(v) for v in V]
    rk = oracles.rk_bruteforce(V, k)
    for q, qv in zip(queries, Q):
        order, _ = oracles.ranking_bruteforce(list(qv), V, rk, k, method)
        aps.append(oracles.average_precision_reference(order, {j for j in order if q in tokens[vocab[j]]}))
    return sum(aps) / len(aps)


def test_protocol_matches_reference_rescoring():
    cands, recs = make_corpus(4, 30, seed=2)
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 3, seed=5)
    settings_ = ev.EvalSettings(lam=5.0, p=20, k=4)
    methods = ["edit", "cca+csls", "csls", "cca+cosine", "cosine"]
    report = ev.run_protocol(cands, recs, methods, plan, settings_)
    for fold, (train, test) in zip(report.folds, plan.folds):
        for m in methods:
            want = reference_fold(set(train), set(test), cands, recs, m, 5.0, 20, 4)
            assert fold.map[m] == pytest.approx(want, abs=1e-9), (m, fold.fold)


def test_occurrence_level_relevance():
    cands = [Candidate("t", 0, "Reich", (0, 0, 1, 1)), Candidate("t", 1, "Reich", (0, 0, 1, 1)),
             Candidate("t", 2, "Rcich", (0, 0, 1, 1)), Candidate("r", 0, "Reich", (0, 0, 1, 1))]
    recs = [AlignmentRecord("t", 0, "Reich", "Reich"), AlignmentRecord("t", 1, "Reich", "Reigh"),
            AlignmentRecord("t", 2, "Rcich", "Reich"), AlignmentRecord("r", 0, "Reich", "Reich")]
    plan = ev.FoldPlan(((("r",), ("t",)),))
    tok = ev.run_protocol(cands, recs, ["edit"], plan)
    occ = ev.run_protocol(cands, recs, ["edit"], plan, ev.EvalSettings(occurrence_level=True))
    # token level: both "Reich" and "Rcich" are relevant to both queries
    # occurrence level, query "Reich": ranks Reich#0 (hit), Reich#1 (miss), Rcich#2 (hit)
    # query "Reigh": Reich#0 miss, Reich#1 hit -> 1/2
    assert tok.folds[0].map["edit"] == pytest.approx((1.0 + 1.0) / 2)
    assert occ.folds[0].map["edit"] == pytest.approx(((1 + 2 / 3) / 2 + 0.5) / 2)


def test_report_outputs_and_plot_data():
    cands, recs = make_corpus(4, 30)
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 3, seed=1)
    report = ev.run_protocol(cands, recs, ["cosine", "csls", "edit"], plan)
    assert report.methods == ("edit", "csls", "cosine")
    assert len(report.t_tests()) == 2
    lines = report.records()
    assert len(lines) == 3 * 3 + 2
    data = report.plot_data()
    assert data[0] == "method\tfold\tnoise_rate\tmap" and len(data) == 10
    assert all(0 <= f.noise_rate <= 2 for f in report.folds)
    summ = report.summary()
    assert all(s["sd"] >= 0 and 0 <= s["mean"] <= 1 for s in summ.values())


def test_protocol_deterministic_across_workers():
    cands, recs = make_corpus(4, 30)
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 3, seed=1)
    one = ev.run_protocol(cands, recs, ["cca+csls", "cosine"], plan, ev.EvalSettings(p=10), threads=1)
    two = ev.run_protocol(cands, recs, ["cca+csls", "cosine"], plan, ev.EvalSettings(p=10), threads=2)
    assert one.to_text() == two.to_text() and one.records() == two.records()


def test_weighted_edit_method_runs():
    cands, recs = make_corpus(4, 30)
    plan = ev.FoldPlan.random({c.page_id for c in cands}, 2, seed=1)
    report = ev.run_protocol(cands, recs, ["edit", "wedit"], plan)
    assert report.methods == ("edit", "wedit")
    assert all(0 <= f.map["wedit"] <= 1 for f in report.folds)
