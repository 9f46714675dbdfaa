import io
import math
from collections import Counter

import numpy as np
import pytest

from nlx import corpus, noise, phoc, subspace
from nlx.corpus import (AlignmentRecord, Candidate, ChecksumError, TruncatedError, VersionError,
                        build_vocab, index_file_size, load_index, make_index, parse_alignments,
                        parse_tokens, save_index)

HEADER = "page_id\tword_id\ttext\tx0\ty0\tx1\ty1\tconfidence\n"


def test_parse_empty_input():
    assert parse_tokens(io.StringIO("")) == ([], [])
    assert parse_tokens(io.StringIO(HEADER)) == ([], [])


def test_parse_one_line():
    cands, errors = parse_tokens(io.StringIO(HEADER + "p1\t3\tReich\t10\t20\t50\t40\t91.5\n"))
    assert errors == []
    assert cands == [Candidate("p1", 3, "Reich", (10, 20, 50, 40), 91.5)]


def test_parse_missing_confidence():
    cands, _ = parse_tokens(io.StringIO(HEADER + "p1\t0\tdie\t0\t0\t5\t5\t\np1\t1\tder\t0\t0\t5\t5\t-1\n"))
    assert [c.confidence for c in cands] == [None, None]


def test_parse_reports_bad_lines():
    text = HEADER + ("p1\t0\tok\t0\t0\t5\t5\t90\n"
                     "p1\t1\tbad\t9\t0\t5\t5\t90\n"
                     "p1\t2\tshort\t0\n"
                     "p1\tx\tnan\t0\t0\t5\t5\t90\n"
                     "p1\t4\tok2\t0\t0\t5\t5\t90\n")
    cands, errors = parse_tokens(io.StringIO(text))
    assert [c.text for c in cands] == ["ok", "ok2"]
    assert [e.line for e in errors] == [3, 4, 5]
    assert "box geometry" in errors[0].message


def test_parse_wrong_header():
    cands, errors = parse_tokens(io.StringIO("a\tb\n"))
    assert cands == [] and errors[0].line == 1


def test_parse_alignments_and_dangling():
    text = "page_id\tword_id\tocr_text\tgold_text\np1\t0\tRcich\tReich\np1\t1\tx\t\n"
    recs, errors = parse_alignments(io.StringIO(text))
    assert recs == [AlignmentRecord("p1", 0, "Rcich", "Reich")]
    assert len(errors) == 1
    cands = [Candidate("p1", 0, "Rcich", (0, 0, 1, 1))]
    assert corpus.dangling_alignments(cands, recs) == []
    assert corpus.dangling_alignments(cands, [AlignmentRecord("p2", 0, "a", "b")])


def test_write_then_parse_round_trip():
    cands, recs = noise.generate_corpus(noise.load_lexicon(), 2, 30, noise.PROFILES["default"])
    buf = io.StringIO()
    corpus.write_tokens(cands, buf)
    assert parse_tokens(io.StringIO(buf.getvalue())) == (cands, [])
    buf = io.StringIO()
    corpus.write_alignments(recs, buf)
    assert parse_alignments(io.StringIO(buf.getvalue())) == (recs, [])


def test_build_vocab():
    cands = [Candidate("p1", 0, "die", (0, 0, 1, 1)), Candidate("p2", 5, "die", (0, 0, 2, 2)),
             Candidate("p1", 1, "Reich", (0, 0, 1, 1))]
    vocab, postings = build_vocab(cands)
    assert vocab == ["Reich", "die"]
    assert [(o.page_id, o.word_id) for o in postings["die"]] == [("p1", 0), ("p2", 5)]
    distinct = [Candidate("p", i, w, (0, 0, 1, 1)) for i, w in enumerate("abc")]
    assert len(build_vocab(distinct)[0]) == 3
    with pytest.raises(ValueError):
        build_vocab([])


def test_build_vocab_counts_against_hash_map():
    cands, _ = noise.generate_corpus(noise.load_lexicon(), 18, 238, noise.PROFILES["default"])
    assert len(cands) == 4284
    vocab, postings = build_vocab(cands)
    counts = Counter(c.text for c in cands)
    assert len(vocab) == len(counts)
    assert sum(len(v) for v in postings.values()) == sum(counts.values()) == 4284
    assert all(len(postings[t]) == counts[t] for t in vocab)


def synthetic_index(n_words, p=None, k=5, seed=0):
    rng = np.random.default_rng(seed)
    channel = noise.NoiseChannel(0.5, 0.1, 0.1, seed=seed)
    lex = [w for w, _ in noise.load_lexicon()]
    cands, seen = [], set()
    i = 0
    while len(seen) < n_words:
        w = noise.corrupt(lex[int(rng.integers(len(lex)))], channel, i) or "x"
        seen.add(w)
        cands.append(Candidate(f"page{i // 200:03d}", i % 200, w, (0, 0, 10 + i % 7, 12),
                               None if i % 5 == 0 else float(i % 100)))
        i += 1
    model = None
    if p is not None:
        texts = [c.text for c in cands]
        X = phoc.encode_many(texts[:-1][:400], strict=False).astype(float)
        Y = phoc.encode_many(texts[1:][:400], strict=False).astype(float)
        model = subspace.fit(X, Y, lam=10.0, p=p)
    return make_index(cands, model=model, k=k)


@pytest.fixture(scope="module")
def small_index():
    return synthetic_index(300, p=16)


def test_round_trip(tmp_path, small_index):
    path = tmp_path / "a.nlx"
    save_index(small_index, path)
    again = load_index(path)
    assert again.same_as(small_index)
    assert path.stat().st_size == index_file_size(small_index)
    # saving the loaded index reproduces the bytes
    save_index(again, tmp_path / "b.nlx")
    assert (tmp_path / "b.nlx").read_bytes() == path.read_bytes()


def test_identity_model_round_trip(tmp_path):
    f = synthetic_index(50)
    save_index(f, tmp_path / "i.nlx")
    again = load_index(tmp_path / "i.nlx")
    assert again.model.identity and again.same_as(f)
    assert (tmp_path / "i.nlx").stat().st_size == index_file_size(f)


def test_stored_phoc_bytes_per_word(small_index):
    assert small_index.bits.shape == (small_index.index.m, 180)


def test_corruption_is_detected(tmp_path, small_index):
    path = tmp_path / "a.nlx"
    save_index(small_index, path)
    data = bytearray(path.read_bytes())
    for offset in (20, len(data) // 2, len(data) - 40):
        bad = bytearray(data)
        bad[offset] ^= 0x01
        path.write_bytes(bytes(bad))
        with pytest.raises(ChecksumError):
            load_index(path)


def test_truncation_and_version(tmp_path, small_index):
    path = tmp_path / "a.nlx"
    save_index(small_index, path)
    data = path.read_bytes()
    path.write_bytes(data[:6])
    with pytest.raises(TruncatedError):
        load_index(path)
    path.write_bytes(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(VersionError) as err:
        load_index(path)
    assert err.value.code == "version"
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(corpus.BadMagicError):
        load_index(path)


def test_distinct_error_codes():
    codes = {cls.code for cls in (corpus.BadMagicError, VersionError, TruncatedError, ChecksumError)}
    assert len(codes) == 4


def test_deterministic_bytes(tmp_path):
    a, b = synthetic_index(120, p=8, seed=3), synthetic_index(120, p=8, seed=3)
    save_index(a, tmp_path / "a.nlx")
    save_index(b, tmp_path / "b.nlx")
    assert (tmp_path / "a.nlx").read_bytes() == (tmp_path / "b.nlx").read_bytes()


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(30, 5)), rng.normal(size=(30, 5))
    model = subspace.fit(X, Y, lam=0.5, p=3)
    cfg = phoc.PhocConfig("abcde", (1,))
    corpus.save_model(model, cfg, tmp_path / "m.nlm")
    again, cfg2 = corpus.load_model(tmp_path / "m.nlm")
    assert again.same_as(model) and cfg2 == cfg
    with pytest.raises(corpus.BadMagicError):
        corpus.load_index(tmp_path / "m.nlm")


def test_unencodable_tokens_are_kept_but_never_ranked():
    cands = [Candidate("p", 0, "Reich", (0, 0, 1, 1)), Candidate("p", 1, "|||", (0, 0, 1, 1))]
    f = make_index(cands, k=1)
    assert f.index.vocab == ("Reich", "|||")
    assert f.index.valid.tolist() == [True, False]
    assert len(f.index.postings["|||"]) == 1


def test_confidence_survives_round_trip(tmp_path):
    cands = [Candidate("p", 0, "Reich", (0, 0, 1, 1), 88.25), Candidate("p", 1, "und", (0, 0, 1, 1))]
    f = make_index(cands, k=1)
    save_index(f, tmp_path / "c.nlx")
    occ = load_index(tmp_path / "c.nlx").index.postings
    assert occ["Reich"][0].confidence == 88.25
    assert occ["und"][0].confidence is None
