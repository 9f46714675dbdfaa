"""OCR token ingestion, vocabulary building, and the ``.nlx`` index file.

The binary layout is documented field by field in ``docs/format.md``;
:func:`index_file_size` computes the expected size from it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple, TextIO

import numpy as np

from . import phoc as _phoc
from . import ranking, subspace
from .ranking import Occurrence, SearchIndex

__all__ = [
    "TOKEN_COLUMNS",
    "ALIGNMENT_COLUMNS",
    "Candidate",
    "AlignmentRecord",
    "LineError",
    "parse_tokens",
    "parse_alignments",
    "write_tokens",
    "write_alignments",
    "build_vocab",
    "IndexFile",
    "make_index",
    "save_index",
    "load_index",
    "save_model",
    "load_model",
    "index_file_size",
    "IndexFormatError",
    "BadMagicError",
    "VersionError",
    "TruncatedError",
    "ChecksumError",
]

TOKEN_COLUMNS = ("page_id", "word_id", "text", "x0", "y0", "x1", "y1", "confidence")
ALIGNMENT_COLUMNS = ("page_id", "word_id", "ocr_text", "gold_text")

MAGIC = b"NLX1"
MODEL_MAGIC = b"NLM1"
VERSION = 1
POSTING = struct.Struct("<IIiiiid")
DIGEST = 32


@dataclass(frozen=True)
class Candidate:
    page_id: str
    word_id: int
    text: str
    box: tuple[int, int, int, int]
    confidence: float | None = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"bad box geometry {self.box}: need x0 < x1 and y0 < y1")
        if not self.text:
            raise ValueError("empty token text")
        if self.confidence is not None and not 0 <= self.confidence <= 100:
            raise ValueError(f"confidence {self.confidence} outside [0, 100]")

    @property
    def key(self) -> tuple[str, int]:
        return self.page_id, self.word_id


@dataclass(frozen=True)
class AlignmentRecord:
    page_id: str
    word_id: int
    ocr_text: str
    gold_text: str

    def __post_init__(self):
        if not self.gold_text:
            raise ValueError("empty gold text")

    @property
    def key(self) -> tuple[str, int]:
        return self.page_id, self.word_id


class LineError(NamedTuple):
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _rows(lines: Iterable[str] | TextIO, columns: tuple[str, ...]):
    reader = csv.reader(lines, delimiter="\t", quoting=csv.QUOTE_NONE)
    header = next(reader, None)
    if header is None:
        return None, []
    header = [h.strip() for h in header]
    if tuple(header) != columns:
        want, got = "\t".join(columns), "\t".join(header)
        return None, [LineError(1, f"expected header {want!r}, got {got!r}")]
    return reader, []


def parse_tokens(lines: Iterable[str] | TextIO) -> tuple[list[Candidate], list[LineError]]:
    """Parse the token TSV; bad lines are skipped and reported."""
    reader, errors = _rows(lines, TOKEN_COLUMNS)
    out: list[Candidate] = []
    if reader is None:
        return out, errors
    for row in reader:
        lineno = reader.line_num
        if not row or row == [""]:
            continue
        if len(row) != len(TOKEN_COLUMNS):
            errors.append(LineError(lineno, f"expected {len(TOKEN_COLUMNS)} fields, got {len(row)}"))
            continue
        page, word_id, text, x0, y0, x1, y1, conf = row
        try:
            box = (int(x0), int(y0), int(x1), int(y1))
            confidence = None if conf.strip() in ("", "-1") else float(conf)
            out.append(Candidate(page, int(word_id), text, box, confidence))
        except ValueError as exc:
            errors.append(LineError(lineno, str(exc)))
    return out, errors


def parse_alignments(lines: Iterable[str] | TextIO) -> tuple[list[AlignmentRecord], list[LineError]]:
    reader, errors = _rows(lines, ALIGNMENT_COLUMNS)
    out: list[AlignmentRecord] = []
    if reader is None:
        return out, errors
    for row in reader:
        lineno = reader.line_num
        if not row or row == [""]:
            continue
        if len(row) != len(ALIGNMENT_COLUMNS):
            errors.append(LineError(lineno, f"expected {len(ALIGNMENT_COLUMNS)} fields, got {len(row)}"))
            continue
        try:
            out.append(AlignmentRecord(row[0], int(row[1]), row[2], row[3]))
        except ValueError as exc:
            errors.append(LineError(lineno, str(exc)))
    return out, errors


def write_tokens(candidates: Iterable[Candidate], fh: TextIO) -> None:
    fh.write("\t".join(TOKEN_COLUMNS) + "\n")
    for c in candidates:
        conf = "" if c.confidence is None else f"{c.confidence:g}"
        fh.write(f"{c.page_id}\t{c.word_id}\t{c.text}\t{c.box[0]}\t{c.box[1]}\t"
                 f"{c.box[2]}\t{c.box[3]}\t{conf}\n")


def write_alignments(records: Iterable[AlignmentRecord], fh: TextIO) -> None:
    fh.write("\t".join(ALIGNMENT_COLUMNS) + "\n")
    for r in records:
        fh.write(f"{r.page_id}\t{r.word_id}\t{r.ocr_text}\t{r.gold_text}\n")


def dangling_alignments(candidates: Iterable[Candidate],
                        alignments: Iterable[AlignmentRecord]) -> list[AlignmentRecord]:
    """Alignment records whose (page, word) or OCR text has no matching token."""
    by_key = {c.key: c.text for c in candidates}
    return [a for a in alignments if by_key.get(a.key) != a.ocr_text]


def build_vocab(candidates: Iterable[Candidate]) -> tuple[list[str], dict[str, list[Occurrence]]]:
    """Unique token texts (sorted by code point) and their occurrences in input order."""
    postings: dict[str, list[Occurrence]] = {}
    for c in candidates:
        postings.setdefault(c.text, []).append(
            Occurrence(c.page_id, c.word_id, c.box, c.confidence))
    if not postings:
        raise ValueError("no candidates to index")
    vocab = sorted(postings)
    return vocab, {tok: postings[tok] for tok in vocab}


# -- index file -------------------------------------------------------------


class IndexFormatError(Exception):
    code = "format"


class BadMagicError(IndexFormatError):
    code = "bad-magic"


class VersionError(IndexFormatError):
    code = "version"


class TruncatedError(IndexFormatError):
    code = "truncated"


class ChecksumError(IndexFormatError):
    code = "checksum"


@dataclass(frozen=True, eq=False)
class IndexFile:
    config: _phoc.PhocConfig
    model: subspace.CcaModel
    bits: np.ndarray          # packed PHOC rows, m x ceil(d / 8)
    index: SearchIndex

    def same_as(self, other: "IndexFile") -> bool:
        a, b = self.index, other.index
        return (
            self.config == other.config
            and self.model.same_as(other.model)
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(a.vectors, b.vectors)
            and np.array_equal(a.rk, b.rk)
            and np.array_equal(a.valid, b.valid)
            and a.k == b.k
            and a.vocab == b.vocab
            and _postings_equal(a.postings, b.postings)
        )


def _postings_equal(p: dict, q: dict) -> bool:
    def norm(occ):
        conf = occ.confidence
        return (occ.page_id, occ.word_id, tuple(occ.box),
                "nan" if conf is None or math.isnan(conf) else conf)
    return p.keys() == q.keys() and all(
        [norm(o) for o in p[t]] == [norm(o) for o in q[t]] for t in p)


def make_index(candidates: list[Candidate], config: _phoc.PhocConfig | None = None,
               model: subspace.CcaModel | None = None, k: int = ranking.DEFAULT_K,
               threads: int = 1) -> IndexFile:
    """Vocabulary, PHOC matrix, projections and ``rk`` for a token list.

    Without a model the candidates are indexed by their raw PHOC vectors.
    """
    config = config or _phoc.PhocConfig()
    vocab, postings = build_vocab(candidates)
    dense = _phoc.encode_many(vocab, config, strict=False)
    model = model or subspace.identity_model(config.dimension())
    if model.d != config.dimension():
        raise ValueError(f"model dimension {model.d} does not match PHOC dimension {config.dimension()}")
    index = ranking.build_index(model, dense, vocab, postings, k, threads=threads)
    return IndexFile(config, model, _phoc.pack(dense), index)


def _model_header(model: subspace.CcaModel) -> dict:
    return {"d": model.d, "p": model.p, "lambda": model.lam, "identity": model.identity}


def _model_arrays(model: subspace.CcaModel) -> list[np.ndarray]:
    if model.identity:
        return []
    return [model.mean_x, model.mean_y,
            model.Wx.ravel(order="F"), model.Wy.ravel(order="F"), model.correlations]


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _string(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _index_payload(f: IndexFile) -> bytes:
    idx = f.index
    pages = sorted({o.page_id for occs in idx.postings.values() for o in occs})
    page_no = {p: i for i, p in enumerate(pages)}
    n_post = sum(len(idx.postings.get(t, ())) for t in idx.vocab)
    header = {
        "phoc": f.config.to_dict(),
        "model": _model_header(f.model),
        "m": idx.m,
        "k": idx.k,
        "pages": len(pages),
        "postings": n_post,
    }
    hbytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes)
    for arr in _model_arrays(f.model):
        out.write(_f64(arr))
    out.write(np.ascontiguousarray(f.bits, dtype=np.uint8).tobytes())
    out.write(_f64(idx.vectors))
    out.write(_f64(idx.rk))
    for p in pages:
        out.write(_string(p))
    for t in idx.vocab:
        out.write(_string(t))
    counts = np.array([len(idx.postings.get(t, ())) for t in idx.vocab], dtype="<u4")
    out.write(counts.tobytes())
    for t in idx.vocab:
        for o in idx.postings.get(t, ()):
            conf = math.nan if o.confidence is None else o.confidence
            out.write(POSTING.pack(page_no[o.page_id], o.word_id, *o.box, conf))
    return out.getvalue()


def save_index(f: IndexFile, path) -> None:
    payload = _index_payload(f)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"file ends at byte {len(self.buf)}, need {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<u4")

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _open_checked(path, magic: bytes) -> tuple[_Reader, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(magic) or data[:len(magic)] != magic:
        if len(data) < len(magic):
            raise TruncatedError(f"{path}: file too short")
        raise BadMagicError(f"{path}: not a {magic.decode()} file")
    if len(data) < 12 + DIGEST:
        raise TruncatedError(f"{path}: file too short")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    payload, digest = data[:-DIGEST], data[-DIGEST:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    r = _Reader(payload)
    r.take(8)
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    return r, header


def _read_model(r: _Reader, h: dict) -> subspace.CcaModel:
    d, p = h["d"], h["p"]
    if h["identity"]:
        return subspace.identity_model(d)
    mean_x, mean_y = r.f64(d), r.f64(d)
    Wx = r.f64(d * p).reshape((d, p), order="F")
    Wy = r.f64(d * p).reshape((d, p), order="F")
    return subspace.CcaModel(Wx, Wy, mean_x, mean_y, h["lambda"], r.f64(p))


def load_index(path) -> IndexFile:
    r, h = _open_checked(path, MAGIC)
    config = _phoc.PhocConfig.from_dict(h["phoc"])
    model = _read_model(r, h["model"])
    m, p = h["m"], h["model"]["p"]
    nbytes = math.ceil(config.dimension() / 8)
    bits = np.frombuffer(r.take(m * nbytes), dtype=np.uint8).reshape(m, nbytes).copy()
    vectors = r.f64(m * p).reshape(m, p)
    rk = r.f64(m)
    pages = [r.string() for _ in range(h["pages"])]
    vocab = tuple(r.string() for _ in range(m))
    counts = r.u32s(m)
    postings = {}
    for tok, count in zip(vocab, counts):
        occs = []
        for _ in range(int(count)):
            page, word_id, x0, y0, x1, y1, conf = POSTING.unpack(r.take(POSTING.size))
            occs.append(Occurrence(pages[page], word_id, (x0, y0, x1, y1),
                                   None if math.isnan(conf) else conf))
        postings[tok] = occs
    if r.pos != len(r.buf):
        raise IndexFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    index = SearchIndex(vectors, rk, h["k"], vocab, postings)
    return IndexFile(config, model, bits, index)


def index_file_size(f: IndexFile) -> int:
    """Expected ``.nlx`` size in bytes, from the documented layout."""
    idx = f.index
    d, p, m = f.model.d, f.model.p, idx.m
    pages = {o.page_id for occs in idx.postings.values() for o in occs}
    n_post = sum(len(v) for v in idx.postings.values())
    header = len(json.dumps({
        "phoc": f.config.to_dict(), "model": _model_header(f.model), "m": m,
        "k": idx.k, "pages": len(pages), "postings": n_post,
    }, ensure_ascii=False, sort_keys=True).encode("utf-8"))
    model = 0 if f.model.identity else 8 * (2 * d + 2 * d * p + p)
    return (
        12 + header + model
        + m * math.ceil(f.config.dimension() / 8)
        + 8 * m * p + 8 * m
        + sum(4 + len(s.encode("utf-8")) for s in pages)
        + sum(4 + len(t.encode("utf-8")) for t in idx.vocab)
        + 4 * m + POSTING.size * n_post
        + DIGEST
    )


def save_model(model: subspace.CcaModel, config: _phoc.PhocConfig, path) -> None:
    h = dict(_model_header(model), phoc=config.to_dict())
    hbytes = json.dumps(h, ensure_ascii=False, sort_keys=True).encode("utf-8")
    payload = MODEL_MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes
    payload += b"".join(_f64(a) for a in _model_arrays(model))
    with open(path, "wb") as fh:
        fh.write(payload + hashlib.sha256(payload).digest())


def load_model(path) -> tuple[subspace.CcaModel, _phoc.PhocConfig]:
    r, h = _open_checked(path, MODEL_MAGIC)
    model = _read_model(r, h)
    if r.pos != len(r.buf):
        raise IndexFormatError(f"{path}: trailing bytes")
    return model, _phoc.PhocConfig.from_dict(h["phoc"])
