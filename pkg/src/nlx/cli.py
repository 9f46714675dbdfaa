"""``nlx`` command line: gen, index, train, query, eval.

Exit codes: 0 success, 2 input/validation error, 3 I/O error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import corpus, editdist, evaluation, noise, phoc, ranking, subspace

log = logging.getLogger("nlx")

EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _default_threads() -> int:
    env = os.environ.get("NLX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"NLX_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _phoc_config(args) -> phoc.PhocConfig:
    levels = tuple(int(x) for x in args.levels.split(","))
    return phoc.PhocConfig(args.charset or phoc.DEFAULT_CHARSET, levels, not args.case_insensitive)


def _read_tokens(path) -> list[corpus.Candidate]:
    with open(path, encoding="utf-8", newline="") as fh:
        candidates, errors = corpus.parse_tokens(fh)
    if errors:
        report = Path(str(path) + ".errors.txt")
        try:
            report.write_text("".join(f"{e}\n" for e in errors), encoding="utf-8")
        except OSError:
            report = None
        raise CliError(f"{len(errors)} malformed line(s) in {path}; report: {report}")
    if not candidates:
        raise CliError(f"{path}: no tokens")
    return candidates


def _read_alignments(path) -> list[corpus.AlignmentRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        records, errors = corpus.parse_alignments(fh)
    if errors:
        raise CliError(f"malformed alignment lines in {path}:\n" + "\n".join(map(str, errors[:20])))
    if not records:
        raise CliError(f"{path}: no alignment records")
    return records


def _check_alignments(candidates, records) -> None:
    dangling = corpus.dangling_alignments(candidates, records)
    if dangling:
        listing = "\n".join(f"  {a.page_id}\t{a.word_id}\t{a.ocr_text}" for a in dangling[:50])
        more = f"\n  ... {len(dangling) - 50} more" if len(dangling) > 50 else ""
        raise CliError(f"{len(dangling)} alignment record(s) match no token:\n{listing}{more}")


def cmd_gen(args) -> int:
    channel = noise.PROFILES.get(args.noise_profile)
    if channel is None:
        raise CliError(f"unknown noise profile {args.noise_profile!r}; "
                       f"choose from {sorted(noise.PROFILES)}")
    channel = channel.with_seed(args.seed)
    candidates, records = noise.generate_corpus(
        noise.load_lexicon(), args.pages, args.words_per_page, channel)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tokens.tsv", "w", encoding="utf-8", newline="") as fh:
        corpus.write_tokens(candidates, fh)
    with open(out / "alignments.tsv", "w", encoding="utf-8", newline="") as fh:
        corpus.write_alignments(records, fh)
    print(f"wrote {len(candidates)} tokens on {args.pages} pages to {out}")
    return 0


def cmd_index(args) -> int:
    candidates = _read_tokens(args.tokens)
    config = _phoc_config(args)
    model = None
    if args.model:
        model, config = corpus.load_model(args.model)
    index = corpus.make_index(candidates, config, model, args.k, threads=args.threads)
    corpus.save_index(index, args.out)
    print(f"indexed {index.index.m} unique tokens ({len(candidates)} occurrences) into {args.out}")
    return 0


def cmd_train(args) -> int:
    candidates = _read_tokens(args.tokens)
    records = _read_alignments(args.alignments)
    _check_alignments(candidates, records)
    config = _phoc_config(args)
    X = phoc.encode_many([a.gold_text for a in records], config, strict=False)
    Y = phoc.encode_many([a.ocr_text for a in records], config, strict=False)
    model = subspace.fit(X, Y, args.lam, args.p)
    corpus.save_model(model, config, args.out)
    c = model.correlations
    print(f"trained CCA on {len(records)} pairs: d={model.d} p={model.p} lambda={model.lam:g}")
    print("canonical correlations: " + " ".join(f"{x:.4f}" for x in c[:10])
          + (" ..." if len(c) > 10 else ""))
    print(f"min {c.min():.4f}  mean {c.mean():.4f}  max {c.max():.4f}")
    return 0


def query_records(f: corpus.IndexFile, query: str, metric: str, top: int | None) -> list[dict]:
    """Result records for one query, as ``nlx query`` prints them."""
    idx = f.index
    if metric == "edit":
        hits = editdist.rank_by_edit_distance(query, idx.vocab, top).hits
        hits = [(tok, float(dist)) for tok, dist in hits]
    else:
        hits = [(h.token, h.score) for h in ranking.search(query, idx, f.model, f.config, metric, top)]
    return [
        {"token": tok, "score": score, "metric": metric,
         "occurrences": [{"page_id": o.page_id, "word_id": o.word_id, "box": list(o.box)}
                         for o in idx.postings.get(tok, ())]}
        for tok, score in hits
    ]


def cmd_query(args) -> int:
    f = corpus.load_index(args.index)
    for q in args.query:
        for rec in query_records(f, q, args.metric, args.top):
            if len(args.query) > 1:
                rec = {"query": q, **rec}
            print(json.dumps(rec, ensure_ascii=False))
    return 0


def cmd_eval(args) -> int:
    candidates = _read_tokens(args.tokens)
    records = _read_alignments(args.alignments)
    _check_alignments(candidates, records)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    config = _phoc_config(args)
    settings = evaluation.EvalSettings(args.lam, args.p, args.k, config.charset, config.levels,
                                       config.case_sensitive, args.occurrence_level)
    plan = evaluation.FoldPlan.random({c.page_id for c in candidates}, args.folds, args.seed)
    report = evaluation.run_protocol(candidates, records, methods, plan, settings, args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.jsonl").write_text("\n".join(report.records()) + "\n", encoding="utf-8")
    (out / "timing.txt").write_text(report.timing_text(), encoding="utf-8")
    if args.emit_plot_data:
        (out / "plot_data.tsv").write_text("\n".join(report.plot_data()) + "\n", encoding="utf-8")
    if not args.no_figures and report.folds:
        from . import plotting
        plotting.write_figures(report, out)
    sys.stdout.write(text)
    sys.stdout.write("\n" + report.timing_text())
    return 0


def _add_phoc_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--charset", default=None, help="PHOC character set (default: built-in 96 chars)")
    p.add_argument("--levels", default="1,2,4,8", help="comma-separated pyramid levels")
    p.add_argument("--case-insensitive", action="store_true", help="fold case before encoding")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker count (default: $NLX_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic OCR corpus")
    p.add_argument("--pages", type=int, default=18)
    p.add_argument("--words-per-page", type=int, default=238)
    p.add_argument("--noise-profile", default="default", help=f"one of {sorted(noise.PROFILES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("index", help="build a search index from a token TSV")
    p.add_argument("tokens")
    p.add_argument("out")
    p.add_argument("--model", help="CCA model file from `nlx train` (default: no projection)")
    p.add_argument("--k", type=int, default=ranking.DEFAULT_K, help="CSLS neighbourhood size")
    _add_phoc_args(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="fit CCA on aligned OCR/gold pairs")
    p.add_argument("tokens")
    p.add_argument("alignments")
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=evaluation.EvalSettings.lam)
    p.add_argument("--p", type=int, default=evaluation.EvalSettings.p)
    _add_phoc_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="search an index")
    p.add_argument("index")
    p.add_argument("query", nargs="+")
    p.add_argument("--metric", choices=("csls", "cosine", "edit"), default="csls")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run the fold protocol and write reports")
    p.add_argument("tokens")
    p.add_argument("alignments")
    p.add_argument("--methods", default=",".join(evaluation.METHODS))
    p.add_argument("--folds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="eval-out")
    p.add_argument("--lambda", dest="lam", type=float, default=evaluation.EvalSettings.lam)
    p.add_argument("--p", type=int, default=evaluation.EvalSettings.p)
    p.add_argument("--k", type=int, default=ranking.DEFAULT_K)
    p.add_argument("--occurrence-level", action="store_true",
                   help="judge relevance per occurrence instead of per unique token")
    p.add_argument("--emit-plot-data", action="store_true",
                   help="also write (noise rate, mAP) series to plot_data.tsv")
    p.add_argument("--no-figures", action="store_true")
    _add_phoc_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _validate(args) -> None:
    if args.threads is None:
        args.threads = _default_threads()
    if args.threads < 1:
        raise CliError("--threads must be at least 1")
    for name in ("pages", "words_per_page", "folds"):
        if getattr(args, name, 1) < 1:
            raise CliError(f"--{name.replace('_', '-')} must be at least 1")
    if getattr(args, "k", 0) < 0:
        raise CliError("--k must be non-negative")
    if getattr(args, "top", 1) is not None and getattr(args, "top", 1) < 1:
        raise CliError("--top must be at least 1")
    if getattr(args, "lam", 0.0) < 0:
        raise CliError("--lambda must be non-negative")
    if getattr(args, "p", None) is not None and args.p < 1:
        raise CliError("--p must be at least 1")
    if hasattr(args, "levels"):
        try:
            _phoc_config(args)
        except ValueError as exc:
            raise CliError(f"invalid PHOC settings: {exc}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        _validate(args)
        # single-threaded BLAS keeps every result independent of --threads
        with threadpool_limits(1):
            return args.func(args)
    except CliError as exc:
        print(f"nlx: {exc}", file=sys.stderr)
        return exc.code
    except (subspace.CcaError, np.linalg.LinAlgError) as exc:
        print(f"nlx: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except corpus.IndexFormatError as exc:
        print(f"nlx: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (phoc.PhocError, ranking.RankingError, ValueError) as exc:
        print(f"nlx: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"nlx: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
