"""Report figures for evaluation runs (written with the Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 150,
}

# PNG only: no timestamps in the metadata, so reruns give identical bytes
_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=_METADATA, bbox_inches="tight")
    plt.close(fig)


def map_by_method(report, path):
    """Per-fold mAP strip per method, with mean and one s.d."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        rng = np.random.default_rng(0)
        for i, method in enumerate(report.methods):
            scores = 100 * report.scores(method)
            jitter = rng.uniform(-0.12, 0.12, size=len(scores))
            ax.plot(i + jitter, scores, "o", ms=3, alpha=0.5, color="0.4")
            sd = scores.std(ddof=1) if len(scores) > 1 else 0.0
            ax.errorbar(i + 0.3, scores.mean(), yerr=sd, fmt="s", ms=4, color="C0", capsize=2)
        ax.set_xticks(range(len(report.methods)))
        ax.set_xticklabels(report.methods, rotation=20)
        ax.set_ylabel("mAP (%)")
        _save(fig, path)


def map_vs_noise(report, path):
    """Fold mAP against the fold's measured character error rate."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        noise = np.array([f.noise_rate for f in report.folds])
        for i, method in enumerate(report.methods):
            ax.plot(100 * noise, 100 * report.scores(method), "o", ms=3,
                    color=f"C{i}", label=method)
        ax.set_xlabel("character error rate on test pages (%)")
        ax.set_ylabel("mAP (%)")
        ax.legend(ncol=2)
        _save(fig, path)


def query_time(report, path):
    """Mean search time per query for each method (log scale)."""
    summ = report.summary()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.4))
        ms = [1000 * summ[m]["seconds_per_query"] for m in report.methods]
        ax.barh(range(len(ms)), ms, color="C0")
        ax.set_yticks(range(len(ms)))
        ax.set_yticklabels(report.methods)
        ax.set_xscale("log")
        ax.set_xlabel("ms per query")
        _save(fig, path)


def write_figures(report, outdir) -> list:
    outdir = Path(outdir)
    paths = [outdir / "map_by_method.png", outdir / "map_vs_noise.png", outdir / "query_time.png"]
    map_by_method(report, paths[0])
    map_vs_noise(report, paths[1])
    query_time(report, paths[2])
    return paths
