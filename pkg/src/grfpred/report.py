"""Figure rendering for the ranking report.

Consumes the delimited outputs of simulation runs (top-l curve tables
and per-replication metric tables, possibly across several spatial
strengths) and renders comparison figures next to a summary table.
Figures are written deterministically: fixed geometry, fixed metadata,
no timestamps.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .output import read_delimited, standard_preamble, write_delimited  # noqa: E402

_METHOD_STYLE = {
    "grf": dict(color="#1b6ca8", marker="o"),
    "grf_minus_s": dict(color="#c0392b", marker="s"),
    "grf_minus_b": dict(color="#2c8a4b", marker="^"),
    "grf_minus_bs": dict(color="#8e6bb5", marker="d"),
}

_PNG_METADATA = {"Software": "grfpred"}


def _style(method):
    return _METHOD_STYLE.get(method, dict(color="#555555", marker="x"))


def load_curves(paths) -> dict:
    """(method, c) -> {l: avg_median} from one or more curve tables."""
    curves = defaultdict(dict)
    for path in paths:
        for row in read_delimited(path):
            key = (row["method"], float(row["c"]))
            curves[key][int(row["l"])] = float(row["avg_median"])
    return dict(curves)


def load_metric_means(paths) -> dict:
    """(method, c) -> mean accuracy/spearman from per-replication tables."""
    sums = defaultdict(lambda: [0.0, 0.0, 0])
    for path in paths:
        for row in read_delimited(path):
            if row.get("error"):
                continue
            acc, rho = row["accuracy"], row["spearman"]
            if acc == "NA" or rho == "NA":
                continue
            key = (row["method"], float(row.get("c", "nan")))
            s = sums[key]
            s[0] += float(acc)
            s[1] += float(rho)
            s[2] += 1
    return {
        k: {"mean_accuracy": s[0] / s[2], "mean_spearman": s[1] / s[2]}
        for k, s in sums.items()
        if s[2] > 0
    }


def _save(fig, path, fmt):
    if fmt == "png":
        fig.savefig(path, metadata=_PNG_METADATA)
    elif fmt == "svg":
        fig.savefig(path, metadata={"Date": None})
    else:
        raise ValueError(f"unsupported figure format {fmt!r}")
    plt.close(fig)


def _topl_fig(curves):
    cs = sorted({c for _, c in curves})
    methods = sorted({m for m, _ in curves})
    fig, axes = plt.subplots(
        1, len(cs), figsize=(3.4 * len(cs), 3.4), sharey=True, squeeze=False
    )
    for ax, c in zip(axes[0], cs):
        for m in methods:
            pts = curves.get((m, c))
            if not pts:
                continue
            ls = sorted(pts)
            ax.plot(ls, [pts[l] for l in ls], label=m, markersize=4, **_style(m))
        ax.set_yscale("log")
        ax.set_title(f"c = {c:g}")
        ax.set_xlabel("group size l")
        ax.grid(True, which="both", alpha=0.25)
    axes[0][0].set_ylabel("average median true rank")
    axes[0][-1].legend(fontsize=8)
    fig.tight_layout()
    return fig


def _accuracy_fig(metric_means):
    methods = sorted({m for m, _ in metric_means})
    cs = sorted({c for _, c in metric_means if not math.isnan(c)})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.2, 3.4), sharex=True)
    for key, ax, label in (
        ("mean_accuracy", ax1, "mean accuracy"),
        ("mean_spearman", ax2, "mean rank correlation"),
    ):
        for m in methods:
            xs = [c for c in cs if (m, c) in metric_means]
            ys = [metric_means[(m, c)][key] for c in xs]
            if xs:
                ax.plot(xs, ys, label=m, markersize=4, **_style(m))
        ax.set_xlabel("spatial strength c")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.25)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    return fig


def render_topl_figure(curves, out_dir, formats=("png",)) -> list:
    """Average median true rank vs group size, one panel per c, log y-axis."""
    if not curves:
        raise ValueError("no curve data to plot")
    paths = []
    for fmt in formats:
        path = os.path.join(out_dir, f"rank_topl.{fmt}")
        _save(_topl_fig(curves), path, fmt)
        paths.append(path)
    return paths


def render_accuracy_figure(metric_means, out_dir, formats=("png",)) -> list:
    """Mean accuracy and mean rank correlation against spatial strength."""
    paths = []
    for fmt in formats:
        path = os.path.join(out_dir, f"rank_accuracy.{fmt}")
        _save(_accuracy_fig(metric_means), path, fmt)
        paths.append(path)
    return paths


def render_rank_report(curve_paths, metric_paths, out_dir, formats=("png",), cfg_hash="", seed=0):
    """Render all report figures plus the summary table; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    curves = load_curves(curve_paths)
    written = render_topl_figure(curves, out_dir, formats=formats)

    metric_means = load_metric_means(metric_paths) if metric_paths else {}
    if metric_means:
        written += render_accuracy_figure(metric_means, out_dir, formats=formats)

    summary_rows = []
    for (m, c) in sorted(curves):
        pts = curves[(m, c)]
        row = {
            "method": m,
            "c": c,
            "avg_median_l1": pts.get(1, math.nan),
            "avg_median_l5": pts.get(5, math.nan),
            "avg_median_l10": pts.get(10, math.nan),
            "mean_accuracy": metric_means.get((m, c), {}).get("mean_accuracy", math.nan),
            "mean_spearman": metric_means.get((m, c), {}).get("mean_spearman", math.nan),
        }
        summary_rows.append(row)
    summary_path = os.path.join(out_dir, "rank_summary.csv")
    write_delimited(
        summary_path,
        ("method", "c", "avg_median_l1", "avg_median_l5", "avg_median_l10",
         "mean_accuracy", "mean_spearman"),
        summary_rows,
        preamble=standard_preamble(cfg_hash, seed),
    )
    written.append(summary_path)
    return written
