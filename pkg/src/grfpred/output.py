"""File outputs: delimited tables, fit documents, and the run fingerprint.

Every file starts with comment lines carrying the config hash and seed,
so reruns are verifiable: equal fingerprints imply byte-identical
outputs for a fixed thread count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from typing import Iterable

#: keys that identify execution environment, not scientific content
NON_SEMANTIC_KEYS = ("output_dir", "threads")


def config_hash(config: dict) -> str:
    """Short fingerprint of a run's scientific content.

    Output location and parallelism are excluded: two runs that differ
    only in those must produce identical results.
    """
    stripped = {k: v for k, v in config.items() if k not in NON_SEMANTIC_KEYS}
    canon = json.dumps(stripped, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def format_value(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "NA"
        return f"{v:.10g}"
    return str(v)


def write_delimited(path, fieldnames, rows: Iterable[dict], preamble: Iterable[str] = ()):
    """CSV with '#'-prefixed preamble lines; floats at 10 significant digits."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_value(row[k]) for k in fieldnames])


def read_delimited(path) -> list[dict]:
    """Read a CSV written by :func:`write_delimited`, skipping comments."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        return []
    header = rows[0]
    return [dict(zip(header, r)) for r in rows[1:]]


def write_json(path, obj: dict):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def standard_preamble(cfg_hash: str, seed) -> list[str]:
    return [f"config_hash={cfg_hash}", f"seed={seed}"]


def metric_rows_for_csv(rows) -> list[dict]:
    out = []
    for r in rows:
        out.append(
            {
                "method": r["method"],
                "replication": r["replication"],
                "accuracy": r["accuracy"],
                "spearman": r["spearman"],
                "gamma_hat": r["gamma_hat"],
                "error": r.get("error", ""),
            }
        )
    return out


METRIC_FIELDS = ("method", "replication", "accuracy", "spearman", "gamma_hat", "error")

AGGREGATE_FIELDS = (
    "method",
    "mean_accuracy",
    "sd_accuracy",
    "mean_spearman",
    "sd_spearman",
    "n_ok",
    "n_missing",
)

CURVE_FIELDS = ("method", "c", "l", "avg_median")


def aggregate_rows(report) -> list[dict]:
    aggs = report.aggregates()
    return [{"method": m, **aggs[m]} for m in report.methods]


def curve_rows(ranking_report) -> list[dict]:
    rows = []
    for m in ranking_report.methods:
        avg = ranking_report.avg_median(m)
        for l, v in enumerate(avg, start=1):
            rows.append({"method": m, "c": ranking_report.c, "l": l, "avg_median": float(v)})
    return rows
