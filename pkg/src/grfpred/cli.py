"""Command-line front end.

One config document drives each run; flags override document keys.
Progress goes to standard error, data outputs to files only. Exit codes:
0 success, 2 config/validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import baselines
from .config import ConfigError, apply_overrides, load_config, validate_config
from .data import DataFormatError, load_dataset, load_genotypes, _read_rows
from .engine import (
    GrfParams,
    ModelConfig,
    NumericalError,
    QueryPoints,
    fit as grf_fit,
    fit_result_at,
    predict as grf_predict,
)
from .evaluation import SplitPlan, run_benchmark
from .output import (
    AGGREGATE_FIELDS,
    METRIC_FIELDS,
    aggregate_rows,
    config_hash,
    curve_rows,
    metric_rows_for_csv,
    standard_preamble,
    write_delimited,
    write_json,
)
from .simulation import SimSpec, ranking_study

log = logging.getLogger("grfpred")


def _model_config(cfg) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(
        components=tuple(m["components"]),
        beta00=float(m["beta00"]),
        starts=m["starts"],
        max_evals=m["max_evals"],
        tol=float(m["tol"]),
        seed=cfg["seed"],
    )


def _load_data(cfg):
    d = cfg["data"]
    log.info("loading dataset (%s)", d["phenotype"])
    data = load_dataset(
        d["genotype"], d["phenotype"], d["layout"], d["subpop"], center_y=d["center_y"]
    )
    log.info("dataset: n=%d, p=%d, lattice %dx%d", data.n, data.genotypes.p,
             data.layout.m1, data.layout.m2)
    return data


def _out(cfg, name) -> str:
    os.makedirs(cfg["output_dir"], exist_ok=True)
    return os.path.join(cfg["output_dir"], name)


def cmd_fit(cfg) -> int:
    data = _load_data(cfg)
    mc = _model_config(cfg)
    log.info("fitting field model: components=%s", ",".join(mc.components))
    res = grf_fit(data, mc)
    doc = res.to_json_dict()
    doc["config_hash"] = config_hash(cfg)
    doc["seed"] = cfg["seed"]
    doc["n"] = data.n
    doc["p"] = data.genotypes.p
    path = _out(cfg, "fit.json")
    write_json(path, doc)
    log.info("loglik=%.6f gamma_hat=%.6f -> %s", res.loglik, res.gamma_hat, path)
    if cfg["fit"]["dump_kernels"]:
        for name, k in res.kernels.items():
            kpath = _out(cfg, f"kernel_{name}.csv")
            np.savetxt(kpath, k, delimiter=",", fmt="%.17g")
            log.info("kernel dump -> %s", kpath)
    return 0


def _load_fit(cfg, data, fit_json_path):
    with open(fit_json_path) as fh:
        doc = json.load(fh)
    params = GrfParams.from_dict(doc["params"])
    c = doc["config"]
    mc = ModelConfig(
        components=tuple(c["components"]),
        beta00=float(c["beta00"]),
        starts=c["starts"],
        max_evals=c["max_evals"],
        tol=float(c["tol"]),
        seed=c["seed"],
    )
    return fit_result_at(data, params, mc)


def _load_query(pr):
    g = load_genotypes(pr["genotype"])
    ids = list(g.line_ids)
    rows = cols = None
    subpop = None
    if pr["layout"] is not None:
        _, raw = _read_rows(pr["layout"], expected_header=("obs_id", "row", "col"))
        coord = {r[0]: (int(r[1]), int(r[2])) for _, r in raw}
        missing = [i for i in ids if i not in coord]
        if missing:
            raise DataFormatError(f"{pr['layout']}: missing coordinates for point {missing[0]!r}")
        rows = np.array([coord[i][0] for i in ids])
        cols = np.array([coord[i][1] for i in ids])
    if pr["subpop"] is not None:
        _, raw = _read_rows(pr["subpop"], expected_header=("obs_id", "subpop_label"))
        lab = {r[0]: r[1] for _, r in raw}
        missing = [i for i in ids if i not in lab]
        if missing:
            raise DataFormatError(f"{pr['subpop']}: missing label for point {missing[0]!r}")
        subpop = tuple(lab[i] for i in ids)
    return ids, QueryPoints(genotypes=g.values, subpop=subpop, rows=rows, cols=cols)


def cmd_predict(cfg) -> int:
    data = _load_data(cfg)
    pr = cfg["predict"]
    res = _load_fit(cfg, data, pr["fit_json"])
    ids, query = _load_query(pr)
    log.info("predicting %d points (target=%s)", len(ids), pr["target"])
    preds = grf_predict(res, data, query, target=pr["target"])
    path = _out(cfg, "predictions.csv")
    write_delimited(
        path,
        ("point_id", "prediction", "target"),
        [{"point_id": i, "prediction": float(p), "target": pr["target"]}
         for i, p in zip(ids, preds)],
        preamble=standard_preamble(config_hash(cfg), cfg["seed"]),
    )
    log.info("-> %s", path)
    return 0


def cmd_adjust(cfg) -> int:
    data = _load_data(cfg)
    a = cfg["adjust"]
    if a["method"] == "rc":
        adj = baselines.rc_adjust(data, seed=cfg["seed"])
    else:
        adj = baselines.mvng_adjust(data, orientation=a["orientation"])
    path = _out(cfg, f"adjusted_{a['method']}.csv")
    obs_ids = data.obs_ids or tuple(str(i) for i in range(data.n))
    write_delimited(
        path,
        ("obs_id", "y", "y_hat", "method"),
        [
            {"obs_id": o, "y": float(y), "y_hat": float(yh), "method": adj.method}
            for o, y, yh in zip(obs_ids, data.y, adj.y_hat)
        ],
        preamble=standard_preamble(config_hash(cfg), cfg["seed"]),
    )
    log.info("adjusted phenotypes (%s) -> %s", adj.method, path)
    return 0


def _load_design(path, obs_ids):
    _, raw = _read_rows(path, expected_header=("obs_id", "rep", "block"))
    rep, block = {}, {}
    for _, r in raw:
        rep[r[0]] = r[1]
        block[r[0]] = r[2]
    missing = [o for o in obs_ids if o not in rep]
    if missing:
        raise DataFormatError(f"{path}: missing design row for observation {missing[0]!r}")
    return tuple(rep[o] for o in obs_ids), tuple(block[o] for o in obs_ids)


def cmd_cv(cfg) -> int:
    data = _load_data(cfg)
    cv = cfg["cv"]
    plan = SplitPlan(
        mode=cv["mode"],
        train_fraction=float(cv["train_fraction"]),
        replications=cv["replications"],
        seed=cfg["seed"],
    )
    group_labels = None
    if cv["mode"] == "grouped":
        if cv["group_by"] == "none":
            raise ConfigError("grouped mode requires genotype group labels (cv.group_by != 'none')")
        group_labels = data.genotype_group if cv["group_by"] == "line" else data.subpop
        if group_labels is None:
            raise ConfigError(f"grouped mode: no {cv['group_by']} labels in the dataset")
    ib_labels = None
    if "ib" in cv["methods"]:
        if cv.get("design") is None:
            raise ConfigError("method 'ib' requires a cv.design file (obs_id,rep,block)")
        ib_labels = _load_design(cv["design"], data.obs_ids)
    log.info("cross-validation: %d replications, mode=%s, methods=%s",
             plan.replications, plan.mode, ",".join(cv["methods"]))
    report = run_benchmark(
        data,
        cv["methods"],
        plan,
        model_config=_model_config(cfg),
        predict_target=cv["target"],
        orientation=cv["orientation"],
        ib_labels=ib_labels,
        group_labels=group_labels,
        workers=cfg["threads"],
    )
    pre = standard_preamble(config_hash(cfg), cfg["seed"])
    per_path = _out(cfg, "cv_metrics.csv")
    write_delimited(per_path, METRIC_FIELDS, metric_rows_for_csv(report.rows), preamble=pre)
    agg_path = _out(cfg, "cv_aggregate.csv")
    write_delimited(agg_path, AGGREGATE_FIELDS, aggregate_rows(report), preamble=pre)
    meta = {
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "predict_target": report.predict_target,
        "gamma_hat_full_data": report.gamma_full,
        "replications": plan.replications,
        "mode": plan.mode,
    }
    write_json(_out(cfg, "cv_meta.json"), meta)
    log.info("-> %s, %s", per_path, agg_path)
    return 0


def cmd_simulate(cfg) -> int:
    data = _load_data(cfg)
    sim = cfg["simulate"]
    mc = _model_config(cfg)
    if sim["fit_json"] is not None:
        gen_fit = _load_fit(cfg, data, sim["fit_json"])
    elif sim["inline_fit"]:
        log.info("no fit document supplied; fitting inline")
        gen_fit = grf_fit(data, mc)
    else:
        raise ConfigError("simulate.fit_json missing and simulate.inline_fit is disabled")
    spec = SimSpec(fit=gen_fit, c=float(sim["c"]), replications=sim["replications"],
                   seed=cfg["seed"])
    log.info("ranking study: c=%g, %d replications, methods=%s",
             spec.c, spec.replications, ",".join(sim["methods"]))
    report = ranking_study(
        data, spec, sim["methods"], model_config=mc, l_max=sim["l_max"],
        workers=cfg["threads"],
    )
    pre = standard_preamble(config_hash(cfg), cfg["seed"])
    rows = metric_rows_for_csv(report.rows)
    for r in rows:
        r["c"] = report.c
    metrics_path = _out(cfg, "sim_metrics.csv")
    write_delimited(
        metrics_path,
        ("method", "replication", "c", "accuracy", "spearman", "gamma_hat", "error"),
        rows,
        preamble=pre,
    )
    curves_path = _out(cfg, "sim_topl.csv")
    write_delimited(curves_path, ("method", "c", "l", "avg_median"),
                    curve_rows(report), preamble=pre)
    log.info("-> %s, %s", metrics_path, curves_path)
    return 0


def cmd_rank_report(cfg) -> int:
    from .report import render_rank_report  # matplotlib import deferred

    rep = cfg["report"]
    written = render_rank_report(
        rep["curves"],
        rep["metrics"],
        cfg["output_dir"],
        formats=tuple(rep["formats"]),
        cfg_hash=config_hash(cfg),
        seed=cfg["seed"],
    )
    for w in written:
        log.info("-> %s", w)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "adjust": cmd_adjust,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "rank-report": cmd_rank_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grfpred",
        description="Genomic prediction with marker, subpopulation and lattice-spatial kernels",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config document")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--threads", type=int, help="override worker count")
        p.add_argument("--output-dir", help="override output directory")

    common(sub.add_parser("fit", help="fit the field model, write fit.json"))

    p = sub.add_parser("predict", help="predict new points from a fit document")
    common(p)
    p.add_argument("--fit-json", help="override predict.fit_json")
    p.add_argument("--target", choices=("phenotype", "genetic_value"))

    p = sub.add_parser("adjust", help="spatial phenotype adjustment (rc|mvng)")
    common(p)
    p.add_argument("--method", choices=("rc", "mvng"))
    p.add_argument("--orientation", choices=("standard", "swapped"))

    p = sub.add_parser("cv", help="cross-validated method benchmark")
    common(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--mode", choices=("random", "grouped", "stratified"))
    p.add_argument("--train-fraction", type=float)

    p = sub.add_parser("simulate", help="posterior simulation ranking study")
    common(p)
    p.add_argument("--c", type=float, help="spatial strength multiplier")
    p.add_argument("--replications", type=int)
    p.add_argument("--fit-json", help="override simulate.fit_json")

    p = sub.add_parser("rank-report", help="render figures + summary from simulate outputs")
    common(p)
    p.add_argument("--curves", action="append", help="top-l curve CSV (repeatable)")
    p.add_argument("--metrics", action="append", help="per-replication metrics CSV (repeatable)")
    p.add_argument("--formats", nargs="+", choices=("png", "svg"))

    return parser


_OVERRIDE_PATHS = {
    "seed": "seed",
    "threads": "threads",
    "output_dir": "output_dir",
    "fit_json": None,  # per-command below
    "target": "predict.target",
    "method": "adjust.method",
    "orientation": "adjust.orientation",
    "replications": None,
    "mode": "cv.mode",
    "train_fraction": "cv.train_fraction",
    "c": "simulate.c",
    "curves": "report.curves",
    "metrics": "report.metrics",
    "formats": "report.formats",
}


def _collect_overrides(args) -> dict:
    over = {}
    for attr, path in _OVERRIDE_PATHS.items():
        if not hasattr(args, attr):
            continue
        value = getattr(args, attr)
        if value is None:
            continue
        if attr == "fit_json":
            path = "predict.fit_json" if args.command == "predict" else "simulate.fit_json"
        elif attr == "replications":
            path = "cv.replications" if args.command == "cv" else "simulate.replications"
        over[path] = value
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        doc = load_config(args.config) if args.config else {}
        doc = apply_overrides(doc, _collect_overrides(args))
        cfg = validate_config(doc, args.command)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        _error_record(exc, 2)
        return 2
    except (DataFormatError, OSError) as exc:
        _error_record(exc, 4)
        return 4
    except (NumericalError, np.linalg.LinAlgError) as exc:
        _error_record(exc, 3)
        return 3
    except ValueError as exc:
        _error_record(exc, 2)
        return 2


def _error_record(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def entrypoint():  # console script
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
