"""Cross-validation harness: splits, metrics, and the method registry.

Replications are independent; each gets its own RNG stream derived from
(seed, replication index), so results do not depend on scheduling and
re-running with the same plan is exactly reproducible.
"""

from __future__ import annotations

import math
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import baselines
from .data import Dataset
from .engine import ModelConfig, QueryPoints, fit as grf_fit, predict as grf_predict

GRF_COMPONENTS = {
    "grf": ("genotype", "subpop", "spatial"),
    "grf_minus_b": ("genotype", "spatial"),
    "grf_minus_s": ("genotype", "subpop"),
    "grf_minus_bs": ("genotype",),
}

BASELINE_METHODS = ("rc_rr", "rc_gauss", "mvng_rr", "mvng_gauss", "ib")

ALL_METHODS = tuple(GRF_COMPONENTS) + BASELINE_METHODS


@dataclass(frozen=True)
class SplitPlan:
    """How to partition observations into train and test sets.

    Modes: ``random`` draws observations; ``grouped`` keeps every
    genotype's observations entirely on one side; ``stratified`` splits
    within each subpopulation and pools the results.
    """

    mode: str = "random"
    train_fraction: float = 0.8
    replications: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "grouped", "stratified"):
            raise ValueError("mode must be 'random', 'grouped' or 'stratified'")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.replications < 1:
            raise ValueError("replications must be positive")


def _split_sizes(n, fraction):
    n_train = int(round(fraction * n))
    return min(max(n_train, 1), n - 1)


def make_splits(data: Dataset, plan: SplitPlan, group_labels=None):
    """Train/test index pairs, one per replication, deterministic by seed."""
    n = data.n
    if n < 2:
        raise ValueError("need at least two observations to split")
    if plan.mode == "grouped":
        labels = group_labels if group_labels is not None else data.genotype_group
        if labels is None:
            raise ValueError("grouped splitting requires genotype group labels")
        labels = np.asarray(labels)
        uniq = np.unique(labels)
        if uniq.size < 2:
            raise ValueError("grouped splitting requires at least two genotype groups")
    elif plan.mode == "stratified":
        if data.subpop is None:
            raise ValueError("stratified splitting requires subpopulation labels")
        strata = np.asarray(data.subpop)

    out = []
    for rep in range(plan.replications):
        rng = np.random.default_rng([plan.seed, rep])
        if plan.mode == "random":
            perm = rng.permutation(n)
            k = _split_sizes(n, plan.train_fraction)
            train, test = perm[:k], perm[k:]
        elif plan.mode == "grouped":
            order = rng.permutation(uniq)
            target = plan.train_fraction * n
            train_groups, total = [], 0
            for g in order:
                if total >= target and train_groups:
                    break
                train_groups.append(g)
                total += int(np.sum(labels == g))
            if len(train_groups) == uniq.size:  # keep at least one test group
                train_groups.pop()
            mask = np.isin(labels, train_groups)
            train, test = np.where(mask)[0], np.where(~mask)[0]
        else:  # stratified
            train_parts, test_parts = [], []
            for s in np.unique(strata):
                idx = np.where(strata == s)[0]
                if idx.size < 2:
                    train_parts.append(idx)
                    continue
                perm = idx[rng.permutation(idx.size)]
                k = _split_sizes(idx.size, plan.train_fraction)
                train_parts.append(perm[:k])
                test_parts.append(perm[k:])
            train = np.concatenate(train_parts)
            test = np.concatenate(test_parts) if test_parts else np.array([], dtype=int)
        if train.size == 0 or test.size == 0:
            raise ValueError("split produced an empty train or test set")
        out.append((np.sort(train), np.sort(test)))
    return out


# ---------------------------------------------------------------------------
# metrics


def accuracy(pred, obs) -> float:
    """Pearson correlation; NaN when either side is constant."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ValueError("prediction and observation lengths differ")
    if pred.size < 3:
        raise ValueError("need at least 3 pairs for a correlation")
    sp, so = float(np.std(pred)), float(np.std(obs))
    if sp == 0.0 or so == 0.0:
        return math.nan
    return float(np.corrcoef(pred, obs)[0, 1])


def average_ranks(values, descending: bool = False) -> np.ndarray:
    """Ranks starting at 1 with ties sharing their average rank."""
    v = np.asarray(values, dtype=float)
    if descending:
        v = -v
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=float)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(pred_rank_source, truth_rank_source) -> float:
    """Rank correlation with average ranks for ties; NaN when degenerate."""
    a = np.asarray(pred_rank_source, dtype=float)
    b = np.asarray(truth_rank_source, dtype=float)
    if a.shape != b.shape:
        raise ValueError("input lengths differ")
    ra, rb = average_ranks(a), average_ranks(b)
    if np.std(ra) == 0.0 or np.std(rb) == 0.0:
        return math.nan
    return float(np.corrcoef(ra, rb)[0, 1])


def top_l_median_rank(pred_genetic, true_genetic, l_max: int) -> np.ndarray:
    """Median true rank of the l best-predicted entries, for l = 1..l_max.

    Rank 1 is the best (largest) true value; lower medians mean the
    predicted top group contains genuinely top entries.
    """
    pred = np.asarray(pred_genetic, dtype=float)
    true = np.asarray(true_genetic, dtype=float)
    if pred.shape != true.shape:
        raise ValueError("input lengths differ")
    if l_max > pred.size:
        raise ValueError("l_max cannot exceed the number of entries")
    true_rank = average_ranks(true, descending=True)
    order = np.argsort(-pred, kind="stable")
    return np.array([float(np.median(true_rank[order[:l]])) for l in range(1, l_max + 1)])


# ---------------------------------------------------------------------------
# benchmark harness


@dataclass
class EvalContext:
    """Everything a replication worker needs besides the split itself."""

    methods: tuple
    model_config: ModelConfig
    predict_target: str = "phenotype"
    orientation: str = "standard"
    ib_rep_labels: Optional[tuple] = None
    ib_block_labels: Optional[tuple] = None
    adjusted: dict = field(default_factory=dict)  # method family -> AdjustedPhenotypes


def _grf_run(data, train_idx, test_idx, components, ctx):
    train = data.subset(train_idx)
    cfg = ctx.model_config.replace(components=components)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = grf_fit(train, cfg)
        query = QueryPoints.from_dataset(data.subset(test_idx))
        pred = grf_predict(res, train, query, target=ctx.predict_target)
    return pred, res.gamma_hat


def _method_predictions(data, method, train_idx, test_idx, ctx):
    if method in GRF_COMPONENTS:
        return _grf_run(data, train_idx, test_idx, GRF_COMPONENTS[method], ctx)
    if method in ("rc_rr", "rc_gauss", "mvng_rr", "mvng_gauss"):
        family = "rc" if method.startswith("rc") else "mvng"
        kernel = method.split("_")[1]
        adj = ctx.adjusted[family]
        pred = baselines.two_step_predict(adj, data.genotypes, kernel, train_idx, test_idx)
        return pred, math.nan
    if method == "ib":
        pred = baselines.ib_fit_predict(
            data, ctx.ib_rep_labels, ctx.ib_block_labels, train_idx, test_idx,
            seed=ctx.model_config.seed,
        )
        return pred, math.nan
    raise ValueError(f"unknown method {method!r}")


def _run_replication(data, ctx, rep, train_idx, test_idx):
    rows = []
    obs = data.y[test_idx]
    for method in ctx.methods:
        row = {"method": method, "replication": rep}
        try:
            pred, gamma = _method_predictions(data, method, train_idx, test_idx, ctx)
            row["accuracy"] = accuracy(pred, obs)
            row["spearman"] = spearman(pred, obs)
            row["gamma_hat"] = gamma
            row["error"] = ""
        except Exception as exc:  # failure recorded, not fatal
            row["accuracy"] = math.nan
            row["spearman"] = math.nan
            row["gamma_hat"] = math.nan
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


_WORKER_STATE = {}


def _worker_init(data, ctx):
    _WORKER_STATE["data"] = data
    _WORKER_STATE["ctx"] = ctx


def _worker_run(args):
    rep, train_idx, test_idx = args
    return _run_replication(_WORKER_STATE["data"], _WORKER_STATE["ctx"], rep, train_idx, test_idx)


@dataclass
class MetricReport:
    """Per-replication metrics plus aggregation, ready for CSV export."""

    methods: tuple
    rows: list
    gamma_full: Optional[float]
    predict_target: str
    plan: SplitPlan

    def aggregates(self) -> dict:
        out = {}
        for method in self.methods:
            acc = np.array([r["accuracy"] for r in self.rows if r["method"] == method])
            rho = np.array([r["spearman"] for r in self.rows if r["method"] == method])
            ok = np.isfinite(acc)
            out[method] = {
                "mean_accuracy": float(np.mean(acc[ok])) if ok.any() else math.nan,
                "sd_accuracy": float(np.std(acc[ok], ddof=1)) if ok.sum() > 1 else math.nan,
                "mean_spearman": float(np.nanmean(rho)) if np.isfinite(rho).any() else math.nan,
                "sd_spearman": float(np.nanstd(rho, ddof=1)) if np.isfinite(rho).sum() > 1 else math.nan,
                "n_ok": int(ok.sum()),
                "n_missing": int((~ok).sum()),
            }
        return out


def validate_methods(data: Dataset, methods, plan: SplitPlan, ib_labels=None):
    """Fail fast when a requested method cannot run on this dataset."""
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; valid: {sorted(ALL_METHODS)}")
    needs_layout = [m for m in methods
                    if m.startswith(("rc", "mvng")) or "spatial" in GRF_COMPONENTS.get(m, ())]
    if needs_layout and data.layout is None:
        raise ValueError(f"methods {needs_layout} require a field layout")
    subpop_methods = [m for m in methods if "subpop" in GRF_COMPONENTS.get(m, ())]
    if subpop_methods and data.subpop is None:
        warnings.warn(
            f"methods {subpop_methods} requested subpopulation structure but the dataset "
            "has no labels; the component will be dropped",
            stacklevel=2,
        )
    if "ib" in methods and ib_labels is None:
        raise ValueError("the incomplete-block method requires replication and block labels")


def run_benchmark(
    data: Dataset,
    methods,
    plan: SplitPlan,
    *,
    model_config: ModelConfig | None = None,
    predict_target: str = "phenotype",
    orientation: str = "standard",
    ib_labels=None,
    group_labels=None,
    workers: int = 1,
    compute_full_gamma: bool = True,
) -> MetricReport:
    """Repeated train/test evaluation of the listed methods.

    Spatial adjustments (RC, MVNG) are computed once on the full field
    and reused across replications, mirroring the two-step protocol. The
    ratio of spatial to genotypic variance is additionally estimated once
    from the whole dataset with the richest requested field model.
    """
    methods = tuple(methods)
    validate_methods(data, methods, plan, ib_labels=ib_labels)
    model_config = model_config or ModelConfig()
    ctx = EvalContext(
        methods=methods,
        model_config=model_config,
        predict_target=predict_target,
        orientation=orientation,
        ib_rep_labels=None if ib_labels is None else tuple(ib_labels[0]),
        ib_block_labels=None if ib_labels is None else tuple(ib_labels[1]),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if any(m.startswith("rc") for m in methods):
            ctx.adjusted["rc"] = baselines.rc_adjust(data, seed=model_config.seed)
        if any(m.startswith("mvng") for m in methods):
            ctx.adjusted["mvng"] = baselines.mvng_adjust(data, orientation=orientation)

    gamma_full = None
    if compute_full_gamma:
        spatial_grfs = [m for m in methods
                        if m in GRF_COMPONENTS and "spatial" in GRF_COMPONENTS[m]]
        if spatial_grfs:
            richest = max(spatial_grfs, key=lambda m: len(GRF_COMPONENTS[m]))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                full_fit = grf_fit(data, model_config.replace(components=GRF_COMPONENTS[richest]))
            gamma_full = full_fit.gamma_hat

    splits = make_splits(data, plan, group_labels=group_labels)
    tasks = [(rep, tr, te) for rep, (tr, te) in enumerate(splits)]
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(data, ctx)
        ) as pool:
            for reprows in pool.map(_worker_run, tasks, chunksize=1):
                rows.extend(reprows)
    else:
        for rep, tr, te in tasks:
            rows.extend(_run_replication(data, ctx, rep, tr, te))
    return MetricReport(
        methods=methods,
        rows=rows,
        gamma_full=gamma_full,
        predict_target=predict_target,
        plan=plan,
    )
