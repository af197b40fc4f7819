"""Classical spatial-adjustment baselines.

Two de-trending adjustments (a row-and-column mixed model and a
moving-means covariate regression), the two-step genomic predictor that
follows them, and the incomplete-block mixed model. The mixed models
reuse the additive-kernel engine; the one-kernel second step uses an
eigendecomposition so the variance-ratio search is a cheap 1-d problem.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from threadpoolctl import threadpool_limits

from .data import Dataset, GenotypeMatrix, cross_sq_dists, pairwise_sq_dists
from .engine import AdditiveFit, FixedTerm, fit_additive
from .kernels import rr_kernel, subpop_kernel, vanraden_kinship

LOG2PI = math.log(2.0 * math.pi)


@dataclass
class AdjustedPhenotypes:
    """Spatially de-trended phenotypes plus the effects that were removed."""

    y_hat: np.ndarray
    method: str
    fitted_effects: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y_hat = np.asarray(self.y_hat, dtype=float)
        if not np.all(np.isfinite(self.y_hat)):
            raise ValueError("adjusted phenotypes contain non-finite values")


def _indicator_term(name, labels, in_genetic_target=False):
    return FixedTerm(name, subpop_kernel(labels).values, in_genetic_target=in_genetic_target)


def rc_adjust(data: Dataset, *, starts: int = 2, max_evals: int = 1200, seed: int = 0) -> AdjustedPhenotypes:
    """Row-and-column adjustment.

    Fits independent mean-zero row, column, and subpopulation random
    effects by maximum likelihood through the shared engine, then removes
    the row and column eBLUPs from the phenotypes (the subpopulation
    effect is estimated for shrinkage but kept in the data). Effect types
    with a single level are dropped with a warning.
    """
    if data.layout is None:
        raise ValueError("row-and-column adjustment requires a field layout")
    groups = [("row", tuple(int(r) for r in data.layout.rows)),
              ("col", tuple(int(c) for c in data.layout.cols))]
    if data.subpop is not None:
        groups.append(("subpop", data.subpop))
    terms = []
    for name, labels in groups:
        if len(set(labels)) < 2:
            warnings.warn(f"{name} effect has a single level and was dropped", stacklevel=2)
            continue
        terms.append(_indicator_term(name, labels))
    if not terms:
        raise ValueError("no usable effects for the row-and-column model")
    afit = fit_additive(data.y, terms, starts=starts, max_evals=max_evals, seed=seed)
    row_blup = afit.component_mean("row")
    col_blup = afit.component_mean("col")
    return AdjustedPhenotypes(
        y_hat=data.y - row_blup - col_blup,
        method="RC",
        fitted_effects={
            "row": row_blup,
            "col": col_blup,
            "subpop": afit.component_mean("subpop"),
            "variances": dict(afit.variances),
            "mu": afit.mu,
            "criterion": "ML",
        },
    )


_MVNG_OFFSETS = {
    # (drow, dcol) neighbor offsets: one up/down, two left/right
    "standard": [(-1, 0), (1, 0), (0, -1), (0, -2), (0, 1), (0, 2)],
    "swapped": [(0, -1), (0, 1), (-1, 0), (-2, 0), (1, 0), (2, 0)],
}


def mvng_adjust(data: Dataset, orientation: str = "standard") -> AdjustedPhenotypes:
    """Moving-means covariate adjustment.

    The covariate is each plot's deviation from the mean of its available
    neighbors (one up, one down, two left, two right); a simple linear
    regression on that covariate is then subtracted. ``orientation``
    chooses which lattice axis plays left-right: "standard" runs
    left-right along columns, "swapped" along rows (for fields whose
    short spacing is between lattice rows).
    """
    if data.layout is None:
        raise ValueError("moving-means adjustment requires a field layout")
    if orientation not in _MVNG_OFFSETS:
        raise ValueError(f"orientation must be one of {sorted(_MVNG_OFFSETS)}")
    offsets = _MVNG_OFFSETS[orientation]
    m1, m2 = data.layout.m1, data.layout.m2
    grid = np.full((m1 + 1, m2 + 1), np.nan)  # 1-based coordinates
    grid[data.layout.rows, data.layout.cols] = data.y

    x = np.zeros(data.n)
    isolated = 0
    for i in range(data.n):
        r, c = int(data.layout.rows[i]), int(data.layout.cols[i])
        vals = []
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 1 <= rr <= m1 and 1 <= cc <= m2 and np.isfinite(grid[rr, cc]):
                vals.append(grid[rr, cc])
        if vals:
            x[i] = data.y[i] - float(np.mean(vals))
        else:
            isolated += 1
    if isolated:
        warnings.warn(
            f"{isolated} observation(s) have no lattice neighbors; their covariate is 0",
            stacklevel=2,
        )

    vx = float(np.var(x))
    beta = float(np.cov(x, data.y, bias=True)[0, 1] / vx) if vx > 0 else 0.0
    return AdjustedPhenotypes(
        y_hat=data.y - beta * x,
        method="MVNG",
        fitted_effects={"beta": beta, "covariate": x, "orientation": orientation},
    )


# ---------------------------------------------------------------------------
# one-kernel mixed model (eigendecomposition route)


@dataclass
class OneKernelFit:
    """y = mu 1 + u + e with u ~ N(0, vu K): REML or ML estimates."""

    mu: float
    vu: float
    ve: float
    loglik: float
    criterion: str
    _eig: tuple = field(repr=False, default=())

    def blup_cross(self, k_cross: np.ndarray) -> np.ndarray:
        """Predictions mu + vu K_cross V^{-1} (y - mu 1) for new points."""
        w, u, resid_rot = self._eig
        lam = self.vu / self.ve if self.ve > 0 else 0.0
        hinv_r = u @ (resid_rot / (lam * w + 1.0))
        return self.mu + lam * (k_cross @ hinv_r)


def _one_kernel_profile(log_lam, w, ones_rot, y_rot, criterion):
    """Profile criterion value and byproducts at a fixed variance ratio."""
    lam = math.exp(log_lam)
    h = lam * w + 1.0
    s11 = float(np.sum(ones_rot**2 / h))
    s1y = float(np.sum(ones_rot * y_rot / h))
    mu = s1y / s11
    r = y_rot - mu * ones_rot
    quad = float(np.sum(r**2 / h))
    n = w.size
    logdet = float(np.sum(np.log(h)))
    if criterion == "ML":
        ve = quad / n
        ve = max(ve, 1e-300)
        ll = -0.5 * (n * LOG2PI + n * math.log(ve) + logdet + n)
    else:  # REML with one fixed effect (the mean)
        ve = quad / (n - 1)
        ve = max(ve, 1e-300)
        ll = -0.5 * ((n - 1) * LOG2PI + (n - 1) * math.log(ve) + logdet + math.log(s11) + (n - 1))
    return ll, mu, ve, r


def one_kernel_fit(y, K, criterion: str = "REML") -> OneKernelFit:
    """Fit the one-kernel mixed model by REML (default) or ML.

    The kernel is eigendecomposed once; the search over the variance
    ratio vu/ve is a bracketed 1-d optimization on the log scale. The
    noise variance keeps a positive floor so rank-deficient kernels stay
    well-posed.
    """
    criterion = criterion.upper()
    if criterion not in ("REML", "ML"):
        raise ValueError("criterion must be 'REML' or 'ML'")
    y = np.asarray(y, dtype=float)
    K = np.asarray(K, dtype=float)
    w, u = np.linalg.eigh(0.5 * (K + K.T))
    w = np.clip(w, 0.0, None)
    ones_rot = u.T @ np.ones(y.size)
    y_rot = u.T @ y

    # normalize the ratio scale to the kernel's mean eigenvalue
    scale = float(np.mean(w)) or 1.0
    grid = np.linspace(-18.0, 18.0, 61) - math.log(scale)
    vals = [_one_kernel_profile(g, w, ones_rot, y_rot, criterion)[0] for g in grid]
    k = int(np.argmax(vals))
    lo = grid[max(0, k - 1)]
    hi = grid[min(len(grid) - 1, k + 1)]
    res = minimize_scalar(
        lambda g: -_one_kernel_profile(g, w, ones_rot, y_rot, criterion)[0],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-8},
    )
    best = res.x if -res.fun >= vals[k] else grid[k]
    ll, mu, ve, r = _one_kernel_profile(best, w, ones_rot, y_rot, criterion)
    lam = math.exp(best)
    return OneKernelFit(
        mu=mu, vu=lam * ve, ve=ve, loglik=ll, criterion=criterion, _eig=(w, u, r)
    )


def _gauss_kernel_tau_reml(y, sq_dists, tol=1e-6):
    """Profile REML over the Gaussian-kernel bandwidth.

    Outer 1-d search over log tau; each candidate runs the inner
    variance-component REML on its realized kernel.
    """
    off = sq_dists[~np.eye(sq_dists.shape[0], dtype=bool)]
    med = float(np.median(off))
    if med <= 0:
        med = 1.0
    log_tau0 = math.log(med)

    def reml_at(log_tau):
        k = np.exp(-sq_dists / math.exp(log_tau))
        np.fill_diagonal(k, 1.0)
        return one_kernel_fit(y, k, criterion="REML").loglik

    with threadpool_limits(limits=1, user_api="blas"):
        grid = log_tau0 + np.linspace(-6.0, 6.0, 13)
        vals = [reml_at(g) for g in grid]
        k = int(np.argmax(vals))
        lo, hi = grid[max(0, k - 1)], grid[min(len(grid) - 1, k + 1)]
        res = minimize_scalar(
            lambda g: -reml_at(g), bounds=(lo, hi), method="bounded", options={"xatol": tol}
        )
        best = res.x if -res.fun >= vals[k] else grid[k]
    return math.exp(best)


def two_step_predict(
    y_adj,
    g: GenotypeMatrix,
    kernel: str,
    train_idx,
    test_idx,
    criterion: str = "REML",
) -> np.ndarray:
    """Genomic prediction on adjusted phenotypes with kernel RR or GAUSS.

    RR uses the raw linear kernel X X'; GAUSS uses the Gaussian marker
    kernel with its bandwidth chosen by profile REML on the training set.
    Test predictions are BLUPs through the kernel cross-covariance.
    """
    y = y_adj.y_hat if isinstance(y_adj, AdjustedPhenotypes) else np.asarray(y_adj, dtype=float)
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.asarray(test_idx, dtype=int)
    if train_idx.size == 0 or test_idx.size == 0:
        raise ValueError("train/test split must be non-empty")
    x = g.values if isinstance(g, GenotypeMatrix) else np.asarray(g, dtype=float)
    x_tr, x_te = x[train_idx], x[test_idx]
    kernel = kernel.lower()
    if kernel == "rr":
        k_train = rr_kernel(x_tr).values
        k_cross = x_te @ x_tr.T
    elif kernel == "gauss":
        d2 = pairwise_sq_dists(x_tr)
        tau = _gauss_kernel_tau_reml(y[train_idx], d2)
        k_train = np.exp(-d2 / tau)
        np.fill_diagonal(k_train, 1.0)
        k_cross = np.exp(-cross_sq_dists(x_te, x_tr) / tau)
    else:
        raise ValueError("kernel must be 'RR' or 'GAUSS'")
    mm = one_kernel_fit(y[train_idx], k_train, criterion=criterion)
    return mm.blup_cross(k_cross)


def ib_fit_predict(
    data: Dataset,
    rep_labels,
    block_labels,
    train_idx,
    test_idx,
    *,
    starts: int = 2,
    max_evals: int = 1200,
    seed: int = 0,
) -> np.ndarray:
    """Incomplete-block mixed model with a kinship genetic effect.

    Fits y = mu 1 + u_g + u_rep + u_block + e on the training rows, with
    u_g ~ N(0, vg K) for the VanRaden kinship of the whole panel, and
    independent replication and block effects. Test predictions are the
    genetic-value BLUPs mu + vg K[test, train] Sigma^{-1} residual.
    Single-level design effects are dropped with a warning.
    """
    if rep_labels is None or block_labels is None:
        raise ValueError("incomplete-block model requires replication and block labels")
    rep_labels = tuple(rep_labels)
    block_labels = tuple(block_labels)
    if len(rep_labels) != data.n or len(block_labels) != data.n:
        raise ValueError("label lengths must match the dataset")
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.asarray(test_idx, dtype=int)

    k_full = vanraden_kinship(data.genotypes).values
    terms = [FixedTerm("genotype", k_full[np.ix_(train_idx, train_idx)], in_genetic_target=True)]
    for name, labels in (("rep", rep_labels), ("block", block_labels)):
        sub = tuple(labels[i] for i in train_idx)
        if len(set(sub)) < 2:
            warnings.warn(f"{name} effect has a single level and was dropped", stacklevel=2)
            continue
        terms.append(_indicator_term(name, sub))
    afit = fit_additive(data.y[train_idx], terms, starts=starts, max_evals=max_evals, seed=seed)
    vg = afit.variances["genotype"]
    k_cross = k_full[np.ix_(test_idx, train_idx)]
    return afit.mu + vg * (k_cross @ afit.alpha)
