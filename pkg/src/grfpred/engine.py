"""Additive Gaussian random field engine.

The phenotype covariance is a variance-weighted sum of unit-diagonal
kernels plus a noise ridge. One shared core handles every additive model
in the package: the full genotype + subpopulation + spatial field, its
reduced variants, and the fixed-kernel mixed models used by the
baselines. Fitting maximizes the profile log-likelihood (mean profiled
out in closed form) with a multi-start Nelder-Mead search in transformed
coordinates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from threadpoolctl import threadpool_limits

from .data import Dataset, cross_sq_dists, pairwise_sq_dists
from .kernels import LatticeKernelBuilder, indicator_cross, subpop_kernel

COMPONENTS = ("genotype", "subpop", "spatial")


class NumericalError(RuntimeError):
    """A covariance factorization failed beyond recovery."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logit(p):
    p = min(max(p, 1e-15), 1.0 - 1e-15)
    return math.log(p / (1.0 - p))


# ---------------------------------------------------------------------------
# covariance terms


class Term:
    """One additive covariance component.

    ``kernel(hyper)`` realizes the n x n kernel at the given transformed
    hyperparameters; ``cross(hyper, query)`` the query-by-train block.
    ``in_genetic_target`` marks components that belong to the genetic
    value (as opposed to nuisance structure like spatial or design
    effects).

    The array returned by ``kernel`` may be an internal buffer that is
    overwritten by the next call; callers that keep it must copy.
    """

    name: str
    in_genetic_target = False
    hyper_names: tuple[str, ...] = ()

    def hyper_init(self) -> tuple[float, ...]:
        return ()

    def kernel(self, hyper) -> np.ndarray:
        raise NotImplementedError

    def cross(self, hyper, query) -> np.ndarray:
        raise NotImplementedError(f"term {self.name!r} does not support out-of-sample queries")

    def describe_hyper(self, hyper) -> dict:
        return {}


class FixedTerm(Term):
    """A term whose kernel matrix is fixed up front (indicators, kinship)."""

    def __init__(self, name, values, in_genetic_target=False):
        self.name = name
        self.values = np.asarray(values, dtype=float)
        self.in_genetic_target = in_genetic_target

    def kernel(self, hyper):
        return self.values


class MarkerTerm(Term):
    """Gaussian marker kernel with a free bandwidth.

    The squared-distance matrix is computed once; each bandwidth value
    costs only an elementwise exponential. The transformed hyperparameter
    is log tau, initialized at the median off-diagonal squared distance.
    """

    name = "genotype"
    in_genetic_target = True
    hyper_names = ("log_tau",)

    def __init__(self, genotype_values):
        self.x = np.asarray(genotype_values, dtype=float)
        self.sq_dists = pairwise_sq_dists(self.x)
        off = self.sq_dists[~np.eye(self.sq_dists.shape[0], dtype=bool)]
        med = float(np.median(off)) if off.size else 1.0
        self._log_tau0 = math.log(med if med > 0 else 1.0)
        self._buf = np.empty_like(self.sq_dists)
        self._last = None

    def hyper_init(self):
        return (self._log_tau0,)

    def kernel(self, hyper):
        log_tau = hyper[0]
        if self._last != log_tau:
            np.multiply(self.sq_dists, -1.0 / math.exp(log_tau), out=self._buf)
            np.exp(self._buf, out=self._buf)
            np.fill_diagonal(self._buf, 1.0)
            self._last = log_tau
        return self._buf

    def cross(self, hyper, query):
        if query.genotypes is None:
            raise ValueError("query lacks genotypes required by the marker kernel")
        d2 = cross_sq_dists(query.genotypes, self.x)
        return np.exp(-d2 / math.exp(hyper[0]))

    def describe_hyper(self, hyper):
        return {"tau": math.exp(hyper[0])}


class SubpopTerm(Term):
    name = "subpop"
    in_genetic_target = True

    def __init__(self, labels):
        self.labels = tuple(labels)
        self.values = subpop_kernel(self.labels).values

    def kernel(self, hyper):
        return self.values

    def cross(self, hyper, query):
        if query.subpop is None:
            warnings.warn(
                "query has no subpopulation labels; treating all points as novel "
                "(zero cross-covariance)",
                stacklevel=3,
            )
            n_query = len(query.genotypes) if query.genotypes is not None else len(query.rows)
            return np.zeros((n_query, len(self.labels)))
        novel = sorted(set(query.subpop) - set(self.labels))
        if novel:
            warnings.warn(
                f"novel subpopulation labels {novel}: their cross-covariance is zero",
                stacklevel=3,
            )
        return indicator_cross(query.subpop, self.labels)


class SpatialTerm(Term):
    """Standardized lattice-autoregression kernel with free anisotropy.

    The transformed hyperparameter is the logit of the mixing scalar
    theta; each theta value triggers one dense eigen-product on the
    padded lattice (cached by value).
    """

    name = "spatial"
    hyper_names = ("zeta",)

    def __init__(self, builder: LatticeKernelBuilder, rows, cols):
        self.builder = builder
        self.rows = np.asarray(rows, dtype=int)
        self.cols = np.asarray(cols, dtype=int)
        n = self.rows.size
        self._out = np.empty((n, n))
        self._tmp = np.empty((n, builder.m1p * builder.m2p))
        self._last = None

    def hyper_init(self):
        return (0.0,)  # theta = 0.5

    def kernel(self, hyper):
        theta = float(_sigmoid(np.clip(hyper[0], -35.0, 35.0)))
        if self._last != theta:
            self.builder.correlation_into(theta, self.rows, self.cols, self._out, self._tmp)
            self._last = theta
        return self._out

    def cross(self, hyper, query):
        if query.rows is None or query.cols is None:
            raise ValueError("query lacks plot coordinates required by the spatial kernel")
        theta = float(_sigmoid(np.clip(hyper[0], -35.0, 35.0)))
        qr = np.asarray(query.rows, dtype=int)
        qc = np.asarray(query.cols, dtype=int)
        m = qr.size
        full = self.builder.correlation(
            theta, np.concatenate([qr, self.rows]), np.concatenate([qc, self.cols])
        )
        return full[:m, m:]

    def describe_hyper(self, hyper):
        return {"theta": float(_sigmoid(np.clip(hyper[0], -35.0, 35.0)))}


@dataclass(frozen=True)
class QueryPoints:
    """Out-of-sample points: any subset of the three index components."""

    genotypes: np.ndarray | None = None
    subpop: tuple | None = None
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None

    def __post_init__(self):
        lengths = set()
        if self.genotypes is not None:
            lengths.add(len(self.genotypes))
        if self.subpop is not None:
            lengths.add(len(self.subpop))
        if self.rows is not None or self.cols is not None:
            if self.rows is None or self.cols is None:
                raise ValueError("query needs both rows and cols or neither")
            lengths.add(len(self.rows))
            lengths.add(len(self.cols))
        if len(lengths) > 1:
            raise ValueError("query component lengths differ")
        if not lengths:
            raise ValueError("query is empty")

    @classmethod
    def from_dataset(cls, data: Dataset) -> "QueryPoints":
        return cls(
            genotypes=data.genotypes.values,
            subpop=data.subpop,
            rows=None if data.layout is None else data.layout.rows,
            cols=None if data.layout is None else data.layout.cols,
        )


# ---------------------------------------------------------------------------
# likelihood core


def _chol_loglik(sigma, y, fixed_mu=None, work=None):
    """Profile log-likelihood from a single symmetric factorization.

    Returns (loglik, mu, chol, alpha) where alpha = Sigma^{-1}(y - mu 1).
    The mean is profiled out in closed form unless ``fixed_mu`` pins it.
    The log-determinant comes from the factor diagonal and the quadratic
    form from triangular solves; a non-PD matrix gets one jitter retry.

    ``work``, when given, receives the factorization in place so the hot
    loop allocates no large temporaries; ``sigma`` itself is preserved.
    """
    n = y.size

    def factor(jitter=0.0):
        if work is not None:
            np.copyto(work, sigma)
            a = work
        else:
            a = sigma.copy()
        if jitter:
            a.flat[:: n + 1] += jitter
        return sla.cho_factor(a, lower=True, overwrite_a=True, check_finite=False)

    try:
        chol = factor()
    except np.linalg.LinAlgError:
        try:
            chol = factor(jitter=1e-8 * float(np.mean(np.diag(sigma))))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance factorization failed after jitter retry") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    if fixed_mu is None:
        rhs = np.column_stack([y, np.ones(n)])
        sol = sla.cho_solve(chol, rhs, check_finite=False)
        siy, si1 = sol[:, 0], sol[:, 1]
        mu = float(np.dot(np.ones(n), siy) / np.dot(np.ones(n), si1))
        alpha = siy - mu * si1
    else:
        mu = float(fixed_mu)
        alpha = sla.cho_solve(chol, y - mu, check_finite=False)
    quad = float(np.dot(y - mu, alpha))
    return -0.5 * logdet - 0.5 * quad, mu, chol, alpha


def profile_mu(sigma, y) -> float:
    """GLS mean 1'Sigma^{-1}y / 1'Sigma^{-1}1 (ordinary mean for Sigma = s I)."""
    _, mu, _, _ = _chol_loglik(np.asarray(sigma, dtype=float), np.asarray(y, dtype=float))
    return mu


# ---------------------------------------------------------------------------
# additive-model fitting


@dataclass
class AdditiveFit:
    """A fitted additive kernel model, with caches for downstream use."""

    y: np.ndarray
    terms: list
    variances: dict
    hypers: dict
    mu: float
    loglik: float
    kernels: dict
    chol: tuple
    alpha: np.ndarray
    var_floor: float
    n_evals: int = 0
    start_logliks: tuple = ()

    @property
    def n(self) -> int:
        return self.y.size

    def component_mean(self, name) -> np.ndarray:
        """Conditional mean (eBLUP per observation) of one component."""
        if name not in self.kernels:
            return np.zeros(self.n)
        return self.variances[name] * (self.kernels[name] @ self.alpha)

    def sigma_inv_times(self, m) -> np.ndarray:
        return sla.cho_solve(self.chol, m, check_finite=False)


class _Objective:
    """Negative profile log-likelihood over the transformed vector.

    All n x n scratch space is preallocated; one evaluation performs no
    large allocations, which matters because the simplex search makes
    hundreds of them.
    """

    def __init__(self, y, terms, var_scale):
        self.y = y
        self.terms = terms
        self.n = y.size
        self.j = len(terms)
        self.lo = math.log(1e-12 * var_scale)
        self.hi = math.log(1e12 * var_scale)
        hyper0 = [h for t in terms for h in t.hyper_init()]
        self.x0 = np.array([math.log(var_scale / (self.j + 1))] * (self.j + 1) + hyper0)
        self.n_hyper = [len(t.hyper_init()) for t in terms]
        self.n_evals = 0
        self._sig = np.empty((self.n, self.n))
        self._mix = np.empty((self.n, self.n))
        self._work = np.empty((self.n, self.n))

    def clip(self, x):
        x = np.asarray(x, dtype=float).copy()
        x[: self.j + 1] = np.clip(x[: self.j + 1], self.lo, self.hi)
        base = self.x0[self.j + 1 :]
        x[self.j + 1 :] = np.clip(x[self.j + 1 :], base - 35.0, base + 35.0)
        return x

    def split(self, x):
        x = self.clip(x)
        variances = np.exp(x[: self.j + 1])
        hypers, k = [], self.j + 1
        for nh in self.n_hyper:
            hypers.append(tuple(x[k : k + nh]))
            k += nh
        return variances, hypers

    def sigma_into(self, x, out):
        variances, hypers = self.split(x)
        np.multiply(self.terms[0].kernel(hypers[0]), variances[0], out=out)
        for t, v, h in zip(self.terms[1:], variances[1:-1], hypers[1:]):
            np.multiply(t.kernel(h), v, out=self._mix)
            out += self._mix
        out.flat[:: self.n + 1] += variances[self.j]
        return out

    def sigma(self, x):
        return self.sigma_into(x, np.empty((self.n, self.n)))

    def __call__(self, x):
        self.n_evals += 1
        try:
            self.sigma_into(x, self._sig)
            ll, _, _, _ = _chol_loglik(self._sig, self.y, work=self._work)
        except NumericalError:
            return 1e13 + float(np.sum((np.asarray(x) - self.x0) ** 2))
        if not np.isfinite(ll):
            return 1e13
        return -ll

    def evaluate(self, x, fixed_mu=None):
        """Full evaluation at a parameter vector (kernels, factor, mean).

        Kernel buffers are copied here since the result outlives the
        optimizer scratch space.
        """
        variances, hypers = self.split(x)
        kernels = {t.name: t.kernel(h).copy() for t, h in zip(self.terms, hypers)}
        s = variances[self.j] * np.eye(self.n)
        for t, v in zip(self.terms, variances[:-1]):
            s += v * kernels[t.name]
        ll, mu, chol, alpha = _chol_loglik(s, self.y, fixed_mu=fixed_mu)
        vdict = {t.name: float(v) for t, v in zip(self.terms, variances[:-1])}
        vdict["eps"] = float(variances[self.j])
        hdict = {t.name: h for t, h in zip(self.terms, hypers) if h}
        return vdict, hdict, mu, ll, kernels, chol, alpha


def fit_additive(
    y,
    terms,
    *,
    starts: int = 5,
    max_evals: int = 2000,
    tol: float = 1e-6,
    seed: int = 0,
    jitter_scale: float = 0.75,
    simplex_step: float = 0.8,
    init=None,
) -> AdditiveFit:
    """Maximize the profile log-likelihood of an additive kernel model.

    Variances are searched on the log scale (floored at 1e-12 times the
    phenotypic variance so boundary solutions stay finite), kernel
    hyperparameters in their own transformed coordinates. Multi-start
    points are jittered around moment-based initial values, or around
    ``init`` (a transformed-coordinate vector) when supplied; the
    returned optimum dominates every start. Deterministic for a given
    seed.
    """
    y = np.asarray(y, dtype=float)
    if not terms:
        raise ValueError("need at least one covariance term")
    vs = float(np.var(y))
    if vs <= 0:
        vs = 1.0
    obj = _Objective(y, terms, vs)
    rng = np.random.default_rng(seed)
    dim = obj.x0.size
    base = obj.x0 if init is None else obj.clip(np.asarray(init, dtype=float))
    if base.size != dim:
        raise ValueError("init vector length does not match the parameter count")

    best_x, best_val = None, np.inf
    start_lls = []
    # single-threaded BLAS: the eval loop interleaves many small kernels
    # and factorizations, where thread handoff costs dominate
    with threadpool_limits(limits=1, user_api="blas"):
        for s in range(max(1, starts)):
            x0 = base.copy()
            if s > 0:
                x0 = obj.clip(x0 + rng.normal(scale=jitter_scale, size=dim))
            f0 = obj(x0)
            start_lls.append(-f0)
            simplex = np.vstack([x0] + [x0 + simplex_step * np.eye(dim)[i] for i in range(dim)])
            res = minimize(
                obj,
                x0,
                method="Nelder-Mead",
                options=dict(
                    initial_simplex=simplex,
                    xatol=tol,
                    fatol=1e-8,
                    maxfev=max_evals,
                    adaptive=True,
                ),
            )
            val = min(res.fun, f0)
            x = res.x if res.fun <= f0 else x0
            if val < best_val:
                best_val, best_x = val, x
    if best_x is None or best_val >= 1e13:
        raise NumericalError("all optimizer starts failed to produce a finite likelihood")

    variances, hypers, mu, ll, kernels, chol, alpha = obj.evaluate(best_x)
    return AdditiveFit(
        y=y,
        terms=list(terms),
        variances=variances,
        hypers=hypers,
        mu=mu,
        loglik=ll,
        kernels=kernels,
        chol=chol,
        alpha=alpha,
        var_floor=1e-12 * vs,
        n_evals=obj.n_evals,
        start_logliks=tuple(start_lls),
    )


def evaluate_additive(
    y, terms, variances: dict, hypers: dict | None = None, mu: float | None = None
) -> AdditiveFit:
    """Evaluate an additive model at explicit parameter values (no search).

    Unlike the optimizer path this applies no variance floor, so exact
    zeros stay exact. The mean is profiled unless given explicitly.
    """
    y = np.asarray(y, dtype=float)
    vs = float(np.var(y)) or 1.0
    n = y.size
    kernels, hd = {}, {}
    sigma = float(variances["eps"]) * np.eye(n)
    for t in terms:
        h = tuple((hypers or {}).get(t.name, t.hyper_init()))
        kernels[t.name] = t.kernel(h).copy()
        if h:
            hd[t.name] = h
        sigma += float(variances[t.name]) * kernels[t.name]
    ll, mu_hat, chol, alpha = _chol_loglik(sigma, y, fixed_mu=mu)
    vd = {t.name: float(variances[t.name]) for t in terms}
    vd["eps"] = float(variances["eps"])
    return AdditiveFit(
        y=y,
        terms=list(terms),
        variances=vd,
        hypers=hd,
        mu=mu_hat,
        loglik=ll,
        kernels=kernels,
        chol=chol,
        alpha=alpha,
        var_floor=1e-12 * vs,
    )


# ---------------------------------------------------------------------------
# the GRF model proper


@dataclass(frozen=True)
class ModelConfig:
    """Which components enter the field, plus optimizer settings."""

    components: tuple[str, ...] = COMPONENTS
    beta00: float = 0.001
    starts: int = 5
    max_evals: int = 2000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps or "genotype" not in comps:
            raise ValueError("the genotype component is always required")
        unknown = [c for c in comps if c not in COMPONENTS]
        if unknown:
            raise ValueError(f"unknown components {unknown}; valid: {COMPONENTS}")
        object.__setattr__(self, "components", comps)

    def replace(self, **kw) -> "ModelConfig":
        d = dict(
            components=self.components,
            beta00=self.beta00,
            starts=self.starts,
            max_evals=self.max_evals,
            tol=self.tol,
            seed=self.seed,
        )
        d.update(kw)
        return ModelConfig(**d)


@dataclass
class GrfParams:
    """Standard-deviation-scale parameters of the full field."""

    sigma_g: float
    sigma_b: float
    sigma_s: float
    sigma_eps: float
    tau: float
    theta: float
    mu: float

    def __post_init__(self):
        if self.sigma_eps <= 0:
            raise ValueError("sigma_eps must be > 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        for name in ("sigma_g", "sigma_b", "sigma_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "sigma_g": self.sigma_g,
            "sigma_b": self.sigma_b,
            "sigma_s": self.sigma_s,
            "sigma_eps": self.sigma_eps,
            "tau": self.tau,
            "theta": self.theta,
            "mu": self.mu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GrfParams":
        return cls(**{k: float(d[k]) for k in
                      ("sigma_g", "sigma_b", "sigma_s", "sigma_eps", "tau", "theta", "mu")})


@dataclass
class FitResult:
    """Maximum-likelihood fit of the field, with cached factorizations."""

    params: GrfParams
    loglik: float
    gamma_hat: float
    config: ModelConfig
    afit: AdditiveFit

    @property
    def n(self) -> int:
        return self.afit.n

    @property
    def kernels(self) -> dict:
        return self.afit.kernels

    @property
    def sigma_chol(self):
        return self.afit.chol

    def to_json_dict(self) -> dict:
        spec_betas = {}
        if "spatial" in self.afit.kernels:
            half = 0.5 * (1.0 - self.config.beta00)
            spec_betas = {
                "beta01": self.params.theta * half,
                "beta10": (1.0 - self.params.theta) * half,
            }
        return {
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "gamma_hat": self.gamma_hat,
            "beta00": self.config.beta00,
            "components": [t.name for t in self.afit.terms],
            "config": {
                "components": list(self.config.components),
                "beta00": self.config.beta00,
                "starts": self.config.starts,
                "max_evals": self.config.max_evals,
                "tol": self.config.tol,
                "seed": self.config.seed,
            },
            **spec_betas,
        }


@dataclass
class ConditionalMoments:
    """Per-component conditional means and variances given the phenotypes."""

    mean_g: np.ndarray
    mean_b: np.ndarray
    mean_s: np.ndarray
    var_g: np.ndarray
    var_b: np.ndarray
    var_s: np.ndarray


def build_terms(data: Dataset, config: ModelConfig) -> list:
    """Realize the configured components as covariance terms for a dataset."""
    terms: list[Term] = [MarkerTerm(data.genotypes.values)]
    if "subpop" in config.components:
        if data.subpop is None:
            warnings.warn("no subpopulation labels: dropping the subpop component", stacklevel=2)
        elif len(set(data.subpop)) < 2:
            warnings.warn(
                "single subpopulation: dropping the subpop component", stacklevel=2
            )
        else:
            terms.append(SubpopTerm(data.subpop))
    if "spatial" in config.components:
        if data.layout is None:
            raise ValueError("spatial component requested but the dataset has no field layout")
        builder = LatticeKernelBuilder(data.layout.m1, data.layout.m2, config.beta00)
        terms.append(SpatialTerm(builder, data.layout.rows, data.layout.cols))
    return terms


def assemble_sigma(params: GrfParams, kernels: dict, config: ModelConfig) -> np.ndarray:
    """Sigma = sg^2 Cg + sb^2 Cb + ss^2 Cs + se^2 I over the active components."""
    mats = {k: (v.values if hasattr(v, "values") else np.asarray(v, dtype=float))
            for k, v in kernels.items()}
    if "genotype" not in mats:
        raise ValueError("genotype kernel missing")
    n = mats["genotype"].shape[0]
    sigma = params.sigma_eps**2 * np.eye(n) + params.sigma_g**2 * mats["genotype"]
    for name, scale in (("subpop", params.sigma_b), ("spatial", params.sigma_s)):
        if name in config.components and name in mats:
            if mats[name].shape[0] != n:
                raise ValueError(f"kernel {name!r} dimension mismatch")
            sigma += scale**2 * mats[name]
    return sigma


def _params_to_variances(params: GrfParams, terms) -> tuple[dict, dict]:
    variances = {"eps": params.sigma_eps**2}
    hypers = {}
    for t in terms:
        if t.name == "genotype":
            variances[t.name] = params.sigma_g**2
            hypers[t.name] = (math.log(params.tau),)
        elif t.name == "subpop":
            variances[t.name] = params.sigma_b**2
        elif t.name == "spatial":
            variances[t.name] = params.sigma_s**2
            hypers[t.name] = (np.clip(_logit(params.theta), -35.0, 35.0),)
    return variances, hypers


def profile_loglik(params: GrfParams, data: Dataset, config: ModelConfig) -> float:
    """Profile log-likelihood of the configured field at explicit parameters."""
    terms = build_terms(data, config)
    variances, hypers = _params_to_variances(params, terms)
    return evaluate_additive(data.y, terms, variances, hypers).loglik


def _wrap_fit(afit: AdditiveFit, config: ModelConfig) -> FitResult:
    v = afit.variances
    h = afit.hypers
    tau = math.exp(h["genotype"][0]) if "genotype" in h else 1.0
    theta = float(_sigmoid(np.clip(h["spatial"][0], -35.0, 35.0))) if "spatial" in h else 0.5
    params = GrfParams(
        sigma_g=math.sqrt(v.get("genotype", 0.0)),
        sigma_b=math.sqrt(v.get("subpop", 0.0)),
        sigma_s=math.sqrt(v.get("spatial", 0.0)),
        sigma_eps=math.sqrt(v["eps"]),
        tau=tau,
        theta=theta,
        mu=afit.mu,
    )
    if "spatial" in v and v["spatial"] > afit.var_floor * (1.0 + 1e-9):
        gamma = v["spatial"] / v["genotype"] if v["genotype"] > 0 else math.inf
    else:
        gamma = 0.0
    return FitResult(params=params, loglik=afit.loglik, gamma_hat=gamma, config=config, afit=afit)


def _init_vector(params: GrfParams, terms) -> np.ndarray:
    variances, hypers = _params_to_variances(params, terms)
    x = [math.log(max(variances[t.name], 1e-300)) for t in terms]
    x.append(math.log(variances["eps"]))
    for t in terms:
        x.extend(hypers.get(t.name, t.hyper_init()))
    return np.array(x)


def fit(data: Dataset, config: ModelConfig | None = None,
        init_params: GrfParams | None = None) -> FitResult:
    """Maximum-likelihood fit of the configured field to a dataset.

    ``init_params`` optionally replaces the moment-based starting point
    (warm starting).
    """
    config = config or ModelConfig()
    terms = build_terms(data, config)
    afit = fit_additive(
        data.y,
        terms,
        starts=config.starts,
        max_evals=config.max_evals,
        tol=config.tol,
        seed=config.seed,
        init=None if init_params is None else _init_vector(init_params, terms),
    )
    return _wrap_fit(afit, config)


def fit_result_at(data: Dataset, params: GrfParams, config: ModelConfig | None = None) -> FitResult:
    """Build a FitResult at explicit parameters without any optimization.

    Used to rehydrate a serialized fit and to drive simulations from a
    chosen parameter set.
    """
    config = config or ModelConfig()
    terms = build_terms(data, config)
    variances, hypers = _params_to_variances(params, terms)
    afit = evaluate_additive(data.y, terms, variances, hypers, mu=params.mu)
    return _wrap_fit(afit, config)


def conditional_moments(
    fit_result: FitResult, y=None, diagonals_only: bool = False
) -> ConditionalMoments:
    """Conditional means and variances of the latent components given y.

    Components absent from the model contribute exact zeros. With
    ``diagonals_only`` the variance fields hold just the n-vector of
    conditional variances.
    """
    afit = fit_result.afit
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != afit.y.shape:
            raise ValueError("phenotype vector length mismatch")
        chol = afit.chol
        alpha = sla.cho_solve(chol, y - afit.mu, check_finite=False)
    else:
        chol, alpha = afit.chol, afit.alpha
    n = afit.n
    out_mean, out_var = {}, {}
    for name in COMPONENTS:
        if name in afit.kernels:
            vk = afit.variances[name] * afit.kernels[name]
            sinv_vk = sla.cho_solve(chol, vk, check_finite=False)
            out_mean[name] = vk @ alpha
            var = vk - vk @ sinv_vk
            var = 0.5 * (var + var.T)
            out_var[name] = np.diag(var).copy() if diagonals_only else var
        else:
            out_mean[name] = np.zeros(n)
            out_var[name] = np.zeros(n) if diagonals_only else np.zeros((n, n))
    return ConditionalMoments(
        mean_g=out_mean["genotype"],
        mean_b=out_mean["subpop"],
        mean_s=out_mean["spatial"],
        var_g=out_var["genotype"],
        var_b=out_var["subpop"],
        var_s=out_var["spatial"],
    )


def _sigma_of(afit: AdditiveFit) -> np.ndarray:
    s = afit.variances["eps"] * np.eye(afit.n)
    for name, k in afit.kernels.items():
        s += afit.variances[name] * k
    return s


def joint_conditional(fit_result: FitResult, y=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the stacked latent components given y.

    The stacked vector is (Z_genotype, Z_subpop, Z_spatial) over the
    model's components in that fixed order; absent components are
    represented by zero blocks so the result is always 3n-dimensional.
    """
    afit = fit_result.afit
    n = afit.n
    if y is not None:
        y = np.asarray(y, dtype=float)
        chol = afit.chol
        alpha = sla.cho_solve(chol, y - afit.mu, check_finite=False)
    else:
        chol, alpha = afit.chol, afit.alpha
    blocks = []
    for name in COMPONENTS:
        if name in afit.kernels:
            blocks.append(afit.variances[name] * afit.kernels[name])
        else:
            blocks.append(np.zeros((n, n)))
    mean = np.concatenate([b @ alpha for b in blocks])
    b_stack = np.vstack(blocks)  # 3n x n
    sinv_bt = sla.cho_solve(chol, b_stack.T, check_finite=False)  # n x 3n
    cov = sla.block_diag(*blocks) - b_stack @ sinv_bt
    return mean, 0.5 * (cov + cov.T)


def predict(fit_result: FitResult, train: Dataset, query: QueryPoints, target: str = "phenotype"):
    """Conditional-mean prediction at out-of-sample points.

    ``phenotype`` sums the cross-covariances of all active components;
    ``genetic_value`` restricts to genotype + subpopulation, so spatial
    placement of the query points is ignored.
    """
    if target not in ("phenotype", "genetic_value"):
        raise ValueError("target must be 'phenotype' or 'genetic_value'")
    afit = fit_result.afit
    if train is not None and train.n != afit.n:
        raise ValueError("training dataset does not match the fitted model size")
    terms = afit.terms
    sel = [t for t in terms if target == "phenotype" or t.in_genetic_target]
    cstar = None
    for t in sel:
        h = afit.hypers.get(t.name, ())
        block = afit.variances[t.name] * t.cross(h, query)
        cstar = block if cstar is None else cstar + block
    if cstar is None:
        raise ValueError("no active components support the requested target")
    return fit_result.params.mu + cstar @ afit.alpha
