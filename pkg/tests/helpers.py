"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from grfpred.data import Dataset, FieldLayout, GenotypeMatrix, pairwise_sq_dists
from grfpred.engine import GrfParams, ModelConfig, fit_result_at


def make_dataset(n, p, m1, m2, n_sub=3, seed=0, with_subpop=True, with_layout=True, y=None):
    """Random dataset on a row-major filled lattice prefix."""
    if with_layout and n > m1 * m2:
        raise ValueError("lattice too small")
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n, p)).astype(float)
    geno = GenotypeMatrix(
        x, tuple(f"L{i:03d}" for i in range(n)), tuple(f"M{j:03d}" for j in range(p))
    )
    layout = None
    if with_layout:
        rows = (np.arange(n) // m2) + 1
        cols = (np.arange(n) % m2) + 1
        layout = FieldLayout(m1, m2, rows, cols)
    subpop = tuple(f"S{i % n_sub}" for i in range(n)) if with_subpop else None
    if y is None:
        y = rng.normal(size=n)
    return Dataset(
        y=np.asarray(y, dtype=float),
        genotypes=geno,
        subpop=subpop,
        layout=layout,
        genotype_group=tuple(f"L{i:03d}" for i in range(n)),
    )


def median_tau(x) -> float:
    d = pairwise_sq_dists(np.asarray(x, dtype=float))
    off = d[~np.eye(d.shape[0], dtype=bool)]
    return float(np.median(off))


def grf_synth(n, p, m1, m2, *, sigma_g=1.0, sigma_b=0.0, sigma_s=0.0, sigma_eps=0.5,
              theta=0.5, n_sub=3, seed=0, beta00=0.001):
    """Dataset whose phenotypes are drawn from the additive field model.

    Returns (dataset, generating GrfParams, generating FitResult).
    """
    base = make_dataset(n, p, m1, m2, n_sub=n_sub, seed=seed,
                        with_subpop=sigma_b > 0, with_layout=True)
    params = GrfParams(
        sigma_g=sigma_g,
        sigma_b=sigma_b,
        sigma_s=sigma_s,
        sigma_eps=sigma_eps,
        tau=median_tau(base.genotypes.values),
        theta=theta,
        mu=0.0,
    )
    comps = ["genotype"]
    if sigma_b > 0:
        comps.append("subpop")
    comps.append("spatial")
    cfg = ModelConfig(components=tuple(comps), beta00=beta00)
    fr = fit_result_at(base, params, cfg)
    sigma = params.sigma_eps**2 * np.eye(n)
    for name, scale in (("genotype", sigma_g), ("subpop", sigma_b), ("spatial", sigma_s)):
        if name in fr.kernels:
            sigma += scale**2 * fr.kernels[name]
    rng = np.random.default_rng([seed, 999])
    y = params.mu + np.linalg.cholesky(sigma) @ rng.standard_normal(n)
    data = Dataset(
        y=y,
        genotypes=base.genotypes,
        subpop=base.subpop,
        layout=base.layout,
        genotype_group=base.genotype_group,
    )
    return data, params, fit_result_at(data, params, cfg)


def grf_synth_replicated(n, p, m1, m2, *, n_lines, gamma, sigma_eps, beta00, seed):
    """Genotype + spatial synthetic field with replicated lines.

    ``n_lines`` distinct genotypes are tiled over n plots in randomized
    placement; phenotypes are drawn from the additive model with spatial
    variance ``gamma`` (genotypic variance 1).
    """
    rng = np.random.default_rng(seed)
    xl = rng.integers(0, 2, size=(n_lines, p)).astype(float)
    assign = rng.permutation(np.tile(np.arange(n_lines), n // n_lines + 1)[:n])
    x = xl[assign]
    geno = GenotypeMatrix(x, tuple(f"L{a}" for a in assign),
                          tuple(f"M{j}" for j in range(p)))
    rows = (np.arange(n) // m2) + 1
    cols = (np.arange(n) % m2) + 1
    layout = FieldLayout(m1, m2, rows, cols)
    ds0 = Dataset(y=np.zeros(n), genotypes=geno, subpop=None, layout=layout,
                  genotype_group=tuple(f"L{a}" for a in assign))
    d = pairwise_sq_dists(x)
    off = d[~np.eye(n, dtype=bool)]
    tau = float(np.median(off[off > 0]))
    params = GrfParams(
        sigma_g=1.0, sigma_b=0.0,
        sigma_s=float(np.sqrt(gamma)) if gamma > 0 else 0.0,
        sigma_eps=sigma_eps, tau=tau, theta=0.55, mu=0.0,
    )
    cfg = ModelConfig(components=("genotype", "spatial"), beta00=beta00)
    fr = fit_result_at(ds0, params, cfg)
    sigma = (fr.kernels["genotype"]
             + gamma * fr.kernels["spatial"]
             + sigma_eps**2 * np.eye(n))
    y = np.linalg.cholesky(sigma) @ np.random.default_rng([seed, 5]).standard_normal(n)
    return Dataset(y=y, genotypes=geno, subpop=None, layout=layout,
                   genotype_group=ds0.genotype_group), params


def henderson_mme(y, z_list, g_list, ve):
    """Mixed-model equations for y = mu 1 + sum_j Z_j u_j + e.

    ``z_list`` holds n x q_j incidence/design matrices and ``g_list`` the
    q_j x q_j covariance of each random effect. Returns (mu_hat, blups)
    with blups in the same per-effect shapes. Independent of the
    engine's covariance-side algebra.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    x = np.ones((n, 1))
    preds = [x] + [np.asarray(z, dtype=float) for z in z_list]
    g_invs = [None] + [np.linalg.inv(np.asarray(g, dtype=float)) for g in g_list]
    blocks = []
    for i, a in enumerate(preds):
        row = []
        for j, b in enumerate(preds):
            el = a.T @ b / ve
            if i == j and g_invs[i] is not None:
                el = el + g_invs[i]
            row.append(el)
        blocks.append(row)
    lhs = np.block(blocks)
    rhs = np.concatenate([a.T @ y / ve for a in preds])
    sol = np.linalg.solve(lhs, rhs)
    mu = float(sol[0])
    out, k = [], 1
    for z in z_list:
        q = z.shape[1]
        out.append(sol[k : k + q])
        k += q
    return mu, out


def indicator_design(labels):
    """n x L incidence matrix and the level ordering."""
    labels = list(labels)
    levels = sorted(set(labels))
    z = np.zeros((len(labels), len(levels)))
    for i, lab in enumerate(labels):
        z[i, levels.index(lab)] = 1.0
    return z, levels


def condition_mvn(mean, cov, obs_idx, obs_values):
    """Exact Gaussian conditioning of the complementary block."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    all_idx = np.arange(mean.size)
    rest = np.setdiff1d(all_idx, obs_idx)
    a = cov[np.ix_(rest, rest)]
    b = cov[np.ix_(rest, obs_idx)]
    c = cov[np.ix_(obs_idx, obs_idx)]
    sol = np.linalg.solve(c, np.asarray(obs_values, dtype=float) - mean[obs_idx])
    cond_mean = mean[rest] + b @ sol
    cond_cov = a - b @ np.linalg.solve(c, b.T)
    return cond_mean, cond_cov


def dense_one_kernel_loglik(y, K, vu, ve, criterion):
    """Explicit-inverse REML/ML log-likelihood of y = mu 1 + u + e."""
    y = np.asarray(y, dtype=float)
    n = y.size
    v = vu * np.asarray(K, dtype=float) + ve * np.eye(n)
    vinv = np.linalg.inv(v)
    one = np.ones(n)
    mu = (one @ vinv @ y) / (one @ vinv @ one)
    r = y - mu
    quad = r @ vinv @ r
    logdet = np.linalg.slogdet(v)[1]
    if criterion.upper() == "ML":
        return -0.5 * (n * np.log(2 * np.pi) + logdet + quad)
    return -0.5 * (
        (n - 1) * np.log(2 * np.pi) + logdet + np.log(one @ vinv @ one) + quad
    )
