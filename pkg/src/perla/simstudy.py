"""Synthetic spatial-cluster data and the two simulation experiments.

Stick fields are drawn from a DAGAR model over a fixed area ordering and
shifted so that clusters come out roughly balanced; outcomes are Gaussian
around the cluster intercepts.  Scenarios carry no covariates.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .errors import ValidationError
from .ingest import Dataset
from .post import ecr_relabel, point_partition, rand_index
from .sampler import fit
from .spatial import dagar_simulate
from .stickbreak import psi_to_probs

__all__ = [
    "SyntheticTruth",
    "simulate_map",
    "scenario_sim1",
    "scenario_sim2",
    "kmeans_baseline",
    "evaluate",
    "nearest_correlation",
    "fit_and_evaluate",
]

log = logging.getLogger(__name__)

SIM2_RHO = (0.01, 0.455, 0.9)


@dataclass
class SyntheticTruth:
    """Generating values of one replicate.  ``z`` holds 0-based labels."""

    z: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    informative: np.ndarray = None
    psi: np.ndarray = field(default=None, repr=False)

    @property
    def K(self):
        return self.mu.shape[0]

    @property
    def d(self):
        return self.mu.shape[1]


def simulate_map(g, ordering, K, rho_true, mu_true, sigma_true, seed):
    """Draw allocations from shifted DAGAR stick fields, then Gaussian outcomes.

    Stick k (1-based) is shifted by -log(K - k) before the stick-breaking
    transform, so with independent fields every cluster has prior share
    close to 1/K.
    """
    rng = np.random.default_rng(seed)
    mu_true = np.asarray(mu_true, dtype=np.float64)
    sigma_true = np.asarray(sigma_true, dtype=np.float64)
    rho_true = np.asarray(rho_true, dtype=np.float64)
    if mu_true.shape[0] != K or rho_true.shape != (K - 1,):
        raise ValidationError("mu_true must have K rows and rho_true K - 1 entries")
    d = mu_true.shape[1]
    if sigma_true.shape != (d, d):
        raise ValidationError("sigma_true must be d x d")
    low = np.linalg.cholesky(sigma_true)
    psi = np.empty((g.n, K - 1))
    for k in range(K - 1):
        psi[:, k] = dagar_simulate(g, ordering, rho_true[k], rng) - math.log(K - 1 - k)
    probs = psi_to_probs(psi)
    u = rng.random(g.n)
    z = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), K - 1)
    y = mu_true[z] + rng.standard_normal((g.n, d)) @ low.T
    data = Dataset(Y=y, graph=g)
    return data, SyntheticTruth(z=z.astype(np.int64), mu=mu_true, sigma=sigma_true, rho=rho_true, psi=psi)


def nearest_correlation(c, tol=1e-10, max_iter=200, min_eig=1e-8):
    """Nearest positive-definite correlation matrix by alternating projections.

    Returns ``c`` unchanged when it is already positive definite.
    """
    c = np.array(c, dtype=np.float64)
    if np.linalg.eigvalsh(c).min() > min_eig:
        return c
    y = c.copy()
    ds = np.zeros_like(c)
    for _ in range(max_iter):
        r = y - ds
        w, v = np.linalg.eigh(r)
        x = (v * np.maximum(w, min_eig)) @ v.T
        ds = x - r
        y_new = x.copy()
        np.fill_diagonal(y_new, 1.0)
        if np.linalg.norm(y_new - y) < tol:
            y = y_new
            break
        y = y_new
    return y


def _random_correlation(d, half_width, rng):
    c = np.eye(d)
    iu = np.triu_indices(d, 1)
    c[iu] = rng.uniform(-half_width, half_width, size=iu[0].size)
    c.T[iu] = c[iu]
    fixed = nearest_correlation(c)
    if fixed is not c and not np.array_equal(fixed, c):
        log.info("correlation draw projected to PD; max change %.3g", np.abs(fixed - c).max())
    return fixed


def _ordering(g, ordering):
    return np.arange(g.n) if ordering is None else np.asarray(ordering)


def scenario_sim1(g, seed, ordering=None, d=10):
    """Sparse-signal scenario: K = 3, rho_k ~ U(0.8, 1), half the outcomes null.

    Outcome j is informative with probability 0.5; informative intercepts
    are U(-0.5, 0.5) and null ones exactly 0.  Sigma is 0.05 times a
    correlation matrix with U(-0.1, 0.1) off-diagonal entries.
    """
    K = 3
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.8, 1.0, size=K - 1)
    informative = rng.random(d) < 0.5
    mu = rng.uniform(-0.5, 0.5, size=(K, d)) * informative[None, :]
    sigma = 0.05 * _random_correlation(d, 0.1, rng)
    sub_seed = int(rng.integers(2**63 - 1))
    data, truth = simulate_map(g, _ordering(g, ordering), K, rho, mu, sigma, sub_seed)
    truth.informative = informative
    return data, truth


def scenario_sim2(g, seed, ordering=None):
    """Mixed-dependence scenario: K = 4, d = 3, rho = (0.01, 0.455, 0.9).

    Intercepts are U(-1, 1); Sigma is 0.07 times a correlation matrix with
    U(-0.2, 0.2) off-diagonal entries.
    """
    K, d = 4, 3
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-1.0, 1.0, size=(K, d))
    sigma = 0.07 * _random_correlation(d, 0.2, rng)
    sub_seed = int(rng.integers(2**63 - 1))
    return simulate_map(g, _ordering(g, ordering), K, np.array(SIM2_RHO), mu, sigma, sub_seed)


def kmeans_baseline(y, K, seed):
    """Lloyd's k-means with 10 seeded restarts, best inertia kept."""
    y = np.asarray(y, dtype=np.float64)
    if K == 1:
        return np.zeros(y.shape[0], dtype=np.int64)
    if K > y.shape[0]:
        raise ValidationError("K exceeds the number of rows")
    km = KMeans(n_clusters=K, n_init=10, random_state=int(seed) % (2**32), algorithm="lloyd").fit(y)
    return km.labels_.astype(np.int64)


def evaluate(truth, z_est, y, fitted_means):
    """Clustering and fit metrics of one estimate against the truth.

    Returns a dict with ``rand`` (overall), ``rand_per_cluster`` (length
    K_true; true cluster k is compared with the estimated cluster that
    shares most areas with it) and ``mse`` (K_true x d mean squared error
    between ``y`` and ``fitted_means`` over the areas of each true cluster).
    """
    z_true = np.asarray(truth.z)
    z_est = np.asarray(z_est)
    y = np.asarray(y, dtype=np.float64)
    fitted = np.asarray(fitted_means, dtype=np.float64)
    K = truth.K
    est_labels = np.unique(z_est)
    per = np.full(K, np.nan)
    mse = np.full((K, y.shape[1]), np.nan)
    for k in range(K):
        members = z_true == k
        if not members.any():
            continue
        overlap = [(np.count_nonzero(members & (z_est == l)), -i) for i, l in enumerate(est_labels)]
        h = est_labels[-max(overlap)[1]]
        per[k] = rand_index(members, z_est == h)
        mse[k] = ((y[members] - fitted[members]) ** 2).mean(axis=0)
    return {"rand": rand_index(z_true, z_est), "rand_per_cluster": per, "mse": mse}


def fitted_area_means(draws, data):
    """Posterior mean of mu_{z_i} + x_i beta for every area (label-free)."""
    M = draws.n_draws
    m_idx = np.arange(M)[:, None]
    cluster_part = draws.mu[m_idx, draws.z].mean(axis=0)
    if data.p:
        cluster_part = cluster_part + np.einsum("il,mlj->ij", data.X, draws.beta) / M
    return cluster_part


def fit_and_evaluate(data, truth, cfg, threads=1):
    """Fit, relabel, and score one replicate.  Returns (draws, relabelled, metrics)."""
    from .post import dic3

    draws = fit(data, cfg, threads=threads)
    rel = ecr_relabel(draws)
    z_hat = point_partition(rel.draws.z, cfg.K)
    metrics = evaluate(truth, z_hat, data.Y, fitted_area_means(draws, data))
    metrics["dic3"] = dic3(draws)
    return draws, rel, metrics
