"""Post-processing of posterior draws.

Covers label-switching repair (ECR against a pivot allocation), modal and
HPD summaries, exceedance probabilities, DIC3 and clustering metrics.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import ValidationError

__all__ = [
    "RelabelledDraws",
    "ecr_relabel",
    "apply_permutations",
    "posterior_mode",
    "hpd_interval",
    "exceedance_prob",
    "exceedance_verdict",
    "dic3",
    "rand_index",
    "coclustering_matrix",
    "point_partition",
    "summary_tables",
]

EXCESS_THRESHOLD = 0.95
DEFICIT_THRESHOLD = 0.05


@dataclass
class RelabelledDraws:
    """Draws after relabelling plus the permutation applied to each draw.

    ``perms[m, old] = new``.  ``rho_by_label[m, new]`` is the propriety
    parameter of the stick that belonged to the cluster now called ``new``;
    the cluster that was last in the stick order has no stick and gets NaN.
    """

    draws: object
    perms: np.ndarray
    pivot: np.ndarray
    pivot_index: int
    rho_by_label: np.ndarray

    def restore(self):
        """Undo the relabelling; returns arrays equal to the raw draws."""
        inv = np.argsort(self.perms, axis=1)
        return apply_permutations(self.draws, inv)


def _permute_rows(arr, perms):
    # arr (M, K, ...) ; new[m, perms[m, k]] = arr[m, k]
    out = np.empty_like(arr)
    m_idx = np.arange(arr.shape[0])[:, None]
    out[m_idx, perms] = arr
    return out


def apply_permutations(draws, perms):
    """Relabel every draw: label ``k`` of draw ``m`` becomes ``perms[m, k]``.

    Allocations, intercept rows and the cluster-indexed shrinkage factors
    (delta, gamma) move together; log-likelihoods are left untouched.
    """
    perms = np.asarray(perms, dtype=np.int64)
    z = np.take_along_axis(perms, draws.z, axis=1)
    return replace(
        draws,
        z=z,
        mu=_permute_rows(draws.mu, perms),
        delta=_permute_rows(draws.delta, perms),
        gamma=_permute_rows(draws.gamma, perms),
    )


def _overlap_counts(z_row, pivot, K):
    c = np.zeros((K, K), dtype=np.int64)
    np.add.at(c, (z_row, pivot), 1)
    return c


def ecr_relabel(draws):
    """Equivalence-classes-representative relabelling.

    The pivot is the allocation of the draw with the largest log-likelihood
    (first one on ties).  Each draw's labels are permuted to maximise the
    number of areas agreeing with the pivot, solved exactly as an
    assignment problem.
    """
    K = draws.K
    M = draws.n_draws
    piv_idx = int(np.argmax(draws.loglik))
    pivot = draws.z[piv_idx].copy()
    perms = np.empty((M, K), dtype=np.int64)
    for m in range(M):
        c = _overlap_counts(draws.z[m], pivot, K)
        rows, cols = linear_sum_assignment(-c)
        perms[m, rows] = cols
    out = apply_permutations(draws, perms)
    rho_lab = np.full((M, K), np.nan)
    m_idx = np.arange(M)[:, None]
    rho_lab[m_idx, perms[:, : K - 1]] = draws.rho
    if draws.psi is not None:
        psi_lab = np.full(draws.psi.shape[:2] + (K,), np.nan)
        for m in range(M):
            psi_lab[m][:, perms[m, : K - 1]] = draws.psi[m]
        out = replace(out, psi=psi_lab)
    return RelabelledDraws(draws=out, perms=perms, pivot=pivot, pivot_index=piv_idx, rho_by_label=rho_lab)


def _silverman(x):
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** (-0.2)


def posterior_mode(draws, grid_size=512):
    """Mode of a Gaussian kernel density estimate (Silverman bandwidth).

    The density is evaluated on ``grid_size`` equally spaced points spanning
    the range of the draws; a constant sequence returns that constant.
    """
    x = np.asarray(draws, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("no draws")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo
    bw = _silverman(x)
    if not bw > 0:
        bw = (hi - lo) / grid_size
    grid = np.linspace(lo, hi, grid_size)
    dens = np.zeros(grid_size)
    for start in range(0, x.size, 4096):
        chunk = x[start : start + 4096]
        u = (grid[:, None] - chunk[None, :]) / bw
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    return float(grid[int(np.argmax(dens))])


def hpd_interval(draws, level=0.95):
    """Shortest interval holding ceil(level * M) of the sorted draws."""
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    x = np.sort(np.asarray(draws, dtype=np.float64).ravel())
    M = x.size
    if M == 0:
        raise ValidationError("no draws")
    m = min(M, max(1, math.ceil(level * M - 1e-9)))
    widths = x[m - 1 :] - x[: M - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])


def exceedance_prob(draws):
    """Posterior probability of a strictly positive value."""
    x = np.asarray(draws, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("no draws")
    return float(np.count_nonzero(x > 0) / x.size)


def exceedance_verdict(prob):
    if prob >= EXCESS_THRESHOLD:
        return "excess"
    if prob <= DEFICIT_THRESHOLD:
        return "deficit"
    return "neutral"


def dic3(log_mix_density):
    """DIC3 from per-draw, per-area log mixture densities (M x n).

    -4 mean_m sum_i log f(y_i | theta_m) + 2 sum_i log mean_m f(y_i | theta_m);
    accepts a :class:`~perla.sampler.PosteriorDraws` as well.
    """
    lf = getattr(log_mix_density, "log_mix_density", log_mix_density)
    lf = np.asarray(lf, dtype=np.float64)
    if lf.ndim != 2 or lf.shape[0] == 0:
        raise ValidationError("expected an (M, n) array of log densities")
    M = lf.shape[0]
    first = -4.0 * lf.sum(axis=1).mean()
    second = 2.0 * (logsumexp(lf, axis=0) - math.log(M)).sum()
    return float(first + second)


def _pairs(v):
    v = np.asarray(v, dtype=np.float64)
    return float((v * (v - 1) / 2).sum())


def rand_index(z_a, z_b):
    """Fraction of area pairs on which two partitions agree."""
    a = np.asarray(z_a).ravel()
    b = np.asarray(z_b).ravel()
    if a.shape != b.shape:
        raise ValidationError("partitions differ in length")
    n = a.size
    if n < 2:
        raise ValidationError("rand index needs at least two items")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    total = n * (n - 1) / 2
    both = _pairs(table)
    same_a = _pairs(table.sum(axis=1))
    same_b = _pairs(table.sum(axis=0))
    agree = total + 2 * both - same_a - same_b
    return float(agree / total)


def coclustering_matrix(z_draws):
    """Share of draws in which each pair of areas sits in the same cluster."""
    z = np.atleast_2d(np.asarray(z_draws, dtype=np.int64))
    M, n = z.shape
    out = np.zeros((n, n))
    for k in np.unique(z):
        a = (z == k).astype(np.float64)
        out += a.T @ a
    return out / M


def point_partition(z_draws, K=None):
    """Per-area modal label; ties go to the smaller label."""
    z = np.atleast_2d(np.asarray(z_draws, dtype=np.int64))
    K = int(z.max()) + 1 if K is None else K
    counts = np.zeros((z.shape[1], K), dtype=np.int64)
    for k in range(K):
        counts[:, k] = (z == k).sum(axis=0)
    return np.argmax(counts, axis=1)


def _block_rows(names, values, level, signed):
    rows = []
    for name, col in zip(names, values):
        col = col[np.isfinite(col)]
        if col.size == 0:
            rows.append(dict(param=name, mode=np.nan, hpd_low=np.nan, hpd_high=np.nan,
                             pr_exceed=np.nan, verdict="", mode_exp=np.nan))
            continue
        lo, hi = hpd_interval(col, level)
        row = dict(param=name, mode=posterior_mode(col), hpd_low=lo, hpd_high=hi)
        if signed:
            p = exceedance_prob(col)
            row.update(pr_exceed=p, verdict=exceedance_verdict(p), mode_exp=posterior_mode(np.exp(col)))
        else:
            row.update(pr_exceed=np.nan, verdict="", mode_exp=np.nan)
        rows.append(row)
    return pd.DataFrame(rows, columns=["param", "mode", "hpd_low", "hpd_high", "pr_exceed", "verdict", "mode_exp"])


def summary_tables(draws, level=0.95, rho_by_label=None):
    """One summary table per parameter block.

    Intercepts and coefficients get exceedance probabilities, verdicts and
    the mode on the exp scale; variance-type blocks leave those empty.
    """
    M, K, d = draws.mu.shape
    p = draws.beta.shape[1]
    tables = {}
    names = [f"mu_k{k + 1}_j{j + 1}" for k in range(K) for j in range(d)]
    tables["mu"] = _block_rows(names, draws.mu.reshape(M, -1).T, level, True)
    if p:
        names = [f"beta_l{l + 1}_j{j + 1}" for l in range(p) for j in range(d)]
        tables["beta"] = _block_rows(names, draws.beta.reshape(M, -1).T, level, True)
    iu = np.tril_indices(d)
    names = [f"sigma_{a + 1}_{b + 1}" for a, b in zip(*iu)]
    tables["sigma"] = _block_rows(names, draws.sigma[:, iu[0], iu[1]].T, level, False)
    if rho_by_label is not None:
        names = [f"rho_k{k + 1}" for k in range(K)]
        tables["rho"] = _block_rows(names, rho_by_label.T, level, False)
    else:
        names = [f"rho_s{k + 1}" for k in range(K - 1)]
        tables["rho"] = _block_rows(names, draws.rho.T, level, False)
    shrink_names = ["phi"] + [f"zeta_j{j + 1}" for j in range(d)] + [f"delta_k{k + 1}" for k in range(K)]
    shrink_names += [f"gamma_k{k + 1}_j{j + 1}" for k in range(K) for j in range(d)]
    shrink_vals = np.concatenate([draws.phi[:, None], draws.zeta, draws.delta, draws.gamma.reshape(M, -1)], axis=1)
    tables["shrinkage"] = _block_rows(shrink_names, shrink_vals.T, level, False)
    return tables
