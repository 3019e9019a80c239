"""Compiled Gibbs/Metropolis block updates and the chain loop.

Allocations are stored as 0-based integer labels ``z`` (length n) rather
than one-hot rows; area i is "at risk" on stick k (N_ik = 1) iff z[i] >= k.
All dense linear algebra is on d x d or (p d) x (p d) matrices and is done
with hand-written Cholesky routines to avoid per-call allocation overhead.
"""

import math

import numba
import numpy as np

from .pg import pg1_draw
from .priors import prior_var_kernel, rho_log_prior_kernel, shrinkage_kernel
from .spatial import logdet_from_eigs, quad_forms
from .stickbreak import log_stick_probs

_LOG_2PI = math.log(2.0 * math.pi)
_RHO_STEP = math.sqrt(3.0)


@numba.njit(cache=True)
def chol(a, out):
    """Lower Cholesky factor of ``a`` into ``out``; False if not PD."""
    m = a.shape[0]
    for i in range(m):
        for j in range(i + 1):
            s = a[i, j]
            for t in range(j):
                s -= out[i, t] * out[j, t]
            if i == j:
                if not s > 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, m):
            out[i, j] = 0.0
    return True


@numba.njit(cache=True)
def forward_solve(low, b, out):
    m = low.shape[0]
    for i in range(m):
        s = b[i]
        for t in range(i):
            s -= low[i, t] * out[t]
        out[i] = s / low[i, i]


@numba.njit(cache=True)
def backward_solve_t(low, b, out):
    """Solve low^T x = b."""
    m = low.shape[0]
    for i in range(m - 1, -1, -1):
        s = b[i]
        for t in range(i + 1, m):
            s -= low[t, i] * out[t]
        out[i] = s / low[i, i]


@numba.njit(cache=True)
def chol_inverse(low, out):
    """(L L^T)^{-1} from the factor L, column by column."""
    m = low.shape[0]
    e = np.zeros(m)
    tmp = np.empty(m)
    col = np.empty(m)
    for j in range(m):
        e[:] = 0.0
        e[j] = 1.0
        forward_solve(low, e, tmp)
        backward_solve_t(low, tmp, col)
        for i in range(m):
            out[i, j] = col[i]


@numba.njit(cache=True)
def draw_gaussian_canonical(q, b, rng, low, work, out):
    """Draw from N(Q^{-1} b, Q^{-1}) given precision ``q``; False if Q not PD."""
    m = q.shape[0]
    if not chol(q, low):
        return False
    forward_solve(low, b, work)
    for i in range(m):
        work[i] += rng.standard_normal()
    backward_solve_t(low, work, out)
    return True


@numba.njit(cache=True)
def fitted_offsets(x, beta, out):
    """out = X beta (n x d); zero when p = 0."""
    n = out.shape[0]
    d = out.shape[1]
    p = x.shape[1]
    for i in range(n):
        for j in range(d):
            s = 0.0
            for l in range(p):
                s += x[i, l] * beta[l, j]
            out[i, j] = s


@numba.njit(cache=True)
def update_omega_kernel(z, psi, omega, rng):
    n, km1 = psi.shape
    for k in range(km1):
        for i in range(n):
            if z[i] >= k:
                omega[i, k] = pg1_draw(psi[i, k], rng)
            else:
                omega[i, k] = 0.0


@numba.njit(cache=True)
def update_psi_kernel(z, psi, omega, indptr, indices, deg, rho, tau, rng):
    n, km1 = psi.shape
    for k in range(km1):
        rk = rho[k]
        for i in range(n):
            at_risk = 1.0 if z[i] >= k else 0.0
            kappa = (1.0 if z[i] == k else 0.0) - 0.5 * at_risk
            s = 0.0
            for t in range(indptr[i], indptr[i + 1]):
                s += psi[indices[t], k]
            var = tau / (tau * omega[i, k] + deg[i])
            mean = var * (kappa + rk / tau * s)
            psi[i, k] = mean + math.sqrt(var) * rng.standard_normal()


@numba.njit(cache=True)
def cluster_log_kernels(y, offsets, mu, sig_low, out):
    """out[i, k] = log N_d(y_i | mu_k + offset_i, Sigma) via the Cholesky factor."""
    n, d = y.shape
    K = mu.shape[0]
    logdet = 0.0
    for j in range(d):
        logdet += 2.0 * math.log(sig_low[j, j])
    const = -0.5 * (d * _LOG_2PI + logdet)
    r = np.empty(d)
    w = np.empty(d)
    for i in range(n):
        for k in range(K):
            for j in range(d):
                r[j] = y[i, j] - offsets[i, j] - mu[k, j]
            forward_solve(sig_low, r, w)
            q = 0.0
            for j in range(d):
                q += w[j] * w[j]
            out[i, k] = const - 0.5 * q


@numba.njit(cache=True)
def update_allocations_kernel(z, psi, logk, use_lik, rng):
    """Redraw every label from pi_ik * N(y_i | ...); ``logk`` from cluster_log_kernels."""
    n = z.shape[0]
    K = psi.shape[1] + 1
    lp = np.empty(K)
    for i in range(n):
        log_stick_probs(psi[i], lp)
        if use_lik:
            for k in range(K):
                lp[k] += logk[i, k]
        m = lp[0]
        for k in range(1, K):
            if lp[k] > m:
                m = lp[k]
        tot = 0.0
        for k in range(K):
            lp[k] = math.exp(lp[k] - m)
            tot += lp[k]
        u = rng.random() * tot
        acc = 0.0
        pick = K - 1
        for k in range(K):
            acc += lp[k]
            if u < acc:
                pick = k
                break
        z[i] = pick


@numba.njit(cache=True)
def update_mu_kernel(y, offsets, z, mu, sig_inv, prior_var, rng):
    n, d = y.shape
    K = mu.shape[0]
    q = np.empty((d, d))
    low = np.empty((d, d))
    r = np.empty(d)
    b = np.empty(d)
    work = np.empty(d)
    out = np.empty(d)
    for k in range(K):
        nk = 0
        r[:] = 0.0
        for i in range(n):
            if z[i] == k:
                nk += 1
                for j in range(d):
                    r[j] += y[i, j] - offsets[i, j]
        for a in range(d):
            s = 0.0
            for c in range(d):
                q[a, c] = nk * sig_inv[a, c]
                s += sig_inv[a, c] * r[c]
            q[a, a] += 1.0 / prior_var[k, a]
            b[a] = s
        if not draw_gaussian_canonical(q, b, rng, low, work, out):
            return False
        for j in range(d):
            mu[k, j] = out[j]
    return True


@numba.njit(cache=True)
def update_beta_kernel(y, x, xtx, z, mu, sig_inv, beta, prior_var, rng):
    """vec(beta) (column-major, beta[l, j] = v[j p + l]) from its Gaussian conditional."""
    n, d = y.shape
    p = x.shape[1]
    if p == 0:
        return True
    m = p * d
    q = np.empty((m, m))
    for j in range(d):
        for jj in range(d):
            for l in range(p):
                for ll in range(p):
                    q[j * p + l, jj * p + ll] = sig_inv[j, jj] * xtx[l, ll]
    for a in range(m):
        q[a, a] += 1.0 / prior_var
    # X^T R with R = Y - Z mu
    xtr = np.zeros((p, d))
    for i in range(n):
        k = z[i]
        for j in range(d):
            rij = y[i, j] - mu[k, j]
            for l in range(p):
                xtr[l, j] += x[i, l] * rij
    b = np.empty(m)
    for j in range(d):
        for l in range(p):
            s = 0.0
            for jj in range(d):
                s += xtr[l, jj] * sig_inv[jj, j]
            b[j * p + l] = s
    low = np.empty((m, m))
    work = np.empty(m)
    out = np.empty(m)
    if not draw_gaussian_canonical(q, b, rng, low, work, out):
        return False
    for j in range(d):
        for l in range(p):
            beta[l, j] = out[j * p + l]
    return True


@numba.njit(cache=True)
def inv_wishart_draw(scale, dof, rng, out):
    """Sigma ~ IW(dof, scale) by the Bartlett decomposition.

    With scale = U U^T and A lower triangular (A_ii^2 ~ chi2(dof - i),
    standard normal below the diagonal), Sigma = T T^T where T = U A^{-T}.
    """
    d = scale.shape[0]
    u = np.empty((d, d))
    if not chol(scale, u):
        return False
    a = np.zeros((d, d))
    for i in range(d):
        a[i, i] = math.sqrt(2.0 * rng.standard_gamma(0.5 * (dof - i)))
        for j in range(i):
            a[i, j] = rng.standard_normal()
    # T = U A^{-T}: solve T A^T = U row by row, i.e. A t_r = u_r for each row r.
    t = np.zeros((d, d))
    row = np.empty(d)
    sol = np.empty(d)
    for r in range(d):
        for c in range(d):
            row[c] = u[r, c]
        forward_solve(a, row, sol)
        for c in range(d):
            t[r, c] = sol[c]
    for i in range(d):
        for j in range(i + 1):
            s = 0.0
            for c in range(d):
                s += t[i, c] * t[j, c]
            out[i, j] = s
            out[j, i] = s
    return True


@numba.njit(cache=True)
def update_sigma_kernel(y, offsets, z, mu, sigma, prior_dof, prior_scale, rng):
    """Sigma ~ IW(prior_dof + n, prior_scale I + E^T E) with E the residual matrix."""
    n, d = y.shape
    s = np.zeros((d, d))
    for a in range(d):
        s[a, a] = prior_scale
    e = np.empty(d)
    for i in range(n):
        k = z[i]
        for j in range(d):
            e[j] = y[i, j] - offsets[i, j] - mu[k, j]
        for a in range(d):
            for c in range(a + 1):
                s[a, c] += e[a] * e[c]
    for a in range(d):
        for c in range(a):
            s[c, a] = s[a, c]
    return inv_wishart_draw(s, prior_dof + n, rng, sigma)


@numba.njit(cache=True)
def update_rho_kernel(psi, rho, indptr, indices, deg, log_deg_sum, eigs, tau, rng, accepted):
    km1 = psi.shape[1]
    n = psi.shape[0]
    col = np.empty(n)
    for k in range(km1):
        for i in range(n):
            col[i] = psi[i, k]
        qd, qw = quad_forms(col, indptr, indices, deg)
        cur = rho[k]
        eta = math.log(cur) - math.log1p(-cur)
        eta_new = eta + _RHO_STEP * rng.standard_normal()
        prop = 1.0 / (1.0 + math.exp(-eta_new))
        if not (0.0 < prop < 1.0):
            continue
        log_a = 0.5 * (logdet_from_eigs(log_deg_sum, eigs, prop) - logdet_from_eigs(log_deg_sum, eigs, cur))
        log_a += (prop - cur) * qw / (2.0 * tau)
        log_a += rho_log_prior_kernel(prop) - rho_log_prior_kernel(cur)
        log_a += math.log(prop) + math.log1p(-prop) - math.log(cur) - math.log1p(-cur)
        if math.log(rng.random()) < log_a:
            rho[k] = prop
            accepted[k] += 1


@numba.njit(cache=True)
def log_densities(z, psi, logk, log_mix):
    """Complete-data Gaussian log-likelihood; fills per-area log mixture density."""
    n = z.shape[0]
    K = psi.shape[1] + 1
    lp = np.empty(K)
    total = 0.0
    for i in range(n):
        total += logk[i, z[i]]
        log_stick_probs(psi[i], lp)
        m = -np.inf
        for k in range(K):
            lp[k] += logk[i, k]
            if lp[k] > m:
                m = lp[k]
        s = 0.0
        for k in range(K):
            s += math.exp(lp[k] - m)
        log_mix[i] = m + math.log(s)
    return total


@numba.njit(cache=True)
def run_chain_kernel(
    y, x, xtx, indptr, indices, deg, log_deg_sum, eigs,
    z, psi, omega, mu, beta, sigma, rho,
    flags, phi_arr, zeta, delta, gamma, a_phi_arr, a_zeta, a_delta, a_gamma,
    tau, beta_prior_var, sigma_prior_dof, sigma_prior_scale, update_rho, use_lik,
    iterations, burn, thin, rng,
    z_out, psi_out, mu_out, beta_out, sigma_out, rho_out,
    phi_out, zeta_out, delta_out, gamma_out, loglik_out, logmix_out, accepted,
):
    """Run ``iterations`` sweeps, storing every ``thin``-th draw after ``burn``.

    Returns -1 on success, otherwise the 1-based iteration at which the
    sweep failed (non-finite log-likelihood or a non-PD matrix).
    """
    n, d = y.shape
    K = mu.shape[0]
    offsets = np.zeros((n, d))
    logk = np.empty((n, K))
    sig_low = np.empty((d, d))
    sig_inv = np.empty((d, d))
    prior_var = np.empty((K, d))
    log_mix = np.empty(n)
    store_psi = psi_out.shape[0] > 0
    fitted_offsets(x, beta, offsets)
    slot = 0
    for it in range(iterations):
        update_omega_kernel(z, psi, omega, rng)
        update_psi_kernel(z, psi, omega, indptr, indices, deg, rho, tau, rng)
        if not chol(sigma, sig_low):
            return it + 1
        cluster_log_kernels(y, offsets, mu, sig_low, logk)
        update_allocations_kernel(z, psi, logk, use_lik, rng)
        chol_inverse(sig_low, sig_inv)
        prior_var_kernel(flags, phi_arr[0], zeta, delta, gamma, prior_var)
        if not update_mu_kernel(y, offsets, z, mu, sig_inv, prior_var, rng):
            return it + 1
        shrinkage_kernel(flags, mu, phi_arr, zeta, delta, gamma, a_phi_arr, a_zeta, a_delta, a_gamma, rng)
        if x.shape[1] > 0:
            if not update_beta_kernel(y, x, xtx, z, mu, sig_inv, beta, beta_prior_var, rng):
                return it + 1
            fitted_offsets(x, beta, offsets)
        if not update_sigma_kernel(y, offsets, z, mu, sigma, sigma_prior_dof, sigma_prior_scale, rng):
            return it + 1
        if update_rho:
            update_rho_kernel(psi, rho, indptr, indices, deg, log_deg_sum, eigs, tau, rng, accepted)
        if not chol(sigma, sig_low):
            return it + 1
        cluster_log_kernels(y, offsets, mu, sig_low, logk)
        ll = log_densities(z, psi, logk, log_mix)
        if not math.isfinite(ll):
            return it + 1
        if it >= burn and (it - burn) % thin == 0:
            for i in range(n):
                z_out[slot, i] = z[i]
                logmix_out[slot, i] = log_mix[i]
            if store_psi:
                psi_out[slot] = psi
            mu_out[slot] = mu
            beta_out[slot] = beta
            sigma_out[slot] = sigma
            rho_out[slot] = rho
            phi_out[slot] = phi_arr[0]
            zeta_out[slot] = zeta
            delta_out[slot] = delta
            gamma_out[slot] = gamma
            loglik_out[slot] = ll
            slot += 1
    return -1
