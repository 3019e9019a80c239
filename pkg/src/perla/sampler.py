"""MCMC engine: block updates, chain orchestration, initialization.

One sweep updates, in order, the Polya-gamma latents omega, the stick
fields psi, the allocations, the intercepts mu, the shrinkage factors,
the regression coefficients beta, the error covariance Sigma and, in
spike-and-slab mode, the CAR propriety parameters rho.

The ``update_*`` functions are thin wrappers over the compiled kernels in
:mod:`perla._kernels`; they return a fresh :class:`ModelState` and exist
for testing and interactive use.  :func:`run_chain` runs the whole loop in
compiled code.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.cluster import KMeans

from . import _kernels as kern
from .errors import SamplerError, ValidationError
from .priors import RhoMode, ShrinkageConfig, ShrinkageState, prior_variance_matrix

__all__ = [
    "FitConfig",
    "ModelState",
    "PosteriorDraws",
    "initial_state",
    "update_omega",
    "update_psi",
    "update_allocations",
    "update_mu",
    "update_beta",
    "update_sigma",
    "update_rho",
    "run_chain",
    "fit",
    "chain_rng",
]


@dataclass(frozen=True)
class FitConfig:
    """Sampler settings.

    ``burn_in`` is the fraction of each chain's iterations discarded;
    ``sigma_prior_dof`` of ``None`` means the outcome dimension d.
    """

    K: int
    chains: int = 4
    iterations: int = 10_000
    burn_in: float = 0.5
    seed: int = 0
    shrinkage: ShrinkageConfig = ShrinkageConfig.C_D
    rho_mode: RhoMode = RhoMode.FIXED
    rho_fixed: float = 0.99
    tau: float = 1.0
    thin: int = 1
    beta_prior_var: float = 10.0
    sigma_prior_dof: float = None
    sigma_prior_scale: float = 1.0
    store_psi: bool = False
    init_starts: int = 10
    init_pilot: int = 200

    def __post_init__(self):
        object.__setattr__(self, "shrinkage", ShrinkageConfig.parse(self.shrinkage))
        object.__setattr__(self, "rho_mode", RhoMode.parse(self.rho_mode))
        if int(self.K) != self.K or self.K < 2:
            raise ValidationError(f"K must be an integer >= 2, got {self.K}")
        if self.init_starts < 1 or self.init_pilot < 0:
            raise ValidationError("init_starts must be positive and init_pilot nonnegative")
        if self.chains < 1 or self.iterations < 1 or self.thin < 1:
            raise ValidationError("chains, iterations and thin must be positive")
        if not 0.0 <= self.burn_in < 1.0 or self.burn_iterations >= self.iterations:
            raise ValidationError(f"burn-in {self.burn_in} leaves no retained iterations")
        if not 0.0 < self.rho_fixed < 1.0:
            raise ValidationError(f"rho_fixed must lie in (0, 1), got {self.rho_fixed}")
        if not self.tau > 0 or not self.beta_prior_var > 0 or not self.sigma_prior_scale > 0:
            raise ValidationError("tau, beta_prior_var and sigma_prior_scale must be positive")

    @property
    def burn_iterations(self):
        return int(round(self.burn_in * self.iterations))

    @property
    def retained_per_chain(self):
        return -(-(self.iterations - self.burn_iterations) // self.thin)

    def to_dict(self):
        out = asdict(self)
        out["shrinkage"] = self.shrinkage.value
        out["rho_mode"] = self.rho_mode.value
        return out


@dataclass
class ModelState:
    """One state of the chain.  ``z`` holds 0-based cluster labels."""

    z: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    shrink: ShrinkageState
    rho: np.ndarray
    variant: ShrinkageConfig = ShrinkageConfig.C_D
    tau: float = 1.0

    @property
    def K(self):
        return self.mu.shape[0]

    @property
    def Z(self):
        """One-hot allocation matrix (n x K)."""
        out = np.zeros((self.z.shape[0], self.K), dtype=np.int64)
        out[np.arange(self.z.shape[0]), self.z] = 1
        return out

    @property
    def N(self):
        """Stick risk indicators N_ik (n x K-1)."""
        return (self.z[:, None] >= np.arange(self.K - 1)[None, :]).astype(np.int64)

    @property
    def kappa(self):
        return (self.z[:, None] == np.arange(self.K - 1)[None, :]) - 0.5 * self.N

    def copy(self):
        return replace(
            self,
            z=self.z.copy(),
            psi=self.psi.copy(),
            omega=self.omega.copy(),
            mu=self.mu.copy(),
            beta=self.beta.copy(),
            sigma=self.sigma.copy(),
            shrink=self.shrink.copy(),
            rho=self.rho.copy(),
        )

    def check(self):
        """Raise :class:`SamplerError` if a structural invariant is violated.

        The omega/N pairing only holds between the omega draw and the next
        allocation update, since new labels make the old omega stale.
        """
        if self.z.min() < 0 or self.z.max() >= self.K:
            raise SamplerError("allocation label out of range")
        if np.any((self.N == 0) & (self.omega != 0)) or np.any(self.omega < 0):
            raise SamplerError("omega must be zero exactly where N is zero and nonnegative elsewhere")
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise SamplerError("Sigma is not positive definite") from None
        if not np.allclose(self.sigma, self.sigma.T, rtol=0, atol=1e-12):
            raise SamplerError("Sigma is not symmetric")


@dataclass
class PosteriorDraws:
    """Retained draws from all chains, in chain-then-iteration order.

    ``z`` stores 0-based labels; ``log_mix_density[m, i]`` is the log of
    sum_k pi_ik N_d(y_i | mu_k + x_i beta, Sigma) at draw m and
    ``loglik[m]`` the Gaussian log-likelihood given the sampled labels.
    """

    chain: np.ndarray
    iteration: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    zeta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    loglik: np.ndarray
    log_mix_density: np.ndarray
    rho_acceptance: np.ndarray
    area_ids: list
    outcome_names: list
    covariate_names: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    psi: np.ndarray = None

    @property
    def n_draws(self):
        return self.loglik.shape[0]

    @property
    def K(self):
        return self.mu.shape[1]

    @classmethod
    def concatenate(cls, parts):
        first = parts[0]
        arrays = {}
        for name in ("chain", "iteration", "z", "mu", "beta", "sigma", "rho", "phi", "zeta", "delta", "gamma",
                     "loglik", "log_mix_density"):
            arrays[name] = np.concatenate([getattr(p, name) for p in parts])
        psi = None if first.psi is None else np.concatenate([p.psi for p in parts])
        return cls(
            **arrays,
            rho_acceptance=np.concatenate([p.rho_acceptance for p in parts]),
            area_ids=first.area_ids,
            outcome_names=first.outcome_names,
            covariate_names=first.covariate_names,
            config=first.config,
            psi=psi,
        )


def chain_rng(seed, chain):
    """The private random stream of chain ``chain`` (seeded with seed + chain)."""
    return np.random.default_rng(int(seed) + int(chain))


def _graph_arrays(g):
    deg = g.degrees.astype(np.float64)
    return g.indptr, g.indices, deg


def _kmeans_labels(y, K, seed):
    km = KMeans(n_clusters=K, n_init=10, random_state=int(seed) % (2**32), algorithm="lloyd").fit(y)
    return km.labels_


def _state_from_labels(data, cfg, labels):
    K = cfg.K
    n, d = data.Y.shape
    sizes = np.bincount(labels, minlength=K)
    order = np.argsort(-sizes, kind="stable")
    relabel = np.empty(K, dtype=np.int64)
    relabel[order] = np.arange(K)
    z = relabel[labels].astype(np.int64)
    mu = np.zeros((K, d))
    for k in range(K):
        if np.any(z == k):
            mu[k] = data.Y[z == k].mean(axis=0)
    sigma = np.atleast_2d(np.cov(data.Y, rowvar=False)) if n > d else np.eye(d)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        sigma = np.eye(d)
    rho0 = cfg.rho_fixed if cfg.rho_mode is RhoMode.FIXED else 0.5
    return ModelState(
        z=z,
        psi=np.zeros((n, K - 1)),
        omega=np.zeros((n, K - 1)),
        mu=mu,
        beta=np.zeros((data.p, d)),
        sigma=np.ascontiguousarray(sigma),
        shrink=ShrinkageState.initial(K, d),
        rho=np.full(K - 1, rho0),
        variant=cfg.shrinkage,
        tau=cfg.tau,
    )


def _candidate_partitions(y, K, seed, starts):
    seen = []
    cands = [_kmeans_labels(y, K, seed)]
    for s in range(starts - 1):
        rs = int(np.random.SeedSequence([int(seed), s]).generate_state(1)[0])
        km = KMeans(n_clusters=K, n_init=1, init="random", random_state=rs, algorithm="lloyd").fit(y)
        cands.append(km.labels_)
    out = []
    for lab in cands:
        key = _canonical(lab)
        if key not in seen:
            seen.append(key)
            out.append(lab)
    return out


def _canonical(labels):
    # partition identity regardless of label names
    _, first = np.unique(labels, return_index=True)
    remap = {int(labels[i]): r for r, i in enumerate(np.sort(first))}
    return tuple(remap[int(v)] for v in labels)


def initial_state(data, cfg):
    """Warm start from a k-means partition, relabelled by decreasing size.

    mu starts at the within-cluster means (0 for an empty cluster), beta at
    0, Sigma at the sample covariance of Y (identity if that is singular),
    psi and omega at 0, every shrinkage factor at 1, and rho at ``rho_fixed``
    in fixed mode or 0.5 in spike-and-slab mode.

    With ``cfg.init_starts > 1`` several k-means solutions compete: the
    best-inertia one plus single-start runs.  Each is followed by a short
    pilot chain and the partition whose pilot reaches the highest average
    log mixture density wins.  K-means favours equal-sized groups and can
    split a large cluster while merging two small ones; the sampler rarely
    escapes that configuration, whereas the pilot score exposes it.
    """
    K = cfg.K
    if K > data.n:
        raise ValidationError(f"K={K} exceeds the number of areas ({data.n})")
    cands = _candidate_partitions(data.Y, K, cfg.seed, cfg.init_starts)
    if len(cands) == 1 or cfg.init_pilot == 0:
        return _state_from_labels(data, cfg, cands[0])
    best, best_score = None, -np.inf
    pilot = replace(cfg, iterations=cfg.init_pilot, burn_in=0.5, thin=1, store_psi=False)
    for s, lab in enumerate(cands):
        st = _state_from_labels(data, cfg, lab)
        rng = np.random.default_rng([int(cfg.seed), 1_000_003, s])
        try:
            res, _ = _sweeps(data, pilot, st.copy(), rng, likelihood=True)
        except SamplerError:
            continue
        score = float(res["logmix_out"].sum(axis=1).mean())
        if score > best_score:
            best, best_score = st, score
    if best is None:
        raise SamplerError("every initial partition failed during the pilot runs")
    return best


def update_omega(state, rng):
    """omega_ik ~ PG(1, psi_ik) where N_ik = 1, exactly 0 elsewhere."""
    out = state.copy()
    kern.update_omega_kernel(out.z, out.psi, out.omega, rng)
    return out


def update_psi(state, g, rng):
    """Single-site Gibbs sweep over psi (stick by stick, areas in index order)."""
    out = state.copy()
    indptr, indices, deg = _graph_arrays(g)
    kern.update_psi_kernel(out.z, out.psi, out.omega, indptr, indices, deg, out.rho, float(out.tau), rng)
    return out


def _offsets(data, beta):
    off = np.zeros(data.Y.shape)
    kern.fitted_offsets(data.X, np.ascontiguousarray(beta), off)
    return off


def _sigma_factor(sigma):
    low = np.empty_like(sigma)
    if not kern.chol(np.ascontiguousarray(sigma), low):
        raise SamplerError("Sigma is not positive definite")
    return low


def allocation_log_probs(state, data):
    """Normalized log Pr(z_i = k | rest) for every area (n x K)."""
    from .stickbreak import psi_to_log_probs

    logk = np.empty((data.n, state.K))
    kern.cluster_log_kernels(data.Y, _offsets(data, state.beta), state.mu, _sigma_factor(state.sigma), logk)
    lp = psi_to_log_probs(state.psi) + logk
    return lp - np.logaddexp.reduce(lp, axis=1, keepdims=True)


def update_allocations(state, data, rng, likelihood=True):
    """Redraw every label independently.  ``likelihood=False`` samples from the stick prior only."""
    out = state.copy()
    logk = np.zeros((data.n, out.K))
    if likelihood:
        kern.cluster_log_kernels(data.Y, _offsets(data, out.beta), out.mu, _sigma_factor(out.sigma), logk)
    kern.update_allocations_kernel(out.z, out.psi, logk, bool(likelihood), rng)
    return out


def _sigma_inverse(sigma):
    inv = np.empty_like(sigma)
    kern.chol_inverse(_sigma_factor(sigma), inv)
    return inv


def update_mu(state, data, rng):
    out = state.copy()
    pv = prior_variance_matrix(out.shrink, out.variant)
    ok = kern.update_mu_kernel(data.Y, _offsets(data, out.beta), out.z, out.mu, _sigma_inverse(out.sigma), pv, rng)
    if not ok:
        raise SamplerError("intercept posterior precision is not positive definite")
    return out


def update_beta(state, data, rng, prior_var=10.0):
    """Gaussian conditional for vec(beta); a no-op without covariates."""
    out = state.copy()
    if data.p == 0:
        return out
    xtx = data.X.T @ data.X
    ok = kern.update_beta_kernel(data.Y, data.X, xtx, out.z, out.mu, _sigma_inverse(out.sigma), out.beta, float(prior_var), rng)
    if not ok:
        raise SamplerError("coefficient posterior precision is not positive definite")
    return out


def update_sigma(state, data, rng, prior_dof=None, prior_scale=1.0):
    """Sigma ~ IW(prior_dof + n, prior_scale I + E^T E); prior_dof defaults to d."""
    out = state.copy()
    dof = float(data.d if prior_dof is None else prior_dof)
    ok = kern.update_sigma_kernel(data.Y, _offsets(data, out.beta), out.z, out.mu, out.sigma, dof, float(prior_scale), rng)
    if not ok:
        raise SamplerError("inverse-Wishart scale is not positive definite")
    return out


def update_rho(state, g, rng):
    """Random-walk Metropolis on logit(rho_k), proposal variance 3.

    Returns ``(new_state, accepted)`` where ``accepted`` flags each stick.
    """
    out = state.copy()
    indptr, indices, deg = _graph_arrays(g)
    accepted = np.zeros(out.K - 1, dtype=np.int64)
    kern.update_rho_kernel(
        out.psi, out.rho, indptr, indices, deg, float(np.log(deg).sum()),
        g.normalized_adjacency_eigenvalues(), float(out.tau), rng, accepted,
    )
    return out, accepted.astype(bool)


def _sweeps(data, cfg, st, rng, likelihood=True, chain=0):
    """Run the compiled loop from ``st`` (mutated in place); returns (outputs, accepted)."""
    n, d = data.Y.shape
    K, p = cfg.K, data.p
    M = cfg.retained_per_chain
    g = data.graph
    indptr, indices, deg = _graph_arrays(g)
    eigs = g.normalized_adjacency_eigenvalues()
    phi = np.array([st.shrink.phi])
    a_phi = np.array([st.shrink.alpha_phi])
    out = dict(
        z_out=np.empty((M, n), dtype=np.int64),
        psi_out=np.empty((M if cfg.store_psi else 0, n, K - 1)),
        mu_out=np.empty((M, K, d)),
        beta_out=np.empty((M, p, d)),
        sigma_out=np.empty((M, d, d)),
        rho_out=np.empty((M, K - 1)),
        phi_out=np.empty(M),
        zeta_out=np.empty((M, d)),
        delta_out=np.empty((M, K)),
        gamma_out=np.empty((M, K, d)),
        loglik_out=np.empty(M),
        logmix_out=np.empty((M, n)),
    )
    accepted = np.zeros(K - 1, dtype=np.int64)
    sh = st.shrink
    failed = kern.run_chain_kernel(
        data.Y, data.X, np.ascontiguousarray(data.X.T @ data.X), indptr, indices, deg, float(np.log(deg).sum()), eigs,
        st.z, st.psi, st.omega, st.mu, st.beta, st.sigma, st.rho,
        cfg.shrinkage.flags, phi, sh.zeta, sh.delta, sh.gamma, a_phi, sh.alpha_zeta, sh.alpha_delta, sh.alpha_gamma,
        float(cfg.tau), float(cfg.beta_prior_var),
        float(d if cfg.sigma_prior_dof is None else cfg.sigma_prior_dof), float(cfg.sigma_prior_scale),
        cfg.rho_mode is RhoMode.SPIKE_SLAB, bool(likelihood),
        cfg.iterations, cfg.burn_iterations, cfg.thin, rng,
        out["z_out"], out["psi_out"], out["mu_out"], out["beta_out"], out["sigma_out"], out["rho_out"],
        out["phi_out"], out["zeta_out"], out["delta_out"], out["gamma_out"], out["loglik_out"], out["logmix_out"],
        accepted,
    )
    if failed >= 0:
        raise SamplerError(f"chain {chain}: non-finite log-likelihood or singular matrix at iteration {failed}",
                           iteration=int(failed), chain=chain)
    sh.phi = float(phi[0])
    sh.alpha_phi = float(a_phi[0])
    return out, accepted


def run_chain(data, cfg, chain=0, likelihood=True, state=None):
    """Run one chain and return its retained draws as a :class:`PosteriorDraws`.

    The chain's random stream is ``chain_rng(cfg.seed, chain)``.  Without an
    explicit ``state`` the chain starts from :func:`initial_state`, which
    depends on ``cfg`` only, so all chains share a starting point.
    """
    rng = chain_rng(cfg.seed, chain)
    st = initial_state(data, cfg) if state is None else state.copy()
    out, accepted = _sweeps(data, cfg, st, rng, likelihood=likelihood, chain=chain)
    K, M = cfg.K, cfg.retained_per_chain
    its = cfg.burn_iterations + 1 + cfg.thin * np.arange(M)
    n_prop = cfg.iterations if cfg.rho_mode is RhoMode.SPIKE_SLAB else 0
    rate = accepted / n_prop if n_prop else np.full(K - 1, np.nan)
    return PosteriorDraws(
        chain=np.full(M, chain, dtype=np.int64),
        iteration=its.astype(np.int64),
        z=out["z_out"],
        mu=out["mu_out"],
        beta=out["beta_out"],
        sigma=out["sigma_out"],
        rho=out["rho_out"],
        phi=out["phi_out"],
        zeta=out["zeta_out"],
        delta=out["delta_out"],
        gamma=out["gamma_out"],
        loglik=out["loglik_out"],
        log_mix_density=out["logmix_out"],
        rho_acceptance=rate[None, :],
        area_ids=list(data.graph.area_ids),
        outcome_names=list(data.outcome_names),
        covariate_names=list(data.covariate_names),
        config=cfg.to_dict(),
        psi=out["psi_out"] if cfg.store_psi else None,
    )


def _run_chain_task(args):
    data, cfg, chain, state = args
    return run_chain(data, cfg, chain, state=state)


def fit(data, cfg, threads=1):
    """Run ``cfg.chains`` chains (seeds seed + c) and merge them in chain order.

    With ``threads > 1`` chains run in worker processes; the merged result
    does not depend on scheduling.
    """
    state = initial_state(data, cfg)
    tasks = [(data, cfg, c, state) for c in range(cfg.chains)]
    workers = max(1, min(int(threads), cfg.chains))
    if workers == 1:
        parts = [_run_chain_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chain_task, tasks))
    return PosteriorDraws.concatenate(parts)
