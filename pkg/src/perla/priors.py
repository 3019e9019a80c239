"""Shrinkage priors on the cluster intercepts and the prior on rho.

The intercept mu_kj has prior variance phi * zeta_j * gamma_kj (or with
delta_k in place of gamma_kj), where any subset of the local factors may be
switched off.  Each active factor f has sqrt(f) ~ C+(0, 1), written as the
inverse-gamma scale mixture f | a ~ IG(1/2, 1/a), a ~ IG(1/2, 1), so every
Gibbs step below is an inverse-gamma draw.
"""

import enum
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import ValidationError

__all__ = [
    "ShrinkageConfig",
    "ShrinkageState",
    "RhoMode",
    "FLAT_PRIOR_VARIANCE",
    "prior_variance",
    "prior_variance_matrix",
    "update_shrinkage",
    "rho_log_prior",
]

FLAT_PRIOR_VARIANCE = 10.0


class ShrinkageConfig(str, enum.Enum):
    """Which shrinkage factors scale the intercept prior.

    The value is the short code used in config files: ``d`` is the
    disease-specific factor zeta, ``c`` the cluster-specific delta, ``cd``
    the cluster-and-disease gamma, with phi always present.
    """

    NONINFORMATIVE = "none"
    D = "d"
    C = "c"
    CD = "cd"
    C_D = "c_d"
    D_CD = "d_cd"

    @property
    def uses_zeta(self):
        return self in (ShrinkageConfig.D, ShrinkageConfig.C_D, ShrinkageConfig.D_CD)

    @property
    def uses_delta(self):
        return self in (ShrinkageConfig.C, ShrinkageConfig.C_D)

    @property
    def uses_gamma(self):
        return self in (ShrinkageConfig.CD, ShrinkageConfig.D_CD)

    @property
    def is_flat(self):
        return self is ShrinkageConfig.NONINFORMATIVE

    @property
    def flags(self):
        return np.array([self.is_flat, self.uses_zeta, self.uses_delta, self.uses_gamma], dtype=np.bool_)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("(", "").replace(")", "").replace(",", "_")
        if key in ("noninformative", "ni", "flat"):
            key = "none"
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown shrinkage variant {value!r}; expected one of none|d|c|cd|c_d|d_cd") from None


class RhoMode(str, enum.Enum):
    FIXED = "fixed"
    SPIKE_SLAB = "spike_slab"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown rho_mode {value!r}; expected fixed|spike_slab") from None


@dataclass
class ShrinkageState:
    """Shrinkage factors and their augmentation scales.

    Factors that the active variant does not use stay at exactly 1.
    """

    phi: float
    zeta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    alpha_phi: float
    alpha_zeta: np.ndarray
    alpha_delta: np.ndarray
    alpha_gamma: np.ndarray = field(repr=False)

    @classmethod
    def initial(cls, K, d):
        return cls(
            phi=1.0,
            zeta=np.ones(d),
            delta=np.ones(K),
            gamma=np.ones((K, d)),
            alpha_phi=1.0,
            alpha_zeta=np.ones(d),
            alpha_delta=np.ones(K),
            alpha_gamma=np.ones((K, d)),
        )

    def copy(self):
        return replace(
            self,
            zeta=self.zeta.copy(),
            delta=self.delta.copy(),
            gamma=self.gamma.copy(),
            alpha_zeta=self.alpha_zeta.copy(),
            alpha_delta=self.alpha_delta.copy(),
            alpha_gamma=self.alpha_gamma.copy(),
        )


@numba.njit(cache=True)
def prior_var_kernel(flags, phi, zeta, delta, gamma, out):
    K, d = out.shape
    for k in range(K):
        for j in range(d):
            if flags[0]:
                out[k, j] = 10.0
            else:
                v = phi
                if flags[1]:
                    v *= zeta[j]
                if flags[2]:
                    v *= delta[k]
                if flags[3]:
                    v *= gamma[k, j]
                out[k, j] = v


def prior_variance(s, cfg, k, j):
    """Prior variance of mu_kj: the product of active factors, or 10 if flat."""
    cfg = ShrinkageConfig.parse(cfg)
    if cfg.is_flat:
        return FLAT_PRIOR_VARIANCE
    v = s.phi
    if cfg.uses_zeta:
        v *= s.zeta[j]
    if cfg.uses_delta:
        v *= s.delta[k]
    if cfg.uses_gamma:
        v *= s.gamma[k, j]
    return float(v)


def prior_variance_matrix(s, cfg):
    cfg = ShrinkageConfig.parse(cfg)
    out = np.empty(s.gamma.shape)
    prior_var_kernel(cfg.flags, s.phi, s.zeta, s.delta, s.gamma, out)
    return out


@numba.njit(cache=True)
def _inv_gamma(shape, rate, rng):
    return rate / rng.standard_gamma(shape)


@numba.njit(cache=True)
def shrinkage_kernel(flags, mu, phi_arr, zeta, delta, gamma, a_phi_arr, a_zeta, a_delta, a_gamma, rng):
    """One Gibbs sweep over the active shrinkage blocks, in place.

    Order: (alpha_zeta, zeta), (alpha_gamma, gamma) or (alpha_delta, delta),
    then (alpha_phi, phi).  ``phi_arr`` and ``a_phi_arr`` are length-1 arrays.
    """
    if flags[0]:
        return
    K, d = mu.shape
    phi = phi_arr[0]
    use_zeta = flags[1]
    use_delta = flags[2]
    use_gamma = flags[3]
    if use_zeta:
        for j in range(d):
            a_zeta[j] = _inv_gamma(1.0, 1.0 / zeta[j] + 1.0, rng)
            acc = 0.0
            for k in range(K):
                loc = 1.0
                if use_delta:
                    loc *= delta[k]
                if use_gamma:
                    loc *= gamma[k, j]
                acc += mu[k, j] * mu[k, j] / loc
            zeta[j] = _inv_gamma(0.5 * (K + 1), acc / (2.0 * phi) + 1.0 / a_zeta[j], rng)
    if use_gamma:
        for k in range(K):
            for j in range(d):
                a_gamma[k, j] = _inv_gamma(1.0, 1.0 / gamma[k, j] + 1.0, rng)
                z = zeta[j] if use_zeta else 1.0
                gamma[k, j] = _inv_gamma(1.0, mu[k, j] * mu[k, j] / (2.0 * phi * z) + 1.0 / a_gamma[k, j], rng)
    if use_delta:
        for k in range(K):
            a_delta[k] = _inv_gamma(1.0, 1.0 / delta[k] + 1.0, rng)
            acc = 0.0
            for j in range(d):
                z = zeta[j] if use_zeta else 1.0
                acc += mu[k, j] * mu[k, j] / z
            delta[k] = _inv_gamma(0.5 * (d + 1), acc / (2.0 * phi) + 1.0 / a_delta[k], rng)
    a_phi_arr[0] = _inv_gamma(1.0, 1.0 / phi + 1.0, rng)
    acc = 0.0
    for k in range(K):
        for j in range(d):
            loc = 1.0
            if use_zeta:
                loc *= zeta[j]
            if use_delta:
                loc *= delta[k]
            if use_gamma:
                loc *= gamma[k, j]
            acc += mu[k, j] * mu[k, j] / loc
    phi_arr[0] = _inv_gamma(0.5 * (K * d + 1), 0.5 * acc + 1.0 / a_phi_arr[0], rng)


def update_shrinkage(s, cfg, mu, rng):
    """One Gibbs sweep of the shrinkage factors given intercepts ``mu`` (K, d).

    Returns a new :class:`ShrinkageState`; ``s`` is left untouched.
    """
    cfg = ShrinkageConfig.parse(cfg)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    if mu.shape != s.gamma.shape:
        raise ValidationError(f"mu has shape {mu.shape}, expected {s.gamma.shape}")
    out = s.copy()
    phi = np.array([out.phi])
    a_phi = np.array([out.alpha_phi])
    shrinkage_kernel(cfg.flags, mu, phi, out.zeta, out.delta, out.gamma, a_phi, out.alpha_zeta, out.alpha_delta, out.alpha_gamma, rng)
    out.phi = float(phi[0])
    out.alpha_phi = float(a_phi[0])
    return out


# log B(2, 18) = log B(18, 2) = -log(342)
_LOG_BETA_2_18 = -math.log(342.0)


@numba.njit(cache=True)
def rho_log_prior_kernel(rho):
    if not (0.0 < rho < 1.0):
        return -np.inf
    lr = math.log(rho)
    l1r = math.log1p(-rho)
    low = lr + 17.0 * l1r - _LOG_BETA_2_18
    high = 17.0 * lr + l1r - _LOG_BETA_2_18
    m = max(low, high)
    return math.log(0.5) + m + math.log(math.exp(low - m) + math.exp(high - m))


def rho_log_prior(rho, mode=RhoMode.SPIKE_SLAB):
    """Log density of the equal-weight mixture 0.5 Beta(2, 18) + 0.5 Beta(18, 2)."""
    mode = RhoMode.parse(mode)
    if mode is RhoMode.FIXED:
        raise ValidationError("rho has no prior density in fixed mode")
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    return float(rho_log_prior_kernel(float(rho)))
