"""Multinomial stick-breaking transforms.

Cluster probabilities pi (K entries) are parameterised by K-1 latent reals
psi through conditional "stick" probabilities logistic(psi_k): stick k takes
the share logistic(psi_k) of whatever mass clusters 1..k-1 left over, and
cluster K gets the remainder.  All computations run in log space.
"""

import math

import numba
import numpy as np

from .errors import ValidationError

__all__ = [
    "PSI_CLAMP",
    "psi_to_probs",
    "psi_to_log_probs",
    "probs_to_psi",
    "stick_counts",
    "multinomial_loglik",
]

PSI_CLAMP = 35.0


@numba.njit(cache=True)
def log_expit(x):
    """log(1 / (1 + exp(-x))) with x clamped to +/- PSI_CLAMP."""
    if x > PSI_CLAMP:
        x = PSI_CLAMP
    elif x < -PSI_CLAMP:
        x = -PSI_CLAMP
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@numba.njit(cache=True)
def log_stick_probs(psi_row, out):
    """Fill ``out`` (length K) with log cluster probabilities for one area."""
    rest = 0.0
    km1 = psi_row.shape[0]
    for k in range(km1):
        out[k] = rest + log_expit(psi_row[k])
        rest += log_expit(-psi_row[k])
    out[km1] = rest


def psi_to_log_probs(psi):
    """Log cluster probabilities for a psi row (K-1,) or matrix (n, K-1)."""
    psi = np.asarray(psi, dtype=np.float64)
    if not np.all(np.isfinite(psi)):
        raise ValidationError("psi must be finite")
    psi = np.clip(psi, -PSI_CLAMP, PSI_CLAMP)
    log_stick = -np.logaddexp(0.0, -psi)
    log_rest = -np.logaddexp(0.0, psi)
    shape = psi.shape[:-1] + (psi.shape[-1] + 1,)
    out = np.zeros(shape)
    carried = np.cumsum(log_rest, axis=-1)
    out[..., 0] = log_stick[..., 0]
    out[..., 1:-1] = carried[..., :-1] + log_stick[..., 1:]
    out[..., -1] = carried[..., -1]
    return out


def psi_to_probs(psi):
    """Cluster probabilities from latent sticks.

    Parameters
    ----------
    psi : array_like, shape (K-1,) or (n, K-1)

    Returns
    -------
    ndarray, shape (K,) or (n, K)
    """
    return np.exp(psi_to_log_probs(psi))


def probs_to_psi(pi, atol=1e-9):
    """Inverse of :func:`psi_to_probs` for strictly positive ``pi``."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape[-1] < 2:
        raise ValidationError("need at least two clusters")
    if np.any(~np.isfinite(pi)) or np.any(pi <= 0):
        raise ValidationError("cluster probabilities must be strictly positive")
    total = pi.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > atol):
        raise ValidationError(f"cluster probabilities must sum to 1, got {total}")
    # Tail sums are more accurate than 1 - cumulative sums for small entries.
    tail = np.cumsum(pi[..., ::-1], axis=-1)[..., ::-1]
    return np.log(pi[..., :-1]) - np.log(tail[..., 1:])


def _check_one_hot(z_row):
    z = np.asarray(z_row)
    if z.ndim != 1 or z.shape[0] < 2 or not np.all((z == 0) | (z == 1)) or z.sum() != 1:
        raise ValidationError(f"expected a one-hot row, got {z_row!r}")
    return z.astype(np.int64)


def stick_counts(z_row):
    """Stick-participation indicators N_k for k = 1..K-1.

    N_1 = 1 always; N_k = 1 iff the area is not in clusters 1..k-1.
    """
    z = _check_one_hot(z_row)
    label = int(np.argmax(z))
    return (np.arange(z.shape[0] - 1) <= label).astype(np.int64)


def multinomial_loglik(z_row, psi_row):
    """Stick-breaking log-probability of the one-hot allocation ``z_row``."""
    z = _check_one_hot(z_row)
    psi = np.asarray(psi_row, dtype=np.float64)
    if psi.shape != (z.shape[0] - 1,):
        raise ValidationError("psi_row must have K-1 entries")
    n = stick_counts(z)
    psi = np.clip(psi, -PSI_CLAMP, PSI_CLAMP)
    log_p = -np.logaddexp(0.0, -psi)
    log_q = -np.logaddexp(0.0, psi)
    zk = z[:-1]
    return float(np.sum(n * (zk * log_p + (1 - zk) * log_q)))
