"""CAR prior machinery and the DAGAR field generator."""

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ValidationError

__all__ = [
    "CarParams",
    "car_logdet",
    "car_log_density",
    "car_conditional",
    "car_precision",
    "dagar_simulate",
    "order_south_to_north",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CarParams:
    """Scale ``tau`` and propriety parameter ``rho`` of a proper CAR field.

    The field has precision (D - rho W) / tau.
    """

    tau: float = 1.0
    rho: float = 0.99

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")


def car_precision(g, p):
    """Dense precision matrix (D - rho W) / tau; meant for small graphs."""
    return (np.diag(g.degrees.astype(np.float64)) - p.rho * g.adjacency_matrix()) / p.tau


@numba.njit(cache=True)
def logdet_from_eigs(log_deg_sum, eigs, rho):
    s = log_deg_sum
    for lam in eigs:
        s += math.log1p(-rho * lam)
    return s


@numba.njit(cache=True)
def quad_forms(psi, indptr, indices, deg):
    """Return (psi' D psi, psi' W psi) for one field."""
    qd = 0.0
    qw = 0.0
    for i in range(psi.shape[0]):
        qd += deg[i] * psi[i] * psi[i]
        s = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            s += psi[indices[t]]
        qw += psi[i] * s
    return qd, qw


def car_logdet(g, rho):
    """log det(D - rho W) for ``rho`` in [0, 1)."""
    if not 0.0 <= rho < 1.0:
        raise ValidationError(f"rho must lie in [0, 1), got {rho}")
    eigs = g.normalized_adjacency_eigenvalues()
    return logdet_from_eigs(float(np.log(g.degrees).sum()), eigs, float(rho))


def car_log_density(psi, g, p):
    """Log density of ``psi`` under N(0, tau (D - rho W)^{-1})."""
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    if psi.shape != (g.n,):
        raise ValidationError(f"psi must have shape ({g.n},), got {psi.shape}")
    logdet = car_logdet(g, p.rho)
    qd, qw = quad_forms(psi, g.indptr, g.indices, g.degrees.astype(np.float64))
    quad = qd - p.rho * qw
    return -0.5 * g.n * (_LOG_2PI + math.log(p.tau)) + 0.5 * logdet - 0.5 * quad / p.tau


def car_conditional(psi_others, i, omega_i, kappa_i, g, p):
    """Gaussian full conditional of one site after Polya-gamma augmentation.

    Returns ``(mean, variance)`` with variance tau / (tau omega + D_ii) and
    mean variance * (kappa + rho / tau * sum of neighbour values).  The entry
    ``psi_others[i]`` is ignored.  With ``omega = kappa = 0`` this is the
    prior conditional of the CAR field.
    """
    if omega_i < 0:
        raise ValidationError("omega must be nonnegative")
    psi_others = np.asarray(psi_others, dtype=np.float64)
    s = float(psi_others[list(g.neighbors[i])].sum())
    var = p.tau / (p.tau * omega_i + g.degrees[i])
    return var * (kappa_i + p.rho / p.tau * s), var


@numba.njit(cache=True)
def _dagar_kernel(order, indptr, indices, rho, rng, out):
    n = order.shape[0]
    rank = np.empty(n, dtype=np.int64)
    for r in range(n):
        rank[order[r]] = r
    rho2 = rho * rho
    for r in range(n):
        i = order[r]
        s = 0.0
        n_prev = 0
        for t in range(indptr[i], indptr[i + 1]):
            j = indices[t]
            if rank[j] < r:
                s += out[j]
                n_prev += 1
        if n_prev == 0:
            out[i] = rng.standard_normal()
        else:
            denom = 1.0 + (n_prev - 1) * rho2
            b = rho / denom
            f = (1.0 - rho2) / denom
            out[i] = b * s + math.sqrt(f) * rng.standard_normal()


def dagar_simulate(g, ordering, rho, rng):
    """Draw one DAGAR field over ``g``.

    Areas are visited in ``ordering``; each area is normal given its already
    visited neighbours N(i), with mean b_i * sum(psi_N(i)) and variance F_i,
    where b_i = rho / (1 + (|N(i)| - 1) rho^2) and
    F_i = (1 - rho^2) / (1 + (|N(i)| - 1) rho^2).  Areas without earlier
    neighbours are standard normal.
    """
    order = np.asarray(ordering, dtype=np.int64)
    if order.shape != (g.n,) or not np.array_equal(np.sort(order), np.arange(g.n)):
        raise ValidationError("ordering must be a permutation of the area indices")
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"DAGAR rho must lie in (0, 1), got {rho}")
    out = np.zeros(g.n)
    _dagar_kernel(order, g.indptr, g.indices, float(rho), rng, out)
    return out


def order_south_to_north(latitudes):
    """Area indices sorted by increasing latitude; ties keep index order."""
    lat = np.asarray(latitudes, dtype=np.float64)
    if not np.all(np.isfinite(lat)):
        raise ValidationError("latitudes must be finite")
    return np.argsort(lat, kind="stable")
