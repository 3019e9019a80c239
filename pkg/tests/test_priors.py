import math

import numpy as np
import pytest
from scipy import stats

from perla.errors import ValidationError
from perla.priors import (
    FLAT_PRIOR_VARIANCE,
    RhoMode,
    ShrinkageConfig,
    ShrinkageState,
    prior_variance,
    prior_variance_matrix,
    rho_log_prior,
    update_shrinkage,
)

VARIANTS = list(ShrinkageConfig)


def _state(K, d, rng=None):
    s = ShrinkageState.initial(K, d)
    if rng is not None:
        s.phi = float(rng.gamma(2.0))
        s.zeta = rng.gamma(2.0, size=d)
        s.delta = rng.gamma(2.0, size=K)
        s.gamma = rng.gamma(2.0, size=(K, d))
    return s


def test_prior_variance_examples():
    s = _state(3, 4)
    s.phi, s.zeta[1] = 2.0, 3.0
    assert prior_variance(s, "d", 0, 1) == 6.0
    assert prior_variance(_state(3, 4), "cd", 2, 3) == 1.0
    s = _state(3, 4)
    s.phi, s.zeta[0], s.delta[2] = 2.0, 0.5, 4.0
    assert prior_variance(s, "c_d", 2, 0) == 4.0
    assert prior_variance(s, "none", 2, 0) == FLAT_PRIOR_VARIANCE == 10.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_variance_matrix_matches_scalar(variant, rng):
    s = _state(3, 4, rng)
    m = prior_variance_matrix(s, variant)
    for k in range(3):
        for j in range(4):
            assert m[k, j] == pytest.approx(prior_variance(s, variant, k, j), rel=1e-15)


def test_variant_parsing():
    assert ShrinkageConfig.parse("(c,d)") is ShrinkageConfig.C_D
    assert ShrinkageConfig.parse("NI") is ShrinkageConfig.NONINFORMATIVE
    with pytest.raises(ValidationError):
        ShrinkageConfig.parse("cdc")
    assert RhoMode.parse("Spike_Slab") is RhoMode.SPIKE_SLAB


def _reference_sweep(s, variant, mu, rng):
    """Sequential inverse-gamma draws written from the conditionals; replays the same stream."""
    v = ShrinkageConfig.parse(variant)
    s = s.copy()
    K, d = mu.shape
    ig = lambda shape, rate: rate / rng.standard_gamma(shape)
    if v.is_flat:
        return s
    if v.uses_zeta:
        for j in range(d):
            s.alpha_zeta[j] = ig(1.0, 1 / s.zeta[j] + 1)
            local = s.delta if v.uses_delta else (s.gamma[:, j] if v.uses_gamma else np.ones(K))
            s.zeta[j] = ig((K + 1) / 2, (mu[:, j] ** 2 / local).sum() / (2 * s.phi) + 1 / s.alpha_zeta[j])
    if v.uses_gamma:
        for k in range(K):
            for j in range(d):
                s.alpha_gamma[k, j] = ig(1.0, 1 / s.gamma[k, j] + 1)
                s.gamma[k, j] = ig(1.0, mu[k, j] ** 2 / (2 * s.phi * s.zeta[j]) + 1 / s.alpha_gamma[k, j])
    if v.uses_delta:
        for k in range(K):
            s.alpha_delta[k] = ig(1.0, 1 / s.delta[k] + 1)
            s.delta[k] = ig((d + 1) / 2, (mu[k] ** 2 / s.zeta).sum() / (2 * s.phi) + 1 / s.alpha_delta[k])
    s.alpha_phi = ig(1.0, 1 / s.phi + 1)
    loc = s.zeta[None, :] * s.delta[:, None] * s.gamma
    s.phi = ig((K * d + 1) / 2, 0.5 * (mu ** 2 / loc).sum() + 1 / s.alpha_phi)
    return s


@pytest.mark.parametrize("variant", VARIANTS)
def test_sweep_matches_reference(variant, rng):
    K, d = 3, 10
    s = _state(K, d)
    mu = rng.normal(size=(K, d))
    for seed in range(5):
        got = update_shrinkage(s, variant, mu, np.random.default_rng(seed))
        ref = _reference_sweep(s, variant, mu, np.random.default_rng(seed))
        for name in ("phi", "zeta", "delta", "gamma", "alpha_phi", "alpha_zeta", "alpha_delta"):
            np.testing.assert_allclose(getattr(got, name), getattr(ref, name), rtol=1e-12)
        s = got


def test_shape_of_zeta_and_phi_conditionals():
    # mu = 0 leaves rates 1/alpha; scaling the draw by the rate isolates the gamma shape
    K, d, reps = 3, 10, 20000
    s = _state(K, d)
    zeta_scaled, phi_scaled = [], []
    rng = np.random.default_rng(2)
    for _ in range(reps):
        out = update_shrinkage(s, "d", np.zeros((K, d)), rng)
        zeta_scaled.append((1 / out.alpha_zeta[0]) / out.zeta[0])
        phi_scaled.append((1 / out.alpha_phi) / out.phi)
    assert stats.kstest(zeta_scaled, stats.gamma(2.0).cdf).pvalue > 1e-3
    assert stats.kstest(phi_scaled, stats.gamma(15.5).cdf).pvalue > 1e-3


@pytest.mark.parametrize("variant", VARIANTS)
def test_inactive_blocks_stay_one(variant, rng):
    v = ShrinkageConfig.parse(variant)
    s = _state(3, 4)
    for _ in range(10_000):
        s = update_shrinkage(s, v, rng.normal(size=(3, 4)), rng)
    if not v.uses_zeta:
        assert np.all(s.zeta == 1.0) and np.all(s.alpha_zeta == 1.0)
    if not v.uses_delta:
        assert np.all(s.delta == 1.0) and np.all(s.alpha_delta == 1.0)
    if not v.uses_gamma:
        assert np.all(s.gamma == 1.0) and np.all(s.alpha_gamma == 1.0)
    if v.is_flat:
        assert s.phi == 1.0
    else:
        assert s.phi > 0


@pytest.mark.parametrize("variant", [v for v in VARIANTS if not v.is_flat])
def test_prior_draws_symmetric(variant, rng):
    # factors from the half-Cauchy prior, then mu | factors
    m = 40_000
    c2 = lambda size: np.abs(stats.cauchy.rvs(size=size, random_state=rng)) ** 2
    v = ShrinkageConfig.parse(variant)
    var = c2(m)
    for flag in (v.uses_zeta, v.uses_delta, v.uses_gamma):
        if flag:
            var = var * c2(m)
    x = rng.normal(size=m) * np.sqrt(var)
    x = np.clip(x, -50, 50)
    skew = stats.skew(x)
    se = math.sqrt(6 / m)
    boot = [stats.skew(rng.choice(x, m)) for _ in range(50)]
    assert abs(skew) < 4 * max(se, np.std(boot))


def test_horseshoe_tails_heavier_than_gaussian(rng):
    m = 200_000
    lam = np.abs(stats.cauchy.rvs(size=m, random_state=rng))
    x = rng.normal(size=m) * lam
    q25, q75 = np.percentile(x, [25, 75])
    sd = (q75 - q25) / (2 * stats.norm.ppf(0.75))
    for t in (3.0, 5.0, 10.0):
        assert np.mean(np.abs(x) > t * sd) > 2 * stats.norm.sf(t) * 5


def test_rho_prior_values():
    half = rho_log_prior(0.5)
    assert half == pytest.approx(stats.beta(2, 18).logpdf(0.5), rel=1e-12)
    for r in (0.01, 0.2, 0.37, 0.8, 0.999):
        mix = math.log(0.5 * stats.beta(2, 18).pdf(r) + 0.5 * stats.beta(18, 2).pdf(r))
        assert rho_log_prior(r) == pytest.approx(mix, rel=1e-10)
        assert rho_log_prior(r) == pytest.approx(rho_log_prior(1 - r), rel=1e-10, abs=1e-12)
    assert rho_log_prior(1e-12) < -20


def test_rho_prior_errors():
    with pytest.raises(ValidationError):
        rho_log_prior(0.0)
    with pytest.raises(ValidationError):
        rho_log_prior(0.5, RhoMode.FIXED)
