import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perla.stickbreak import multinomial_loglik, probs_to_psi, psi_to_probs, stick_counts
from perla.errors import ValidationError


def _sequential(psi):
    pt = 1 / (1 + np.exp(-np.asarray(psi)))
    out, rest = [], 1.0
    for p in pt:
        out.append(p * rest)
        rest *= 1 - p
    return np.array(out + [rest])


def test_zero_field():
    np.testing.assert_allclose(psi_to_probs([0.0, 0.0]), [0.5, 0.25, 0.25], atol=1e-15)


def test_saturation():
    p = psi_to_probs([30.0])
    assert p[0] == pytest.approx(1.0, abs=1e-9) and p[1] == pytest.approx(0.0, abs=1e-9)


def test_matches_sequential_formula():
    np.testing.assert_allclose(psi_to_probs([-1.2, 0.7]), _sequential([-1.2, 0.7]), rtol=1e-13)


def test_inverse_examples():
    np.testing.assert_allclose(probs_to_psi([0.5, 0.25, 0.25]), [0.0, 0.0], atol=1e-12)
    for K in range(2, 7):
        psi = probs_to_psi(np.full(K, 1.0 / K))
        expect = [math.log((1 / (K - k + 1)) / (1 - 1 / (K - k + 1))) for k in range(1, K)]
        np.testing.assert_allclose(psi, expect, atol=1e-12)


def test_inverse_rejects_bad_input():
    with pytest.raises(ValidationError):
        probs_to_psi([0.5, 0.5, 0.0])
    with pytest.raises(ValidationError):
        probs_to_psi([0.5, 0.6])


def test_round_trip_random_simplex(rng):
    err = 0.0
    for _ in range(1000):
        K = int(rng.integers(2, 7))
        pi = rng.dirichlet(np.ones(K))
        err = max(err, np.abs(psi_to_probs(probs_to_psi(pi)) - pi).max())
    assert err < 1e-9


def test_stick_counts():
    assert stick_counts([1, 0, 0]).tolist() == [1, 0]
    assert stick_counts([0, 0, 1]).tolist() == [1, 1]
    assert stick_counts([0, 1, 0]).tolist() == [1, 1]
    with pytest.raises(ValidationError):
        stick_counts([1, 1, 0])


def test_loglik_examples():
    assert multinomial_loglik([1, 0, 0], [0.0, 0.0]) == pytest.approx(math.log(0.5))
    assert multinomial_loglik([0, 0, 1], [0.0, 0.0]) == pytest.approx(math.log(0.25))


@pytest.mark.parametrize("K", [2, 3, 4, 5, 6])
def test_enumeration_sums_to_one(K, rng):
    for _ in range(50):
        psi = rng.normal(0, 3, K - 1)
        tot = math.fsum(math.exp(multinomial_loglik(np.eye(K, dtype=int)[k], psi)) for k in range(K))
        assert abs(tot - 1) < 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 6), elements=st.floats(-40, 40)))
def test_loglik_equals_log_prob(psi):
    K = psi.size + 1
    p = psi_to_probs(psi)
    assert abs(p.sum() - 1) < 1e-12
    for k in range(K):
        z = np.eye(K, dtype=int)[k]
        assert abs(math.exp(multinomial_loglik(z, psi)) - p[k]) < 1e-12


def test_prior_sizes_nonincreasing(rng):
    K, reps = 4, 20000
    psi = rng.standard_normal((reps, K - 1))
    p = psi_to_probs(psi)
    pt = 1 / (1 + np.exp(-psi))
    se = pt.std(axis=0) / math.sqrt(reps)
    assert np.all(np.abs(pt.mean(axis=0) - 0.5) < 4 * se)
    share = p.mean(axis=0)
    se_share = p.std(axis=0) / math.sqrt(reps)
    for k in range(K - 2):
        assert share[k] > share[k + 1] - 4 * (se_share[k] + se_share[k + 1])
