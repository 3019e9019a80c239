import numpy as np
import pytest

from perla.errors import ValidationError
from perla.io import config_from_dict, config_to_text, parse_config, read_draws, read_manifest, write_draws, write_manifest
from perla.sampler import FitConfig, fit
from test_sampler import six_area_toy


def test_parse_config_types_and_comments():
    cfg = parse_config("K = 4  # clusters\nshrinkage=c_d\nburn_in = 0.5\n\nsigma_prior_dof = none\n")
    assert cfg == {"K": 4, "shrinkage": "c_d", "burn_in": 0.5, "sigma_prior_dof": None}


@pytest.mark.parametrize("text, msg", [
    ("K = 4\nK = 3", "duplicate"),
    ("colour = red", "unknown config key"),
    ("K four", "expected 'key = value'"),
    ("K = four", "bad value"),
])
def test_parse_config_errors(text, msg):
    with pytest.raises(ValidationError, match=msg):
        parse_config(text)


def test_config_text_round_trip():
    cfg = FitConfig(K=3, shrinkage="d_cd", rho_mode="spike_slab", thin=3, seed=11)
    assert config_from_dict(parse_config(config_to_text(cfg))) == cfg
    with pytest.raises(ValidationError, match="must set K"):
        config_from_dict({})


def test_manifest_round_trip(tmp_path):
    src = tmp_path / "y.csv"
    src.write_text("area_id,y1\nA,1\n")
    cfg = FitConfig(K=2, chains=3, seed=40)
    write_manifest(tmp_path / "m.cfg", "fit", cfg, inputs={"y": src}, options={"impute": False}, version="9")
    pairs, values = read_manifest(tmp_path / "m.cfg")
    assert pairs["seeds.chains"] == "40,41,42"
    assert pairs["option.impute"] == "False"
    assert len(pairs["input.y.sha256"]) == 64
    assert config_from_dict(values) == cfg


def test_draws_round_trip_exact(tmp_path):
    data = six_area_toy(p=1)
    draws = fit(data, FitConfig(K=3, chains=2, iterations=60, rho_mode="spike_slab"))
    write_draws(draws, tmp_path / "d")
    back = read_draws(tmp_path / "d")
    for name in ("chain", "iteration", "z", "mu", "beta", "sigma", "rho", "phi", "zeta", "delta", "gamma",
                 "loglik", "log_mix_density", "rho_acceptance"):
        np.testing.assert_array_equal(getattr(back, name), getattr(draws, name), err_msg=name)
    assert back.area_ids == draws.area_ids
    header = (tmp_path / "d" / "mu.csv").read_text().splitlines()[0]
    assert header.startswith("chain,iter,mu_k1_j1,mu_k1_j2,mu_k2_j1")
    assert (tmp_path / "d" / "z.csv").read_text().splitlines()[1].split(",")[2] in {"1", "2", "3"}


def test_read_draws_missing(tmp_path):
    with pytest.raises(ValidationError, match="no draws"):
        read_draws(tmp_path)
