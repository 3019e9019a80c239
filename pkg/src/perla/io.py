"""Config files, run manifests and on-disk draw storage.

Draw blocks are CSV files with a ``chain,iter`` prefix and numbers written
with 17 significant digits, so reading them back is exact.  The per-area
log mixture densities are large (draws x areas) and go to a ``.npy`` file.
"""

import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ValidationError
from .sampler import FitConfig, PosteriorDraws

__all__ = [
    "parse_config",
    "read_config",
    "config_to_text",
    "sha256_file",
    "write_manifest",
    "read_manifest",
    "write_draws",
    "read_draws",
    "write_table",
    "FLOAT_FORMAT",
]

FLOAT_FORMAT = "%.17g"

_INT_KEYS = {"K", "chains", "iterations", "seed", "thin", "init_starts", "init_pilot"}
_FLOAT_KEYS = {"burn_in", "rho_fixed", "tau", "beta_prior_var", "sigma_prior_dof", "sigma_prior_scale"}
_STR_KEYS = {"shrinkage", "rho_mode"}
CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def _parse_pairs(lines, source):
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValidationError(f"{source}: line {lineno}: empty key")
        if key in out:
            raise ValidationError(f"{source}: line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_config(text, source="<config>"):
    """Parse flat ``key = value`` text into a dict of typed sampler settings."""
    pairs = _parse_pairs(text.splitlines(), source)
    out = {}
    for key, value in pairs.items():
        if key not in CONFIG_KEYS:
            raise ValidationError(f"{source}: unknown config key {key!r}")
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = None if value.lower() in ("", "none") else float(value)
            else:
                out[key] = value
        except ValueError:
            raise ValidationError(f"{source}: bad value for {key}: {value!r}") from None
    return out


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def config_to_text(cfg):
    lines = []
    for key, value in cfg.to_dict().items():
        if key in CONFIG_KEYS:
            lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, cfg=None, inputs=None, options=None, extra=None, version="0"):
    """Write a key-value run manifest; input files are recorded with digests."""
    lines = [
        f"command = {command}",
        f"software_version = {version}",
        f"created_utc = {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
    ]
    for name, p in (inputs or {}).items():
        if p is None:
            continue
        lines.append(f"input.{name} = {os.path.abspath(p)}")
        lines.append(f"input.{name}.sha256 = {sha256_file(p)}")
    for name, v in (options or {}).items():
        lines.append(f"option.{name} = {v}")
    if cfg is not None:
        for key, value in cfg.to_dict().items():
            if key in CONFIG_KEYS:
                lines.append(f"config.{key} = {'none' if value is None else value}")
        lines.append("seeds.chains = " + ",".join(str(cfg.seed + c) for c in range(cfg.chains)))
    for name, v in (extra or {}).items():
        lines.append(f"{name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    """Return the manifest as a dict plus the embedded config text."""
    with open(path, encoding="utf-8") as fh:
        pairs = _parse_pairs(fh.read().splitlines(), str(path))
    cfg_text = "\n".join(f"{k[len('config.'):]} = {v}" for k, v in pairs.items() if k.startswith("config."))
    return pairs, parse_config(cfg_text, str(path))


def write_table(df, path):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _prefixed(draws, columns, values):
    df = pd.DataFrame(values, columns=columns)
    df.insert(0, "iter", draws.iteration)
    df.insert(0, "chain", draws.chain)
    return df


def _read(path):
    if not path.exists():
        raise ValidationError(f"missing draw file {path}")
    return pd.read_csv(path, float_precision="round_trip", dtype={"chain": np.int64, "iter": np.int64})


def write_draws(draws, out_dir):
    """Write one CSV per parameter block plus metadata into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M, K, d = draws.mu.shape
    p = draws.beta.shape[1]
    n = draws.z.shape[1]
    write_table(_prefixed(draws, [f"z_{a}" for a in draws.area_ids], draws.z + 1), out / "z.csv")
    write_table(_prefixed(draws, [f"mu_k{k + 1}_j{j + 1}" for k in range(K) for j in range(d)],
                          draws.mu.reshape(M, -1)), out / "mu.csv")
    write_table(_prefixed(draws, [f"beta_l{l + 1}_j{j + 1}" for l in range(p) for j in range(d)],
                          draws.beta.reshape(M, -1)), out / "beta.csv")
    write_table(_prefixed(draws, [f"sigma_{a + 1}_{b + 1}" for a in range(d) for b in range(d)],
                          draws.sigma.reshape(M, -1)), out / "sigma.csv")
    write_table(_prefixed(draws, [f"rho_s{k + 1}" for k in range(K - 1)], draws.rho), out / "rho.csv")
    cols = ["phi"] + [f"zeta_j{j + 1}" for j in range(d)] + [f"delta_k{k + 1}" for k in range(K)]
    cols += [f"gamma_k{k + 1}_j{j + 1}" for k in range(K) for j in range(d)]
    vals = np.concatenate([draws.phi[:, None], draws.zeta, draws.delta, draws.gamma.reshape(M, -1)], axis=1)
    write_table(_prefixed(draws, cols, vals), out / "shrinkage.csv")
    write_table(_prefixed(draws, ["loglik"], draws.loglik[:, None]), out / "loglik.csv")
    np.save(out / "log_mixture_density.npy", np.ascontiguousarray(draws.log_mix_density), allow_pickle=False)
    acc = pd.DataFrame(draws.rho_acceptance, columns=[f"rho_accept_s{k + 1}" for k in range(K - 1)])
    acc.insert(0, "chain", np.arange(acc.shape[0]))
    write_table(acc, out / "diagnostics.csv")
    meta = dict(area_ids=list(draws.area_ids), outcome_names=list(draws.outcome_names),
                covariate_names=list(draws.covariate_names), config=draws.config, n=n, K=K, d=d, p=p)
    (out / "draws_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_draws(in_dir):
    """Load draws written by :func:`write_draws`."""
    src = Path(in_dir)
    meta_path = src / "draws_meta.json"
    if not meta_path.exists():
        raise ValidationError(f"{src}: no draws found (missing draws_meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    K, d, p, n = meta["K"], meta["d"], meta["p"], meta["n"]
    zdf = _read(src / "z.csv")
    M = len(zdf)
    chain = zdf["chain"].to_numpy()
    its = zdf["iter"].to_numpy()
    z = zdf.iloc[:, 2:].to_numpy(dtype=np.int64) - 1

    def block(name, shape):
        return _read(src / name).iloc[:, 2:].to_numpy(dtype=np.float64).reshape((M,) + shape)

    sh = block("shrinkage.csv", (1 + d + K + K * d,))
    acc = _read(src / "diagnostics.csv") if (src / "diagnostics.csv").exists() else None
    return PosteriorDraws(
        chain=chain,
        iteration=its,
        z=z.reshape(M, n),
        mu=block("mu.csv", (K, d)),
        beta=block("beta.csv", (p, d)),
        sigma=block("sigma.csv", (d, d)),
        rho=block("rho.csv", (K - 1,)),
        phi=sh[:, 0].copy(),
        zeta=sh[:, 1 : 1 + d].copy(),
        delta=sh[:, 1 + d : 1 + d + K].copy(),
        gamma=sh[:, 1 + d + K :].reshape(M, K, d).copy(),
        loglik=block("loglik.csv", ()).reshape(M),
        log_mix_density=np.load(src / "log_mixture_density.npy", allow_pickle=False),
        rho_acceptance=np.empty((0, K - 1)) if acc is None else acc.iloc[:, 1:].to_numpy(dtype=np.float64),
        area_ids=meta["area_ids"],
        outcome_names=meta["outcome_names"],
        covariate_names=meta["covariate_names"],
        config=meta["config"],
    )


def config_from_dict(values, **overrides):
    merged = dict(values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "K" not in merged:
        raise ValidationError("config must set K")
    return FitConfig(**merged)
