"""Command-line entry point: ``perla fit | simulate | summarize``.

Exit codes: 0 success, 1 invalid input, 2 sampler abort.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import SamplerError, ValidationError
from .graph import connected_components, load_adjacency, load_area_registry, save_adjacency, save_area_registry
from .ingest import load_dataset, write_area_table
from .io import (
    config_from_dict,
    read_config,
    read_draws,
    read_manifest,
    sha256_file,
    write_draws,
    write_manifest,
    write_table,
)
from .post import coclustering_matrix, dic3, ecr_relabel, point_partition, summary_tables
from .sampler import fit

log = logging.getLogger("perla")

SCENARIOS = ("sim1", "sim2", "custom")


def write_summaries(draws, out_dir, level=0.95, relabel=True):
    """Summary tables, DIC3, point partition and co-clustering matrix."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rho_lab = None
    if relabel:
        rel = ecr_relabel(draws)
        post_draws, rho_lab = rel.draws, rel.rho_by_label
    else:
        post_draws = draws
    for name, df in summary_tables(post_draws, level=level, rho_by_label=rho_lab).items():
        write_table(df, out / f"{name}.csv")
    write_table(pd.DataFrame({"dic3": [dic3(draws)]}), out / "dic3.csv")
    ids = list(draws.area_ids)
    part = point_partition(post_draws.z, draws.K) + 1
    write_table(pd.DataFrame({"area_id": ids, "cluster": part}), out / "point_partition.csv")
    cc = pd.DataFrame(coclustering_matrix(post_draws.z), columns=ids)
    cc.insert(0, "area_id", ids)
    write_table(cc, out / "coclustering.csv")


def _require(path, what):
    if path is None:
        raise ValidationError(f"missing required {what}")
    if not Path(path).is_file():
        raise ValidationError(f"{what} not found: {path}")
    return path


def _load_graph(adj, areas=None):
    registry = load_area_registry(_require(areas, "area registry")) if areas else None
    g = load_adjacency(_require(adj, "adjacency file"), registry)
    connected_components(g)
    return g


def cmd_fit(args):
    out = Path(args.out)
    if args.manifest:
        pairs, cfg_values = read_manifest(_require(args.manifest, "manifest"))
        inputs = {}
        for key in ("y", "adj", "areas", "x", "config"):
            path = pairs.get(f"input.{key}")
            if path is None:
                continue
            if sha256_file(_require(path, f"input file {key}")) != pairs[f"input.{key}.sha256"]:
                raise ValidationError(f"input file {path} changed since the manifest was written")
            inputs[key] = path
        impute = pairs.get("option.impute") == "True"
        standardize = pairs.get("option.standardize_covariates") == "True"
    else:
        inputs = {"y": args.y, "adj": args.adj, "areas": args.areas, "x": args.x, "config": args.config}
        cfg_values = read_config(_require(args.config, "config file")) if args.config else {}
        impute, standardize = args.impute, args.standardize_covariates
    _require(inputs.get("y"), "outcome file")
    _require(inputs.get("adj"), "adjacency file")
    cfg_values = dict(cfg_values)
    if args.seed is not None:
        cfg_values["seed"] = args.seed
    if args.K is not None:
        cfg_values["K"] = args.K
    cfg = config_from_dict(cfg_values)
    g = _load_graph(inputs["adj"], inputs.get("areas"))
    data = load_dataset(inputs["y"], g, inputs.get("x"), impute=impute, standardize_covariates=standardize)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.cfg", "fit", cfg, inputs={k: v for k, v in inputs.items() if v},
                   options={"impute": impute, "standardize_covariates": standardize}, version=__version__)
    draws = fit(data, cfg, threads=args.threads)
    write_draws(draws, out / "draws")
    write_summaries(draws, out / "summary", level=args.level, relabel=True)
    return 0


def cmd_summarize(args):
    src = Path(args.draws)
    if not src.is_dir():
        raise ValidationError(f"draws directory not found: {src}")
    draws = read_draws(src)
    out = Path(args.out) if args.out else src.parent / "summary"
    write_summaries(draws, out, level=args.level, relabel=args.relabel == "on")
    return 0


def _simulation_map(args):
    from .datasets import west_us_counties
    from .spatial import order_south_to_north

    if args.graph:
        g = _load_graph(args.graph, args.areas)
        if args.centroids:
            cent = pd.read_csv(_require(args.centroids, "centroid file"), dtype={"area_id": str})
            lat = cent.set_index("area_id").loc[list(g.area_ids), "latitude"].to_numpy()
            order = order_south_to_north(lat)
        else:
            order = np.arange(g.n)
    else:
        g, cent = west_us_counties()
        order = order_south_to_north(cent["latitude"].to_numpy())
    return g, order


def _custom_scenario(g, order, seed, args):
    from .simstudy import simulate_map

    K = args.K or 3
    d = args.d or 3
    rng = np.random.default_rng(seed)
    rho = np.array([float(v) for v in args.rho.split(",")]) if args.rho else rng.uniform(0.1, 0.9, K - 1)
    if rho.shape != (K - 1,):
        raise ValidationError(f"--rho needs {K - 1} values")
    mu = rng.uniform(-1.0, 1.0, size=(K, d))
    sigma = args.sigma_scale * np.eye(d)
    return simulate_map(g, order, K, rho, mu, sigma, int(rng.integers(2**63 - 1)))


def cmd_simulate(args):
    from .simstudy import fit_and_evaluate, kmeans_baseline, evaluate, scenario_sim1, scenario_sim2

    if args.scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {args.scenario!r}; expected one of {', '.join(SCENARIOS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g, order = _simulation_map(args)
    cfg_values = read_config(args.config) if args.config else {}
    for key in ("K", "iterations", "chains"):
        if getattr(args, key) is not None:
            cfg_values[key] = getattr(args, key)
    cfg_values.setdefault("K", 4 if args.scenario == "sim2" else 3)
    if args.shrinkage:
        cfg_values["shrinkage"] = args.shrinkage
    write_manifest(out / "manifest.cfg", "simulate", None,
                   options={"scenario": args.scenario, "replicates": args.replicates, "seed": args.seed,
                            "d": args.d, "fit": args.fit, "graph": args.graph or "bundled west_us"},
                   extra={f"fitconfig.{k}": v for k, v in cfg_values.items()}, version=__version__)
    rows = []
    for r in range(args.replicates):
        seed = args.seed + r
        if args.scenario == "sim1":
            data, truth = scenario_sim1(g, seed, order, d=args.d or 10)
        elif args.scenario == "sim2":
            data, truth = scenario_sim2(g, seed, order)
        else:
            data, truth = _custom_scenario(g, order, seed, args)
        rep = out / f"rep_{r + 1:03d}"
        rep.mkdir(exist_ok=True)
        write_area_table(rep / "y.csv", g.area_ids, data.outcome_names, data.Y)
        save_adjacency(g, rep / "edges.csv")
        save_area_registry(g, rep / "areas.txt")
        truth_doc = {"seed": seed, "K": truth.K, "d": truth.d, "z": (truth.z + 1).tolist(),
                     "mu": truth.mu.tolist(), "sigma": truth.sigma.tolist(), "rho": truth.rho.tolist()}
        if truth.informative is not None:
            truth_doc["informative"] = truth.informative.astype(int).tolist()
        (rep / "truth.json").write_text(json.dumps(truth_doc, indent=1) + "\n", encoding="utf-8")
        row = {"replicate": r + 1, "seed": seed}
        if args.fit:
            cfg = config_from_dict(cfg_values, seed=seed)
            draws, rel, m = fit_and_evaluate(data, truth, cfg, threads=args.threads)
            write_draws(draws, rep / "draws")
            write_summaries(draws, rep / "summary")
            km = kmeans_baseline(data.Y, cfg.K, seed)
            km_means = np.vstack([data.Y[km == k].mean(axis=0) for k in range(cfg.K)])[km]
            mk = evaluate(truth, km, data.Y, km_means)
            row.update(rand=m["rand"], rand_kmeans=mk["rand"], dic3=m["dic3"])
            for k in range(truth.K):
                row[f"rand_c{k + 1}"] = m["rand_per_cluster"][k]
                for j in range(truth.d):
                    row[f"mse_c{k + 1}_j{j + 1}"] = m["mse"][k, j]
        rows.append(row)
        log.info("replicate %d done", r + 1)
    write_table(pd.DataFrame(rows), out / "metrics.csv")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="perla", description="Bayesian spatial clustering of multivariate areal outcomes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the sampler and write draws and summaries")
    f.add_argument("--y", help="outcome table (area_id, outcome columns)")
    f.add_argument("--adj", help="edge list with header area_a,area_b")
    f.add_argument("--areas", help="area registry, one id per line (defines area order)")
    f.add_argument("--x", help="covariate table (area_id, covariate columns)")
    f.add_argument("--config", help="flat key = value sampler config")
    f.add_argument("--manifest", help="rerun the fit recorded in this manifest")
    f.add_argument("--K", type=int)
    f.add_argument("--impute", action="store_true", help="fill missing cells with neighbour means")
    f.add_argument("--standardize-covariates", action="store_true")
    f.add_argument("--level", type=float, default=0.95)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate synthetic replicates, optionally fit them")
    s.add_argument("--scenario", required=True, help="sim1 | sim2 | custom")
    s.add_argument("--graph", help="edge list; defaults to the bundled western U.S. map")
    s.add_argument("--areas")
    s.add_argument("--centroids", help="CSV with area_id and latitude columns, for the south-to-north order")
    s.add_argument("--replicates", type=int, default=5)
    s.add_argument("--K", type=int, help="clusters to fit (custom: also clusters to simulate)")
    s.add_argument("--d", type=int, help="number of outcomes (sim1, custom)")
    s.add_argument("--rho", help="custom: comma-separated stick correlations")
    s.add_argument("--sigma-scale", type=float, default=0.07, help="custom: error variance")
    s.add_argument("--config", help="sampler config used with --fit")
    s.add_argument("--iterations", type=int)
    s.add_argument("--chains", type=int)
    s.add_argument("--shrinkage")
    s.add_argument("--fit", action="store_true")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summarize", help="recompute summaries from stored draws")
    m.add_argument("--draws", required=True, help="draws directory written by fit")
    m.add_argument("--level", type=float, default=0.95)
    m.add_argument("--relabel", choices=("on", "off"), default="on")
    m.set_defaults(func=cmd_summarize)

    for sp in (f, s, m):
        sp.add_argument("--seed", type=int, default=None if sp is f else 0)
        sp.add_argument("--out", required=sp is not m)
        sp.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SamplerError as exc:
        print(f"sampler aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
