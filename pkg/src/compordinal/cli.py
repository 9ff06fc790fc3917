"""Command-line interface: ``compordinal <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .cli_io import (
    RunConfig,
    _csv_text,
    _jsonable,
    atomic_write_text,
    emit_report,
    estimates_csv_text,
    format_number,
    ingest_csv,
    run_analysis,
    pool_estimand,
    write_study_csv,
)
from .design import build_outcome_design
from .errors import CompOrdinalError, InvalidConfigError, InvalidInputError
from .estimands import ESTIMAND_NAMES, finite_sample_estimands
from .glm_core import LinkFunction, PriorSpec
from .imputation import CompletedDataset, run_imputations
from .outcome_models import fit_both_arms
from .sensitivity import SensitivitySpec, export_heatmap_data, run_sensitivity
from .simulation import (
    CASE_STUDIES,
    load_simulation_config,
    run_replications,
    synthetic_application_dataset,
)

logger = logging.getLogger("compordinal")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (JSON or YAML)")
    p.add_argument("--data", required=False, help="input CSV: id,w,a,d,x1..xP")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--m", type=int, dest="M", help="number of imputations / parameter draws")
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing output files")
    p.add_argument("--threads", type=int, help="worker processes for replications")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compordinal",
        description="Composite ordinal causal estimands under truncation by death.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit", "fit the design and the per-arm outcome models; write fits.json"),
        ("impute", "write M completed datasets to imputations.csv"),
        ("analyze", "end-to-end analysis: estimates.csv, draws.csv, ppc.csv, manifest.json"),
        ("sensitivity", "unobserved-covariate sensitivity grid(s) as heatmap CSVs"),
    ):
        _common(sub.add_parser(name, help=help_text))
    est = sub.add_parser("estimate", help="pool finite-sample estimands from imputations.csv")
    _common(est)
    est.add_argument("--imputations", required=True, help="imputations.csv written by 'impute'")
    sim = sub.add_parser("simulate", help="replication study with coverage metrics")
    _common(sim)
    sim.add_argument("--case-study", choices=sorted(CASE_STUDIES), help="shipped generating parameters")
    sim.add_argument("--sim-config", help="simulation parameter file (JSON or YAML)")
    sim.add_argument("--link", choices=("logit", "burr"))
    sim.add_argument("--replications", "-R", type=int)
    sim.add_argument("--methods", nargs="+", choices=("bayesian", "aipw"))
    sim.add_argument("--application-data", metavar="CSV",
                     help="write the synthetic application dataset to CSV and exit")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {"mode": args.command}
    for key in ("data", "seed", "M", "out", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if args.command == "simulate":
        for key, attr in (("case_study", "case_study"), ("simulation_config", "sim_config"),
                          ("link", "link"), ("replications", "replications"),
                          ("methods", "methods")):
            v = getattr(args, attr, None)
            if v is not None:
                overrides[key] = v
        if args.M is not None:
            overrides["sim_M"] = args.M
            overrides.pop("M")
    cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate(check_paths=True)


def _require_data(cfg: RunConfig):
    if cfg.data is None:
        raise InvalidConfigError("--data (or 'data' in the config file) is required")
    return ingest_csv(cfg.data)


def _fit(cfg, data):
    design = build_outcome_design(data.covariates, data.w, k_init=cfg.k_init,
                                  omit_index=cfg.omit_index, propensity_prior=PriorSpec.flat())
    fits0, fits1 = fit_both_arms(design, data.w, data.a, data.d, cfg.outcome_priors())
    return design, fits0, fits1


def cmd_fit(cfg, args) -> int:
    data = _require_data(cfg)
    design, fits0, fits1 = _fit(cfg, data)
    out = {
        "design": {"k_final": design.subclasses.k_final, "spline": design.spline.to_dict(),
                   "omitted_covariate": design.omitted_index},
        "priors": cfg.outcome_priors().to_dict(),
    }
    for f in (fits0, fits1):
        for kind in ("adverse", "death"):
            m = getattr(f, kind + "_fit")
            out[f"arm{f.arm}_{kind}"] = {
                "coefficients": m.coefficients.tolist(),
                "standard_errors": m.standard_errors.tolist(),
                "covariance": m.covariance.tolist(),
                "converged": m.converged, "iterations": m.iterations,
            }
    path = os.path.join(cfg.out, "fits.json")
    atomic_write_text(path, json.dumps(_jsonable(out), indent=2) + "\n", force=args.force)
    print(path)
    return 0


def cmd_impute(cfg, args) -> int:
    data = _require_data(cfg)
    design, fits0, fits1 = _fit(cfg, data)
    run = run_imputations(fits0, fits1, data, design.shared, cfg.M, cfg.seed)
    rows = [["m", "id", "w", "a0", "a1", "d0", "d1"]]
    for ds in run.datasets:
        for i in range(data.n):
            rows.append([ds.m, data.ids[i], int(ds.w[i]), int(ds.a0[i]), int(ds.a1[i]),
                         int(ds.d0[i]), int(ds.d1[i])])
    path = os.path.join(cfg.out, "imputations.csv")
    atomic_write_text(path, _csv_text(rows), force=args.force)
    print(path)
    return 0


def read_imputations(path) -> list[CompletedDataset]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: no imputations")
    by_m: dict[int, list] = {}
    for r in rows:
        by_m.setdefault(int(r["m"]), []).append(r)
    out = []
    for m in sorted(by_m):
        g = by_m[m]
        col = lambda k: np.array([int(r[k]) for r in g])  # noqa: E731
        out.append(CompletedDataset(m, col("a0"), col("a1"), col("d0"), col("d1"), col("w")))
    return out


def cmd_estimate(cfg, args) -> int:
    datasets = read_imputations(args.imputations)
    population = cfg.population or "all"
    names = list(cfg.estimands) if cfg.estimands else list(ESTIMAND_NAMES)
    tables = [finite_sample_estimands(ds, population).as_dict() for ds in datasets]
    rows = [pool_estimand(nm, "finite", [t[nm] for t in tables], cfg, None, True) for nm in names]
    path = os.path.join(cfg.out, "estimates.csv")
    atomic_write_text(path, estimates_csv_text(rows), force=args.force)
    print(path)
    return 0


def cmd_analyze(cfg, args) -> int:
    data = _require_data(cfg)
    result = run_analysis(cfg, data)
    paths = emit_report(result, cfg.out, force=args.force)
    for p in paths.values():
        print(p)
    return 0


def cmd_sensitivity(cfg, args) -> int:
    data = _require_data(cfg)
    design, fits0, fits1 = _fit(cfg, data)
    lo, hi = cfg.delta_range
    grid = tuple(np.round(np.linspace(lo, hi, cfg.delta_grid_points), 12))
    population = cfg.resolve_population(data)
    for mu in cfg.mu_z_control:
        spec = SensitivitySpec(float(mu), grid, grid, cfg.center_on_fit_arm)
        res = run_sensitivity(fits0, fits1, data, design.shared, spec, cfg.sensitivity_M,
                              cfg.seed, population)
        path = os.path.join(cfg.out, f"sensitivity_mu{format_number(mu)}.csv")
        export_heatmap_data(res, path, force=args.force)
        print(path)
    return 0


def cmd_simulate(cfg, args) -> int:
    if getattr(args, "application_data", None):
        data = synthetic_application_dataset(cfg.seed or 2016)
        print(write_study_csv(data, args.application_data, force=args.force))
        return 0
    if cfg.simulation_config:
        sim = load_simulation_config(cfg.simulation_config)
    else:
        sim = CASE_STUDIES[cfg.case_study]
    if cfg.link == "burr":
        sim = sim.with_link(LinkFunction.burr(cfg.burr_c))
    metrics = run_replications(sim, cfg.replications, tuple(cfg.methods), cfg.sim_M, cfg.seed,
                               n_jobs=cfg.threads)
    path = os.path.join(cfg.out, "metrics.csv")
    metrics.to_csv(path, force=args.force)
    manifest = {"simulation": sim.to_dict(), "run": cfg.to_dict(), "truth": metrics.truth,
                "failures": metrics.failures}
    atomic_write_text(os.path.join(cfg.out, "simulation_manifest.json"),
                      json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n",
                      force=args.force)
    print(path)
    return 0


COMMANDS = {
    "fit": cmd_fit, "impute": cmd_impute, "estimate": cmd_estimate, "analyze": cmd_analyze,
    "sensitivity": cmd_sensitivity, "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg, args)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CompOrdinalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
