"""Data ingestion, run configuration, the end-to-end analysis and result files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import platform
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .data import StudyData
from .design import build_outcome_design
from .errors import (
    CompOrdinalError,
    InvalidConfigError,
    InvalidInputError,
    SchemaError,
    StageError,
)
from .estimands import (
    ESTIMAND_NAMES,
    Population,
    finite_sample_estimands,
    superpop_estimands,
)
from .glm_core import PriorSpec
from .imputation import posterior_predictive_check, run_imputations
from .outcome_models import OutcomePriors, PriorMode, fit_both_arms
from .pooling import PoolMethod, pool

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "w", "a", "d")
SMALL_SAMPLE_N = 200


# ---------------------------------------------------------------- serialization

def format_number(x) -> str:
    """17 significant digits, enough to round-trip any double exactly."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def atomic_write_text(path, text: str, *, force: bool = False) -> str:
    """Write via a temporary file in the target directory, then rename.

    An existing file is only replaced when ``force`` is set.
    """
    path = os.fspath(path)
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


# ---------------------------------------------------------------- ingestion

def ingest_csv(path, *, standardize: bool = True, matched: bool | None = None) -> StudyData:
    """Read ``id, w, a, d, x1..xP`` and standardize non-binary covariates.

    Row numbers in error messages count data rows from 1 (the header is
    not counted).  A sidecar ``<path>.json`` with ``{"matched": true}``
    marks the dataset as a matched cohort.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise InvalidInputError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header expected") from None
        rows = list(reader)
    for i, name in enumerate(header):
        if name == "":
            raise SchemaError(f"{path}: column {i + 1} has an empty name")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names")
    for name in REQUIRED_COLUMNS:
        if name not in header:
            raise SchemaError(f"{path}: missing required column {name!r}")
    cov_names = [h for h in header if h not in REQUIRED_COLUMNS]
    if not cov_names:
        raise SchemaError(f"{path}: no covariate columns")
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    if n == 0:
        raise SchemaError(f"{path}: no data rows")
    ids, w, a, d = [], np.empty(n, int), np.empty(n, int), np.empty(n, int)
    X = np.empty((n, len(cov_names)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        ids.append(row[pos["id"]].strip())
        for name, target in (("w", w), ("a", a), ("d", d)):
            raw = row[pos[name]].strip()
            if raw not in ("0", "1"):
                raise InvalidInputError(f"{path}: row {r}: {name}={raw!r} is not binary 0/1")
            target[r - 1] = int(raw)
        for j, name in enumerate(cov_names):
            raw = row[pos[name]].strip()
            try:
                v = float(raw)
            except ValueError:
                raise InvalidInputError(f"{path}: row {r}: {name}={raw!r} is not a number") from None
            if not math.isfinite(v):
                raise InvalidInputError(f"{path}: row {r}: {name} is not finite")
            X[r - 1, j] = v
    standardization = []
    for j in range(X.shape[1]):
        col = X[:, j]
        binary = bool(np.all((col == 0) | (col == 1)))
        if standardize and not binary and n > 1:
            mu, sd = float(col.mean()), float(col.std(ddof=1))
            if sd > 0:
                X[:, j] = (col - mu) / sd
                standardization.append((mu, sd))
                continue
        standardization.append(None)
    if matched is None:
        side = path + ".json"
        matched = False
        if os.path.exists(side):
            with open(side) as fh:
                matched = bool(json.load(fh).get("matched", False))
    data = StudyData(
        w, a, d, X, tuple(ids), tuple(cov_names), tuple(standardization), matched,
        {"source": path},
    )
    logger.info("read %d rows from %s (treated %d, control %d)", n, path,
                data.n_treated, data.n_control)
    return data


def write_study_csv(data: StudyData, path, *, force: bool = False, matched_sidecar: bool = True) -> str:
    rows = [list(REQUIRED_COLUMNS) + list(data.covariate_names)]
    for i in range(data.n):
        rows.append([data.ids[i], int(data.w[i]), int(data.a[i]), int(data.d[i])]
                    + [format_number(v) for v in data.covariates[i]])
    out = atomic_write_text(path, _csv_text(rows), force=force)
    if matched_sidecar and data.matched:
        atomic_write_text(os.fspath(path) + ".json", json.dumps({"matched": True}) + "\n", force=force)
    return out


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    """Every tunable that affects numbers.  Unknown keys are rejected."""

    mode: str = "analyze"
    M: int = 500
    seed: int = 0
    alpha: float = 0.05
    # outcome-model priors
    prior_mode: str = "application"
    cauchy_scale: float = 2.5
    shrinkage_lambda: float = 1.0
    ridge_scale: float = 3.0
    spline_sd: float = 8.0
    lasso: bool = False
    # design
    k_init: int = 6
    omit_index: int = -1
    # estimation
    population: str | None = None  # None: treated for matched data, else all
    estimands: list | None = None
    pool_method: str = "auto"
    small_sample_n: int = SMALL_SAMPLE_N
    superpop: bool = True
    ppc_draws: int = 1000
    # sensitivity
    mu_z_control: list = field(default_factory=lambda: [-1.0, 1.0])
    delta_grid_points: int = 21
    delta_range: list = field(default_factory=lambda: [-1.0, 1.0])
    sensitivity_M: int = 200
    center_on_fit_arm: bool = False
    # simulation
    case_study: str = "case_study_1"
    simulation_config: str | None = None
    link: str = "logit"
    burr_c: float = 0.5
    replications: int = 200
    sim_M: int = 100
    methods: list = field(default_factory=lambda: ["bayesian", "aipw"])
    # paths and execution
    data: str | None = None
    out: str = "results"
    threads: int = 1

    def __post_init__(self):
        self.validate(check_paths=False)

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.mode not in ("analyze", "simulate", "sensitivity", "fit", "impute", "estimate"):
            raise InvalidConfigError(f"unknown mode {self.mode!r}")
        if int(self.M) < 2:
            raise InvalidConfigError("M must be at least 2")
        if not (0 < float(self.alpha) < 1):
            raise InvalidConfigError("alpha must lie in (0, 1)")
        for enum_type, value in ((PriorMode, self.prior_mode), (Population, self.population),
                                 (PoolMethod, None if self.pool_method == "auto" else self.pool_method)):
            if value is not None:
                try:
                    enum_type(value)
                except ValueError:
                    raise InvalidConfigError(
                        f"{value!r} is not a valid {enum_type.__name__}") from None
        if self.estimands is not None:
            bad = [e for e in self.estimands if e not in ESTIMAND_NAMES]
            if bad:
                raise InvalidConfigError(f"unknown estimands: {bad}")
        if self.link not in ("logit", "burr"):
            raise InvalidConfigError("link must be 'logit' or 'burr'")
        if int(self.threads) < 1:
            raise InvalidConfigError("threads must be at least 1")
        if check_paths:
            for name in ("data", "simulation_config"):
                p = getattr(self, name)
                if p is not None and not os.path.exists(p):
                    raise InvalidConfigError(f"{name} path {p!r} does not exist")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            text = fh.read()
        if str(path).lower().endswith((".yaml", ".yml")):
            import yaml

            d = yaml.safe_load(text) or {}
        else:
            d = json.loads(text)
        if not isinstance(d, dict):
            raise InvalidConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def outcome_priors(self) -> OutcomePriors:
        if PriorMode(self.prior_mode) is PriorMode.SIMULATION:
            return OutcomePriors.simulation(self.cauchy_scale)
        return OutcomePriors.application(
            shrinkage_lambda=self.shrinkage_lambda, ridge_scale=self.ridge_scale,
            spline_sd=self.spline_sd, lasso=self.lasso,
        )

    def resolve_population(self, data: StudyData) -> Population:
        if self.population is not None:
            return Population(self.population)
        return Population.TREATED if data.matched else Population.ALL


# ---------------------------------------------------------------- analysis

@dataclass(frozen=True, eq=False)
class EstimateRow:
    estimand: str
    scope: str
    point: float
    se: float
    lo: float
    hi: float
    df: float
    method: str
    m_used: int


@dataclass(eq=False)
class AnalysisResult:
    estimates: list
    draws_header: list
    draws: list
    manifest: dict
    ppc: list = field(default_factory=list)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (CompOrdinalError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def pool_estimand(name, scope, values, config: RunConfig, nu_com, finite_sample) -> EstimateRow:
    vals = np.asarray(values, dtype=float)
    ok = vals[np.isfinite(vals)]
    if ok.size < 2:
        nan = float("nan")
        return EstimateRow(name, scope, nan, nan, nan, nan, nan, "undefined", int(ok.size))
    method = None if config.pool_method == "auto" else PoolMethod(config.pool_method)
    res = pool(ok, None, config.alpha, nu_com, method, finite_sample)
    return EstimateRow(name, scope, res.point, res.se, res.lo, res.hi, res.df,
                       res.method.value, int(ok.size))


def run_analysis(config: RunConfig, data: StudyData) -> AnalysisResult:
    """Propensity, design, arm fits, imputations, estimands and pooling."""
    t0 = time.perf_counter()
    timing = {}
    population = config.resolve_population(data)
    names = list(config.estimands) if config.estimands else list(ESTIMAND_NAMES)

    design = _stage("design", build_outcome_design, data.covariates, data.w,
                    k_init=config.k_init, omit_index=config.omit_index,
                    propensity_prior=PriorSpec.flat())
    timing["design"] = time.perf_counter() - t0
    priors = config.outcome_priors()
    fits0, fits1 = _stage("fit", fit_both_arms, design, data.w, data.a, data.d, priors)
    timing["fit"] = time.perf_counter() - t0
    run = _stage("impute", run_imputations, fits0, fits1, data, design.shared, config.M, config.seed)
    timing["impute"] = time.perf_counter() - t0

    treat = data.w
    fs = _stage("estimate", lambda: [finite_sample_estimands(ds, population, treat).as_dict()
                                     for ds in run.datasets])
    sp = []
    if config.superpop:
        sp = _stage("estimate", lambda: [s.as_dict() for s in superpop_estimands(
            fits0, fits1, run.draws, design.shared, population, treat)])
    timing["estimate"] = time.perf_counter() - t0

    n_pop = int(data.n if population is Population.ALL else data.n_treated)
    nu_com = None
    if n_pop < config.small_sample_n:
        nu_com = float(max(1, n_pop - fits1.death_fit.n_coefficients))
    rows = []
    for name in names:
        rows.append(_stage("pool", pool_estimand, name, "finite", [t[name] for t in fs],
                           config, nu_com, True))
    for name in names if sp else ():
        rows.append(_stage("pool", pool_estimand, name, "super", [t[name] for t in sp],
                           config, nu_com, False))
    timing["pool"] = time.perf_counter() - t0

    ppc = []
    if config.ppc_draws > 0:
        for fits in (fits0, fits1):
            chk = posterior_predictive_check(fits, data, design.shared, config.ppc_draws,
                                             config.seed)
            lo, hi = chk.central_interval(0.95)
            for k in range(4):
                ppc.append({"arm": fits.arm, "level": k + 1, "observed": int(chk.observed[k]),
                            "replicated_mean": float(chk.replicated[:, k].mean()),
                            "lo95": float(lo[k]), "hi95": float(hi[k]),
                            "tail_probability": float(chk.tail_probability[k])})
    timing["total"] = time.perf_counter() - t0

    draws = []
    for scope, table in (("finite", fs), ("super", sp)):
        for m, t in enumerate(table):
            draws.append([str(m), scope] + [format_number(t[nm]) for nm in names])

    manifest = {
        "package": "compordinal",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": __import__("scipy").__version__,
        "seed": int(config.seed),
        "M": int(config.M),
        "population": population.value,
        "config": config.to_dict(),
        "data": {
            "source": data.metadata.get("source"),
            "n": data.n, "treated": data.n_treated, "control": data.n_control,
            "matched": data.matched,
            "covariates": list(data.covariate_names),
            "standardization": [None if s is None else {"mean": s[0], "sd": s[1]}
                                for s in data.standardization],
        },
        "design": {
            "k_final": design.subclasses.k_final,
            "spline": design.spline.to_dict(),
            "omitted_covariate": design.omitted_index,
        },
        "priors": priors.to_dict(),
        "models": {
            f"arm{f.arm}_{kind}": {
                "converged": bool(getattr(f, kind + "_fit").converged),
                "iterations": int(getattr(f, kind + "_fit").iterations),
                "coefficients": getattr(f, kind + "_fit").coefficients.tolist(),
            }
            for f in (fits0, fits1) for kind in ("adverse", "death")
        },
        "pooling": {"nu_com": nu_com, "method": config.pool_method},
        "timing_seconds": timing,
    }
    return AnalysisResult(rows, ["m", "scope"] + names, draws, _jsonable(manifest), ppc)


# ---------------------------------------------------------------- reports

ESTIMATE_COLUMNS = ("estimand", "scope", "point", "se", "lo", "hi", "df", "method", "m_used")


def estimates_csv_text(rows) -> str:
    out = [list(ESTIMATE_COLUMNS)]
    for r in rows:
        out.append([r.estimand, r.scope, format_number(r.point), format_number(r.se),
                    format_number(r.lo), format_number(r.hi), format_number(r.df),
                    r.method, str(r.m_used)])
    return _csv_text(out)


def read_estimates_csv(path) -> list[EstimateRow]:
    with open(path, newline="") as fh:
        return [
            EstimateRow(r["estimand"], r["scope"], float(r["point"]), float(r["se"]),
                        float(r["lo"]), float(r["hi"]), float(r["df"]), r["method"],
                        int(r["m_used"]))
            for r in csv.DictReader(fh)
        ]


def manifest_schema() -> dict:
    ref = resources.files("compordinal") / "data" / "manifest.schema.json"
    with ref.open("r") as fh:
        return json.load(fh)


def validate_manifest(manifest: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(manifest, manifest_schema())
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"manifest does not match schema: {exc.message}") from exc


def emit_report(result: AnalysisResult, out_dir, *, force: bool = False) -> dict[str, str]:
    """Write estimates.csv, draws.csv, ppc.csv and manifest.json into ``out_dir``."""
    out_dir = os.fspath(out_dir)
    paths = {name: os.path.join(out_dir, name)
             for name in ("estimates.csv", "draws.csv", "ppc.csv", "manifest.json")}
    if not force:
        for p in paths.values():
            if os.path.exists(p):
                raise FileExistsError(f"{p} exists; pass --force to overwrite")
    validate_manifest(result.manifest)
    atomic_write_text(paths["estimates.csv"], estimates_csv_text(result.estimates), force=force)
    atomic_write_text(paths["draws.csv"], _csv_text([result.draws_header] + result.draws), force=force)
    ppc_rows = [["arm", "level", "observed", "replicated_mean", "lo95", "hi95", "tail_probability"]]
    for r in result.ppc:
        ppc_rows.append([r["arm"], r["level"], r["observed"], format_number(r["replicated_mean"]),
                         format_number(r["lo95"]), format_number(r["hi95"]),
                         format_number(r["tail_probability"])])
    atomic_write_text(paths["ppc.csv"], _csv_text(ppc_rows), force=force)
    atomic_write_text(paths["manifest.json"],
                      json.dumps(result.manifest, indent=2, sort_keys=True) + "\n", force=force)
    return paths
