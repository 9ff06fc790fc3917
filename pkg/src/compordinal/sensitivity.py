"""Sensitivity of the relative treatment effect to an unobserved covariate.

An unobserved standardized covariate ``Z`` with mean ``mu_z_control`` among
control units and 0 among active units is drawn per unit per imputation and
enters the imputation-time linear predictors as ``delta_a * Z`` (adverse) and
``delta_d * Z`` (death).  Fitted coefficients are held fixed.  For each grid
cell the pooled ``kappa10 - kappa01`` and its Rubin standard error are
reported.

All cells reuse the same parameter draws, Bernoulli uniforms and ``Z``
draws, so the ``(0, 0)`` cell reproduces the unadjusted analysis exactly.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .data import StudyData
from .errors import InvalidConfigError
from .estimands import Population, _population_rows
from .imputation import draw_parameters
from .outcome_models import ArmOutcomeFits, adverse_linear_predictor, death_linear_predictor
from .pooling import rubin_pool

DEFAULT_GRID = tuple(np.round(np.linspace(-1.0, 1.0, 21), 12))


@dataclass(frozen=True)
class SensitivitySpec:
    mu_z_control: float = 1.0
    delta_a_grid: tuple = DEFAULT_GRID
    delta_d_grid: tuple = DEFAULT_GRID
    # subtract the fitting arm's mean of Z from the offset (off by default)
    center_on_fit_arm: bool = False

    def __post_init__(self):
        for name in ("delta_a_grid", "delta_d_grid"):
            g = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if g.size == 0:
                raise InvalidConfigError(f"{name} is empty")
            if not np.all(np.isfinite(g)):
                raise InvalidConfigError(f"{name} has non-finite entries")
            object.__setattr__(self, name, tuple(float(v) for v in g))
        if not math.isfinite(self.mu_z_control):
            raise InvalidConfigError("mu_z_control must be finite")

    def z_mean(self, w) -> np.ndarray:
        return self.mu_z_control * (1.0 - np.asarray(w, dtype=float))


@dataclass(frozen=True, eq=False)
class SensitivityGrid:
    delta_a: np.ndarray
    delta_d: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    standardized: np.ndarray
    mu_z_control: float = 0.0
    metadata: dict = field(default_factory=dict)

    def cell(self, delta_a: float, delta_d: float) -> tuple[float, float, float]:
        i = int(np.argmin(np.abs(self.delta_a - delta_a)))
        j = int(np.argmin(np.abs(self.delta_d - delta_d)))
        return float(self.estimate[i, j]), float(self.se[i, j]), float(self.standardized[i, j])


class _ArmCache:
    """Per-arm quantities that do not depend on the grid cell."""

    def __init__(self, fits: ArmOutcomeFits, rows, draws_a, draws_d, seed, M, arm):
        self.arm = arm
        self.link_a = fits.adverse_fit.link
        self.link_d = fits.death_fit.link
        self.eta_a = adverse_linear_predictor(fits, rows, draws_a)
        self.eta_d0 = death_linear_predictor(fits, rows, 0.0, draws_d)
        self.eta_coef = draws_d[:, -1:]
        k = rows.shape[0]
        self.u_a = np.vstack([
            seeding.stream(seed, seeding.BERNOULLI, m, arm, seeding.ADVERSE).random(k)
            for m in range(M)
        ])
        self.u_d = np.vstack([
            seeding.stream(seed, seeding.BERNOULLI, m, arm, seeding.DEATH).random(k)
            for m in range(M)
        ])

    def impute(self, off_a, off_d):
        a = (self.u_a < self.link_a.inverse(self.eta_a + off_a)).astype(int)
        eta_d = self.eta_d0 + self.eta_coef * a + off_d
        d = (self.u_d < self.link_d.inverse(eta_d)).astype(int)
        return a, d


def _kappa_difference(g1, g0) -> np.ndarray:
    """Finite-sample ``kappa10 - kappa01`` per imputation (rows of ``g1``/``g0``)."""
    n = g1.shape[1]
    idx = (g1 - 1) * 4 + (g0 - 1)
    counts = np.stack([np.bincount(r, minlength=16) for r in idx]).reshape(-1, 4, 4)
    p = counts / n
    lower = np.tril(np.ones((4, 4)), -1).astype(bool)
    return p[:, lower].sum(axis=1) - p.transpose(0, 2, 1)[:, lower].sum(axis=1)


def run_sensitivity(
    fits0: ArmOutcomeFits,
    fits1: ArmOutcomeFits,
    data: StudyData,
    shared_design,
    spec: SensitivitySpec,
    M: int,
    seed: int,
    population: Population | str = Population.ALL,
) -> SensitivityGrid:
    """Evaluate the standardized relative treatment effect over the grid.

    Uses the same parameter and Bernoulli streams as
    :func:`compordinal.imputation.run_imputations`; ``Z`` for imputation
    ``m`` comes from stream ``(LATENT_Z, m)``.
    """
    if M < 2:
        raise InvalidConfigError("M must be at least 2")
    X = np.asarray(shared_design, dtype=float)
    w = data.w
    rows = _population_rows(population, w, data.n)
    draws = draw_parameters(fits0, fits1, M, seed)
    z_mean = spec.z_mean(w)
    Z = np.vstack([
        z_mean + seeding.stream(seed, seeding.LATENT_Z, m).standard_normal(data.n)
        for m in range(M)
    ])

    caches = {}
    for arm, fits in ((0, fits0), (1, fits1)):
        missing = w != arm
        caches[arm] = (missing, _ArmCache(
            fits, X[missing], draws.adverse[arm], draws.death[arm], seed, M, arm
        ))
    # Z for each arm's imputed units, optionally centred at the fitting arm's mean
    z_arm = {}
    for arm in (0, 1):
        missing = caches[arm][0]
        shift = spec.mu_z_control if (spec.center_on_fit_arm and arm == 0) else 0.0
        z_arm[arm] = Z[:, missing] - shift

    da = np.asarray(spec.delta_a_grid)
    dd = np.asarray(spec.delta_d_grid)
    est = np.empty((da.size, dd.size))
    se = np.empty_like(est)
    g_base = np.broadcast_to(1 + data.a + 2 * data.d, (M, data.n))
    for i, delta_a in enumerate(da):
        for j, delta_d in enumerate(dd):
            g = {0: g_base.copy(), 1: g_base.copy()}
            for arm in (0, 1):
                missing, cache = caches[arm]
                a, d = cache.impute(delta_a * z_arm[arm], delta_d * z_arm[arm])
                g[arm][:, missing] = 1 + a + 2 * d
            kd = _kappa_difference(g[1][:, rows], g[0][:, rows])
            pooled = rubin_pool(kd)
            est[i, j] = pooled.point
            se[i, j] = pooled.se
    with np.errstate(divide="ignore", invalid="ignore"):
        std = np.where(se > 0, est / np.where(se > 0, se, 1.0), np.nan)
    return SensitivityGrid(
        da, dd, est, se, std, spec.mu_z_control,
        {"M": M, "seed": seed, "population": Population(population).value,
         "center_on_fit_arm": spec.center_on_fit_arm},
    )


def export_heatmap_data(grid: SensitivityGrid, path, *, force: bool = True) -> str:
    """Write the grid in long format, row-major over ``(delta_a, delta_d)``."""
    from .cli_io import atomic_write_text, format_number

    lines = [["delta_a", "delta_d", "estimate", "se", "standardized"]]
    for i, a in enumerate(grid.delta_a):
        for j, d in enumerate(grid.delta_d):
            lines.append([
                format_number(a), format_number(d), format_number(grid.estimate[i, j]),
                format_number(grid.se[i, j]), format_number(grid.standardized[i, j]),
            ])
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    return atomic_write_text(os.fspath(path), buf.getvalue(), force=force)


def read_heatmap_data(path) -> SensitivityGrid:
    """Inverse of :func:`export_heatmap_data`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_d = len({r["delta_d"] for r in rows})
    n_a = len(rows) // n_d
    arr = {k: np.array([float(r[k]) for r in rows]).reshape(n_a, n_d)
           for k in ("estimate", "se", "standardized")}
    da = np.array([float(rows[i * n_d]["delta_a"]) for i in range(n_a)])
    dd = np.array([float(rows[j]["delta_d"]) for j in range(n_d)])
    return SensitivityGrid(da, dd, arr["estimate"], arr["se"], arr["standardized"])
