"""Multiple imputation of the missing potential outcomes.

For imputation ``m`` the parameters of all four models are drawn from their
Laplace posteriors.  Units observed under arm 1 get ``A(0)`` drawn first and
then ``D(0)`` given that draw, using arm-0 parameters; units observed under
arm 0 are handled symmetrically.  Observed values are copied unchanged.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import seeding
from .data import StudyData
from .errors import InvalidConfigError, InvalidInputError
from .estimands import compose_ordinal
from .glm_core import covariance_factor
from .outcome_models import (
    ArmOutcomeFits,
    ParameterDraws,
    adverse_linear_predictor,
    death_linear_predictor,
)

logger = logging.getLogger(__name__)

_MODELS = ((seeding.ADVERSE, "adverse_fit"), (seeding.DEATH, "death_fit"))


@dataclass(frozen=True, eq=False)
class CompletedDataset:
    """Both potential outcomes for every unit; ``w`` marks the observed arm."""

    m: int
    a0: np.ndarray
    a1: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    w: np.ndarray

    @property
    def observed_mask(self) -> np.ndarray:
        """``True`` where the arm-1 pair is the observed one."""
        return self.w == 1

    @property
    def g0(self) -> np.ndarray:
        return compose_ordinal(self.a0, self.d0)

    @property
    def g1(self) -> np.ndarray:
        return compose_ordinal(self.a1, self.d1)


@dataclass(frozen=True, eq=False)
class ImputationRun:
    M: int
    seed: int
    draws: ParameterDraws
    datasets: tuple[CompletedDataset, ...]


def draw_parameters(
    fits0: ArmOutcomeFits, fits1: ArmOutcomeFits, M: int, seed: int
) -> ParameterDraws:
    """``M`` aligned Laplace-posterior draws for the four models.

    Row ``m`` of model ``(arm, model)`` comes from stream
    ``(PARAMETERS, m, arm, model)``.
    """
    if M < 1:
        raise InvalidConfigError("need at least one draw")
    out = {}
    for arm, fits in ((0, fits0), (1, fits1)):
        for tag, attr in _MODELS:
            fit = getattr(fits, attr)
            factor = covariance_factor(fit.covariance)
            p = fit.n_coefficients
            z = np.vstack([
                seeding.stream(seed, seeding.PARAMETERS, m, arm, tag).standard_normal(p)
                for m in range(M)
            ])
            out[(arm, tag)] = fit.coefficients + z @ factor.T
    return ParameterDraws(
        (out[(0, seeding.ADVERSE)], out[(1, seeding.ADVERSE)]),
        (out[(0, seeding.DEATH)], out[(1, seeding.DEATH)]),
    )


def _impute_arm(
    fits: ArmOutcomeFits,
    rows,
    adverse_coef,
    death_coef,
    seed: int,
    m: int,
    arm: int,
    adverse_offset=None,
    death_offset=None,
):
    link_a = fits.adverse_fit.link
    link_d = fits.death_fit.link
    eta_a = adverse_linear_predictor(fits, rows, adverse_coef)
    if adverse_offset is not None:
        eta_a = eta_a + adverse_offset
    u_a = seeding.stream(seed, seeding.BERNOULLI, m, arm, seeding.ADVERSE).random(rows.shape[0])
    a = (u_a < link_a.inverse(eta_a)).astype(int)
    eta_d = death_linear_predictor(fits, rows, a, death_coef)
    if death_offset is not None:
        eta_d = eta_d + death_offset
    u_d = seeding.stream(seed, seeding.BERNOULLI, m, arm, seeding.DEATH).random(rows.shape[0])
    d = (u_d < link_d.inverse(eta_d)).astype(int)
    return a, d


def impute_once(
    fits0: ArmOutcomeFits,
    fits1: ArmOutcomeFits,
    data: StudyData,
    shared_design,
    rng_seed: int,
    m: int = 0,
    draws: ParameterDraws | None = None,
    adverse_offset=None,
    death_offset=None,
) -> CompletedDataset:
    """One completed dataset.

    ``draws`` (one row) overrides the parameter draw for this ``m``.
    ``adverse_offset`` / ``death_offset`` (length ``n``) are added to the
    linear predictors of imputed outcomes only.
    """
    X = np.asarray(shared_design, dtype=float)
    if X.shape[0] != data.n:
        raise InvalidInputError("shared design rows must match the data")
    if draws is None:
        draws = draw_parameters(fits0, fits1, m + 1, rng_seed).row(m)
    a = {0: data.a.copy(), 1: data.a.copy()}
    d = {0: data.d.copy(), 1: data.d.copy()}
    for arm, fits in ((0, fits0), (1, fits1)):
        missing = data.w != arm
        if not missing.any():
            continue
        a_off = None if adverse_offset is None else np.asarray(adverse_offset)[missing]
        d_off = None if death_offset is None else np.asarray(death_offset)[missing]
        a_mis, d_mis = _impute_arm(
            fits, X[missing], draws.adverse[arm][0], draws.death[arm][0],
            rng_seed, m, arm, a_off, d_off,
        )
        a[arm][missing] = a_mis
        d[arm][missing] = d_mis
    return CompletedDataset(m, a[0], a[1], d[0], d[1], data.w.copy())


def run_imputations(
    fits0: ArmOutcomeFits,
    fits1: ArmOutcomeFits,
    data: StudyData,
    shared_design,
    M: int,
    seed: int,
    offsets=None,
) -> ImputationRun:
    """``M`` independent completed datasets.

    ``offsets``, when given, is a callable ``m -> (adverse_offset,
    death_offset)`` used by the sensitivity analysis.
    """
    if M < 2:
        raise InvalidConfigError("M must be at least 2 so that between-imputation variance exists")
    draws = draw_parameters(fits0, fits1, M, seed)
    datasets = []
    for m in range(M):
        a_off, d_off = offsets(m) if offsets is not None else (None, None)
        datasets.append(
            impute_once(fits0, fits1, data, shared_design, seed, m, draws.row(m), a_off, d_off)
        )
    return ImputationRun(M, seed, draws, tuple(datasets))


@dataclass(frozen=True, eq=False)
class PosteriorPredictiveCheck:
    arm: int
    replicated: np.ndarray  # draws x 4 counts of G = 1..4
    observed: np.ndarray
    tail_probability: np.ndarray
    few_draws: bool

    def central_interval(self, level: float = 0.95) -> np.ndarray:
        q = (1.0 - level) / 2.0
        return np.quantile(self.replicated, [q, 1.0 - q], axis=0)


def posterior_predictive_check(
    fits: ArmOutcomeFits,
    data: StudyData,
    shared_design,
    draws: int = 1000,
    seed: int = 0,
) -> PosteriorPredictiveCheck:
    """Replicate the checked arm's observed outcomes from the fitted models.

    Each replicate draws fresh parameters, then ``A`` and ``D`` given ``A``
    for every unit observed under ``fits.arm``, and tabulates the ordinal
    levels.  The tail probability per level is
    ``min(1, 2 * min(P(rep >= obs), P(rep <= obs)))``.
    """
    if draws < 100:
        warnings.warn("posterior predictive check with fewer than 100 draws", stacklevel=2)
    arm = fits.arm
    rows = data.w == arm
    X = np.asarray(shared_design, dtype=float)[rows]
    rng = seeding.stream(seed, seeding.PPC, arm)
    coef = {}
    for tag, attr in _MODELS:
        fit = getattr(fits, attr)
        factor = covariance_factor(fit.covariance)
        coef[tag] = fit.coefficients + rng.standard_normal((draws, fit.n_coefficients)) @ factor.T
    pa = fits.adverse_fit.link.inverse(adverse_linear_predictor(fits, X, coef[seeding.ADVERSE]))
    a = (rng.random(pa.shape) < pa).astype(int)
    pd = fits.death_fit.link.inverse(death_linear_predictor(fits, X, a, coef[seeding.DEATH]))
    d = (rng.random(pd.shape) < pd).astype(int)
    g = 1 + a + 2 * d
    replicated = np.stack([(g == k).sum(axis=1) for k in (1, 2, 3, 4)], axis=1)
    g_obs = compose_ordinal(data.a[rows], data.d[rows])
    observed = np.array([(g_obs == k).sum() for k in (1, 2, 3, 4)])
    upper = (replicated >= observed).mean(axis=0)
    lower = (replicated <= observed).mean(axis=0)
    tail = np.minimum(1.0, 2.0 * np.minimum(upper, lower))
    return PosteriorPredictiveCheck(arm, replicated, observed, tail, draws < 100)
