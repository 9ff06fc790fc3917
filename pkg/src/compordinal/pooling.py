"""Combining per-imputation estimates: Rubin's rules and percentile intervals."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InvalidConfigError, InvalidInputError

INFINITE_DF = math.inf


class PoolMethod(str, enum.Enum):
    RUBIN_T = "rubin_t"
    BARNARD_RUBIN_T = "barnard_rubin_t"
    PERCENTILE = "percentile"


@dataclass(frozen=True)
class PooledResult:
    point: float
    within_var: float
    between_var: float
    total_var: float
    df: float
    interval: tuple[float, float]
    method: PoolMethod
    m: int
    alpha: float = 0.05
    degenerate: bool = False

    @property
    def se(self) -> float:
        return math.sqrt(self.total_var) if self.total_var >= 0 else math.nan

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]


def rubin_df(total_var: float, between_var: float, m: int) -> float:
    """``(M - 1) * (T / ((1 + 1/M) B))**2``; infinite when ``B == 0``."""
    if between_var <= 0:
        return INFINITE_DF
    return (m - 1) * (total_var / ((1.0 + 1.0 / m) * between_var)) ** 2


def observed_df(total_var: float, between_var: float, m: int, nu_com: float) -> float:
    """Observed-data degrees of freedom for the small-sample adjustment."""
    gamma = (1.0 + 1.0 / m) * between_var / total_var if total_var > 0 else 0.0
    return (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - gamma)


def barnard_rubin_df(total_var: float, between_var: float, m: int, nu_com: float) -> float:
    nu_m = rubin_df(total_var, between_var, m)
    nu_obs = observed_df(total_var, between_var, m, nu_com)
    if nu_obs <= 0:
        return 0.0
    if math.isinf(nu_m):
        return nu_obs
    return 1.0 / (1.0 / nu_m + 1.0 / nu_obs)


def rubin_pool(
    estimates,
    variances=None,
    alpha: float = 0.05,
    nu_com: float | None = None,
) -> PooledResult:
    """Pool ``M`` completed-data estimates.

    ``variances`` are the within-imputation variances (zeros, the default,
    for finite-sample estimands).  Supplying ``nu_com`` switches the degrees
    of freedom to the Barnard-Rubin small-sample form.
    """
    q = np.asarray(estimates, dtype=float).reshape(-1)
    m = q.size
    if m < 2:
        raise InvalidConfigError("pooling needs at least M = 2 imputations")
    u = np.zeros(m) if variances is None else np.asarray(variances, dtype=float).reshape(-1)
    if u.size != m:
        raise InvalidInputError("estimates and variances must have equal length")
    if np.any(u < 0):
        raise InvalidInputError("within-imputation variances must be non-negative")
    if not (0 < alpha < 1):
        raise InvalidInputError("alpha must lie in (0, 1)")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("estimates must be finite")

    point = float(np.mean(q))
    u_bar = float(np.mean(u))
    b = float(np.var(q, ddof=1))
    if b < 1e-30 * max(1.0, point * point):
        b = 0.0
    t = u_bar + (1.0 + 1.0 / m) * b
    if nu_com is None:
        df = rubin_df(t, b, m)
        method = PoolMethod.RUBIN_T
    else:
        df = barnard_rubin_df(t, b, m, float(nu_com))
        method = PoolMethod.BARNARD_RUBIN_T

    if t <= 0:
        return PooledResult(point, u_bar, b, t, df, (point, point), method, m, alpha, True)
    if math.isinf(df):
        crit = stats.norm.ppf(1.0 - alpha / 2.0)
    elif df <= 0:
        crit = math.inf
    else:
        crit = stats.t.ppf(1.0 - alpha / 2.0, df)
    half = crit * math.sqrt(t)
    return PooledResult(point, u_bar, b, t, df, (point - half, point + half), method, m, alpha)


def percentile_interval(draws, alpha: float = 0.05) -> tuple[float, float]:
    """Empirical ``alpha/2`` and ``1 - alpha/2`` quantiles (linear interpolation)."""
    x = np.asarray(draws, dtype=float).reshape(-1)
    if x.size < 2:
        raise InvalidInputError("percentile interval needs at least 2 draws")
    if x.size < math.ceil(2.0 / alpha):
        warnings.warn(
            f"{x.size} draws are too few for a stable {100 * (1 - alpha):g}% percentile interval",
            stacklevel=2,
        )
    lo, hi = np.quantile(x, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def percentile_pool(estimates, alpha: float = 0.05) -> PooledResult:
    """Rubin point/variance summaries with a percentile interval."""
    base = rubin_pool(estimates, None, alpha)
    if base.between_var == 0.0:
        # constant draws: the mean may differ from them by rounding
        lo = hi = base.point
    else:
        lo, hi = percentile_interval(estimates, alpha)
    return PooledResult(
        base.point, base.within_var, base.between_var, base.total_var,
        base.df, (lo, hi), PoolMethod.PERCENTILE, base.m, alpha, base.degenerate,
    )


def pool(estimates, variances=None, alpha: float = 0.05, nu_com: float | None = None,
         method: PoolMethod | str | None = None, finite_sample: bool = True) -> PooledResult:
    """Pool with the default method choice.

    Percentile intervals for finite-sample estimands with ``M >= 100``,
    t-based intervals otherwise.
    """
    q = np.asarray(estimates, dtype=float)
    if method is None:
        if finite_sample and q.size >= 100 and nu_com is None:
            method = PoolMethod.PERCENTILE
        elif nu_com is not None:
            method = PoolMethod.BARNARD_RUBIN_T
        else:
            method = PoolMethod.RUBIN_T
    method = PoolMethod(method)
    if method is PoolMethod.PERCENTILE:
        return percentile_pool(q, alpha)
    if method is PoolMethod.BARNARD_RUBIN_T and nu_com is None:
        raise InvalidConfigError("Barnard-Rubin pooling needs nu_com")
    return rubin_pool(q, variances, alpha, nu_com if method is PoolMethod.BARNARD_RUBIN_T else None)
