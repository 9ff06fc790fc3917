"""Causal estimands of the adverse-event/death pair and the ordinal outcome ``G``.

Every estimand is a function of the joint distribution
``p_kl = Pr(G(1) = k, G(0) = l)``.  Finite-sample estimands build it from
completed unit-level pairs; super-population estimands average per-unit
products of arm cell probabilities (the potential outcomes are
conditionally independent given covariates).

Undefined quantities (SACE with no always-survivors, empty rows of the
conditional matrices, a ratio with a zero denominator) are ``nan``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .outcome_models import ArmOutcomeFits, ParameterDraws, arm_cell_probs

UNDEFINED = float("nan")
LEVELS = (1, 2, 3, 4)
ADVERSE_LEVELS = np.array([0, 1, 0, 1], dtype=float)
DEATH_LEVELS = np.array([0, 0, 1, 1], dtype=float)
SURVIVE_LEVELS = 1.0 - DEATH_LEVELS


class Population(str, enum.Enum):
    ALL = "all"
    TREATED = "treated"


@dataclass(frozen=True)
class JointOrdinalDistribution:
    p_kl: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_kl, dtype=float)
        if p.shape != (4, 4):
            raise InvalidInputError("joint distribution must be 4 x 4")
        if np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidInputError("joint distribution must be non-negative and sum to 1")
        object.__setattr__(self, "p_kl", p)

    @property
    def marginal_active(self) -> np.ndarray:
        return self.p_kl.sum(axis=1)

    @property
    def marginal_control(self) -> np.ndarray:
        return self.p_kl.sum(axis=0)


@dataclass(frozen=True, eq=False)
class EstimandSet:
    """All estimands derived from one joint distribution.

    ``p_k_w[w, k-1] = Pr(G(w) = k)``; ``pi_w[w]`` is the matrix with entries
    ``Pr(G(1-w) = l | G(w) = k)``; per-arm arrays are indexed by arm.
    """

    joint: np.ndarray
    p_k_w: np.ndarray
    adverse_w: np.ndarray
    death_w: np.ndarray
    composite_w: np.ndarray
    sace_w: np.ndarray
    itt_adverse: float
    itt_death: float
    itt_composite: float
    sace: float
    delta_j: np.ndarray
    tau10: float
    kappa10: float
    tau01: float
    kappa01: float
    u10: float
    u01: float
    kappa_diff: float
    kappa_ratio: float
    pi_w: np.ndarray

    def as_dict(self) -> dict[str, float]:
        """Flat ``name -> value`` mapping in a fixed, documented order."""
        out: dict[str, float] = {}
        for name, per_arm, diff in (
            ("adverse", self.adverse_w, self.itt_adverse),
            ("death", self.death_w, self.itt_death),
            ("composite", self.composite_w, self.itt_composite),
            ("sace", self.sace_w, self.sace),
        ):
            key = name if name == "sace" else f"itt_{name}"
            out[key] = diff
            out[f"{name}_1"] = float(per_arm[1])
            out[f"{name}_0"] = float(per_arm[0])
        for k in LEVELS:
            out[f"p{k}_diff"] = float(self.p_k_w[1, k - 1] - self.p_k_w[0, k - 1])
            out[f"p{k}_1"] = float(self.p_k_w[1, k - 1])
            out[f"p{k}_0"] = float(self.p_k_w[0, k - 1])
        for j in range(3):
            out[f"delta_{j + 1}"] = float(self.delta_j[j])
        for name in ("tau10", "kappa10", "tau01", "kappa01", "u10", "u01",
                     "kappa_diff", "kappa_ratio"):
            out[name] = float(getattr(self, name))
        for w in (1, 0):
            for k in LEVELS:
                for l in LEVELS:
                    out[f"pi{w}_{k}{l}"] = float(self.pi_w[w, k - 1, l - 1])
        return out


def _safe_ratio(num: float, den: float, tol: float = 1e-12) -> float:
    return num / den if den > tol else UNDEFINED


def conditional_matrices(p_kl) -> np.ndarray:
    """``Pi(1)`` and ``Pi(0)``; rows with zero marginal mass are ``nan``."""
    p = np.asarray(p_kl, dtype=float)
    out = np.full((2, 4, 4), np.nan)
    for w, mat in ((1, p), (0, p.T)):
        mass = mat.sum(axis=1)
        ok = mass > 0
        out[w, ok] = mat[ok] / mass[ok, None]
    return out


def estimands_from_joint(p_kl) -> EstimandSet:
    """Derive the full estimand set from a 4 x 4 joint distribution."""
    p = JointOrdinalDistribution(p_kl).p_kl
    p1 = p.sum(axis=1)
    p0 = p.sum(axis=0)
    p_k_w = np.vstack([p0, p1])
    adverse = p_k_w @ ADVERSE_LEVELS
    death = p_k_w @ DEATH_LEVELS
    composite = 1.0 - p_k_w[:, 0]

    # always-survivors: both G(1) and G(0) in {1, 2}
    surv = p[:2, :2]
    denom = float(surv.sum())
    sace_1 = _safe_ratio(float(surv[1, :].sum()), denom)
    sace_0 = _safe_ratio(float(surv[:, 1].sum()), denom)

    upper = np.tril(np.ones((4, 4)), -1).astype(bool)  # k > l
    diag = float(np.trace(p))
    kappa10 = float(p[upper].sum())
    kappa01 = float(p.T[upper].sum())
    tau10 = kappa10 + diag
    tau01 = kappa01 + diag
    cum1 = np.cumsum(p1)
    cum0 = np.cumsum(p0)
    return EstimandSet(
        joint=p,
        p_k_w=p_k_w,
        adverse_w=adverse,
        death_w=death,
        composite_w=composite,
        sace_w=np.array([sace_0, sace_1]),
        itt_adverse=float(adverse[1] - adverse[0]),
        itt_death=float(death[1] - death[0]),
        itt_composite=float(composite[1] - composite[0]),
        sace=sace_1 - sace_0,
        delta_j=(cum1 - cum0)[:3],
        tau10=tau10,
        kappa10=kappa10,
        tau01=tau01,
        kappa01=kappa01,
        u10=0.5 * (kappa10 + tau10),
        u01=0.5 * (kappa01 + tau01),
        kappa_diff=kappa10 - kappa01,
        kappa_ratio=_safe_ratio(kappa10, kappa01, 0.0),
        pi_w=conditional_matrices(p),
    )


ESTIMAND_NAMES = tuple(estimands_from_joint(np.full((4, 4), 1 / 16)).as_dict())


def compose_ordinal(a, d):
    """Composite level: (0,0)->1, (1,0)->2, (0,1)->3, (1,1)->4 (vectorized)."""
    a = np.asarray(a)
    d = np.asarray(d)
    if not (np.isin(a, (0, 1)).all() and np.isin(d, (0, 1)).all()):
        raise InvalidInputError("adverse and death indicators must be binary")
    g = 1 + a.astype(int) + 2 * d.astype(int)
    return int(g) if g.ndim == 0 else g


def empirical_joint(g1, g0, weights=None) -> np.ndarray:
    """Joint frequency table of paired levels ``(G(1), G(0))``."""
    g1 = np.asarray(g1, dtype=int)
    g0 = np.asarray(g0, dtype=int)
    w = np.ones(g1.size) if weights is None else np.asarray(weights, dtype=float)
    table = np.zeros((4, 4))
    np.add.at(table, (g1 - 1, g0 - 1), w)
    return table / table.sum()


def finite_sample_estimands(ds, population: Population | str = Population.ALL,
                            treatment=None) -> EstimandSet:
    """Estimands of one completed dataset.

    ``ds`` needs ``a0, a1, d0, d1`` arrays; with ``population='treated'``
    only units with ``treatment == 1`` (default ``ds.w``) contribute.
    """
    rows = _population_rows(population, treatment if treatment is not None
                            else getattr(ds, "w", None), len(ds.a0))
    g1 = compose_ordinal(np.asarray(ds.a1)[rows], np.asarray(ds.d1)[rows])
    g0 = compose_ordinal(np.asarray(ds.a0)[rows], np.asarray(ds.d0)[rows])
    return estimands_from_joint(empirical_joint(g1, g0))


def _population_rows(population, treatment, n) -> np.ndarray:
    population = Population(population)
    if population is Population.ALL:
        return np.ones(n, dtype=bool)
    if treatment is None:
        raise InvalidConfigError("population='treated' needs the treatment vector")
    rows = np.asarray(treatment).astype(int) == 1
    if not rows.any():
        raise InvalidConfigError("population='treated' but no treated units")
    return rows


def unit_cells(fits0: ArmOutcomeFits, fits1: ArmOutcomeFits, draws: ParameterDraws,
               design_rows) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw, per-unit cell probabilities under arm 0 and arm 1."""
    c0 = arm_cell_probs(fits0, design_rows, draws.adverse[0], draws.death[0])
    c1 = arm_cell_probs(fits1, design_rows, draws.adverse[1], draws.death[1])
    return c0, c1


def superpop_joint(c0, c1) -> np.ndarray:
    """``draws x 4 x 4`` joint tables averaged over units."""
    n = c0.shape[-2]
    return np.einsum("...ik,...il->...kl", c1, c0) / n


def superpop_estimands(
    fits0: ArmOutcomeFits,
    fits1: ArmOutcomeFits,
    draws: ParameterDraws,
    shared_design,
    population: Population | str = Population.ALL,
    treatment=None,
) -> list[EstimandSet]:
    """One estimand set per parameter draw, averaged over the covariate rows."""
    X = np.asarray(shared_design, dtype=float)
    rows = _population_rows(population, treatment, X.shape[0])
    c0, c1 = unit_cells(fits0, fits1, draws, X[rows])
    return [estimands_from_joint(p) for p in superpop_joint(c0, c1)]


def sace_superpop(
    fits0: ArmOutcomeFits,
    fits1: ArmOutcomeFits,
    draws: ParameterDraws,
    shared_design,
    population: Population | str = Population.ALL,
    treatment=None,
) -> np.ndarray:
    """SACE per draw as a ratio of unit averages.

    Survival probability per arm is ``q_w = cell_1 + cell_2``; the joint
    always-survivor probability is ``q_1 q_0``.
    """
    X = np.asarray(shared_design, dtype=float)
    rows = _population_rows(population, treatment, X.shape[0])
    c0, c1 = unit_cells(fits0, fits1, draws, X[rows])
    q0 = c0[..., 0] + c0[..., 1]
    q1 = c1[..., 0] + c1[..., 1]
    num = (c1[..., 1] * q0 - c0[..., 1] * q1).mean(axis=-1)
    den = (q1 * q0).mean(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den < 1e-12, np.nan, num / np.where(den < 1e-12, 1.0, den))
