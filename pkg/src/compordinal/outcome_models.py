"""Per-arm conditional models for the adverse event and for death.

The adverse-event model is a logistic regression on the propensity spline
columns and the linear covariates ``X*``; the death model adds the arm's
own adverse-event indicator with coefficient ``eta``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .design import OutcomeDesign
from .errors import InvalidInputError
from .glm_core import LinkFunction, ModelFit, PriorSpec, fit_map


class PriorMode(str, enum.Enum):
    """``SIMULATION``: Cauchy(0, 2.5) on every coefficient.
    ``APPLICATION``: N(0, 8^2) on spline and eta, ridge on ``X*``."""

    SIMULATION = "simulation"
    APPLICATION = "application"


@dataclass(frozen=True)
class OutcomePriors:
    spline: PriorSpec
    linear: PriorSpec
    eta: PriorSpec

    @classmethod
    def simulation(cls, scale: float = 2.5) -> "OutcomePriors":
        c = PriorSpec.cauchy(scale)
        return cls(c, c, c)

    @classmethod
    def application(
        cls,
        shrinkage_lambda: float = 1.0,
        ridge_scale: float = 3.0,
        spline_sd: float = 8.0,
        lasso: bool = False,
    ) -> "OutcomePriors":
        wide = PriorSpec.normal(spline_sd)
        if lasso:
            linear = PriorSpec.lasso(ridge_scale, shrinkage_lambda)
        else:
            linear = PriorSpec.ridge(ridge_scale, shrinkage_lambda)
        return cls(wide, linear, wide)

    @classmethod
    def for_mode(cls, mode: PriorMode | str, **kwargs) -> "OutcomePriors":
        mode = PriorMode(mode)
        if mode is PriorMode.SIMULATION:
            return cls.simulation(**kwargs)
        return cls.application(**kwargs)

    @classmethod
    def flat(cls) -> "OutcomePriors":
        f = PriorSpec.flat()
        return cls(f, f, f)

    def column_priors(self, n_spline: int, n_linear: int, with_eta: bool):
        out = [self.spline] * n_spline + [self.linear] * n_linear
        if with_eta:
            out.append(self.eta)
        return out

    def to_dict(self) -> dict:
        return {
            "spline": self.spline.to_dict(),
            "linear": self.linear.to_dict(),
            "eta": self.eta.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class ArmOutcomeFits:
    """Fitted adverse-event and death models for one arm.

    ``adverse_fit`` coefficients: ``[intercept, spline..., X*...]``;
    ``death_fit`` appends ``eta`` as its final coefficient.
    """

    arm: int
    adverse_fit: ModelFit
    death_fit: ModelFit
    n_spline: int
    n_linear: int

    @property
    def eta(self) -> float:
        return float(self.death_fit.coefficients[-1])

    @property
    def n_shared(self) -> int:
        return self.n_spline + self.n_linear


def fit_arm_models(
    arm: int,
    shared_design,
    adverse,
    death,
    priors: OutcomePriors = OutcomePriors.simulation(),
    *,
    n_spline: int | None = None,
    link: LinkFunction = LinkFunction(),
) -> ArmOutcomeFits:
    """Fit both models on one arm's units.

    ``shared_design`` holds that arm's rows of ``[spline, X*]``; the first
    ``n_spline`` columns are spline terms (default: every column).
    """
    S = np.asarray(shared_design, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    a = np.asarray(adverse, dtype=float).reshape(-1)
    d = np.asarray(death, dtype=float).reshape(-1)
    if S.shape[0] == 0:
        raise InvalidInputError(f"arm {arm} has no units")
    if a.size != S.shape[0] or d.size != S.shape[0]:
        raise InvalidInputError("adverse/death length must match design rows")
    n_spline = S.shape[1] if n_spline is None else int(n_spline)
    n_linear = S.shape[1] - n_spline
    adverse_fit = fit_map(S, a, priors.column_priors(n_spline, n_linear, False), link)
    death_design = np.column_stack([S, a])
    death_fit = fit_map(
        death_design, d, priors.column_priors(n_spline, n_linear, True), link
    )
    return ArmOutcomeFits(int(arm), adverse_fit, death_fit, n_spline, n_linear)


def fit_both_arms(
    design: OutcomeDesign,
    treatment,
    adverse,
    death,
    priors: OutcomePriors = OutcomePriors.simulation(),
) -> tuple[ArmOutcomeFits, ArmOutcomeFits]:
    """Fit arm 0 and arm 1 models from the shared design (returned in arm order)."""
    w = np.asarray(treatment).astype(int)
    shared = design.shared
    a = np.asarray(adverse, dtype=float)
    d = np.asarray(death, dtype=float)
    fits = []
    for arm in (0, 1):
        rows = w == arm
        fits.append(
            fit_arm_models(
                arm, shared[rows], a[rows], d[rows], priors, n_spline=design.n_spline
            )
        )
    return fits[0], fits[1]


def _rows(fit: ArmOutcomeFits, design_rows) -> np.ndarray:
    X = np.asarray(design_rows, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != fit.n_shared:
        raise InvalidInputError(
            f"design row has {X.shape[1]} columns, model expects {fit.n_shared}"
        )
    return X


def adverse_linear_predictor(fit: ArmOutcomeFits, design_rows, coefficients=None):
    return fit.adverse_fit.linear_predictor(_rows(fit, design_rows), coefficients)


def death_linear_predictor(fit: ArmOutcomeFits, design_rows, a, coefficients=None):
    """Linear predictor of death given the arm's adverse indicator ``a``.

    ``coefficients`` may be a matrix of draws; ``a`` broadcasts against the
    ``draws x n`` result.
    """
    X = _rows(fit, design_rows)
    coef = fit.death_fit.coefficients if coefficients is None else coefficients
    coef = np.asarray(coef, dtype=float)
    base = fit.death_fit.linear_predictor(
        np.column_stack([X, np.zeros(X.shape[0])]), coef
    )
    return base + coef[..., -1:] * np.asarray(a, dtype=float)


def predict_adverse(fit: ArmOutcomeFits, design_rows, coefficients=None):
    """``Pr(A(w) = 1 | x)`` for one row (scalar) or many rows (vector)."""
    out = fit.adverse_fit.link.inverse(
        adverse_linear_predictor(fit, design_rows, coefficients)
    )
    return float(out[0]) if np.ndim(design_rows) == 1 and out.ndim == 1 else out


def predict_death(fit: ArmOutcomeFits, design_rows, a, coefficients=None):
    """``Pr(D(w) = 1 | x, A(w) = a)``."""
    out = fit.death_fit.link.inverse(
        death_linear_predictor(fit, design_rows, a, coefficients)
    )
    return float(out[0]) if np.ndim(design_rows) == 1 and out.ndim == 1 else out


@dataclass(frozen=True)
class CellProbabilities:
    p: np.ndarray


def cell_probs(p_adverse, p_death0, p_death1) -> np.ndarray:
    """Vectorized ordinal cells; last axis indexes levels 1..4."""
    pa = np.asarray(p_adverse, dtype=float)
    d0 = np.asarray(p_death0, dtype=float)
    d1 = np.asarray(p_death1, dtype=float)
    return np.stack(
        [(1.0 - pa) * (1.0 - d0), pa * (1.0 - d1), (1.0 - pa) * d0, pa * d1], axis=-1
    )


def ordinal_cell_probs(pA: float, pD_given_a0: float, pD_given_a1: float) -> CellProbabilities:
    """Probabilities of G = 1..4 from the adverse and conditional death probabilities.

    ``G = 1`` no event, ``2`` adverse event only, ``3`` death only, ``4`` both.
    """
    for name, v in (("pA", pA), ("pD_given_a0", pD_given_a0), ("pD_given_a1", pD_given_a1)):
        if not (0.0 <= v <= 1.0):
            raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")
    return CellProbabilities(cell_probs(pA, pD_given_a0, pD_given_a1))


@dataclass(frozen=True, eq=False)
class ParameterDraws:
    """Aligned posterior draws for the four models; row ``m`` is imputation ``m``.

    ``adverse[w]`` and ``death[w]`` are ``M x p`` coefficient matrices.
    """

    adverse: tuple[np.ndarray, np.ndarray]
    death: tuple[np.ndarray, np.ndarray]

    @property
    def count(self) -> int:
        return self.adverse[0].shape[0]

    @classmethod
    def point(cls, fits0: ArmOutcomeFits, fits1: ArmOutcomeFits) -> "ParameterDraws":
        """Single 'draw' equal to the MAP (or injected) coefficients."""
        return cls(
            (fits0.adverse_fit.coefficients[None, :], fits1.adverse_fit.coefficients[None, :]),
            (fits0.death_fit.coefficients[None, :], fits1.death_fit.coefficients[None, :]),
        )

    def row(self, m: int) -> "ParameterDraws":
        return ParameterDraws(
            tuple(a[m : m + 1] for a in self.adverse),
            tuple(d[m : m + 1] for d in self.death),
        )


def arm_cell_probs(fit: ArmOutcomeFits, design_rows, adverse_coef=None, death_coef=None):
    """Per-unit ordinal cells under one arm (``draws x n x 4`` or ``n x 4``)."""
    pa = predict_adverse(fit, np.atleast_2d(design_rows), adverse_coef)
    pd0 = predict_death(fit, np.atleast_2d(design_rows), 0.0, death_coef)
    pd1 = predict_death(fit, np.atleast_2d(design_rows), 1.0, death_coef)
    return cell_probs(pa, pd0, pd1)


def generator_fits(
    phi_a, xi_a, phi_d, xi_d, zeta, link: LinkFunction = LinkFunction()
) -> tuple[ArmOutcomeFits, ArmOutcomeFits]:
    """Wrap known data-generating coefficients as per-arm 'fits' on raw covariates.

    Each argument is indexed by arm (``[w=0, w=1]``).  The returned fits have
    zero covariance and no spline columns, so they evaluate the generating
    probabilities exactly.
    """
    out = []
    for w in (0, 1):
        xa = np.asarray(xi_a[w], dtype=float)
        xd = np.asarray(xi_d[w], dtype=float)
        if xa.size != xd.size:
            raise InvalidInputError("xi_a and xi_d must have equal length")
        p = xa.size
        a_coef = np.concatenate([[phi_a[w]], xa])
        d_coef = np.concatenate([[phi_d[w]], xd, [zeta[w]]])
        a_fit = ModelFit(a_coef, np.zeros((p + 1, p + 1)), link)
        d_fit = ModelFit(d_coef, np.zeros((p + 2, p + 2)), link)
        out.append(ArmOutcomeFits(w, a_fit, d_fit, 0, p))
    return out[0], out[1]
