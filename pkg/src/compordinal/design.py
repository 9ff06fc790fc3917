"""Design stage: propensity scores, subclasses and the propensity spline basis."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .errors import InfeasibleDesignError, InvalidDesignError, InvalidInputError
from .glm_core import LinkFunction, ModelFit, PriorSpec, fit_map

logger = logging.getLogger(__name__)

SCORE_CLIP = 1e-12
MIN_PER_ARM = 3


@dataclass(frozen=True, eq=False)
class PropensityFit:
    model: ModelFit
    scores: np.ndarray
    logit_scores: np.ndarray


def _as_treatment(treatment, n=None) -> np.ndarray:
    w = np.asarray(treatment).reshape(-1)
    if n is not None and w.size != n:
        raise InvalidInputError(f"treatment has {w.size} entries, expected {n}")
    if not np.all((w == 0) | (w == 1)):
        raise InvalidInputError("treatment must be binary 0/1")
    return w.astype(int)


def estimate_propensity(
    covariates,
    treatment,
    prior: PriorSpec = PriorSpec(),
    link: LinkFunction = LinkFunction(),
) -> PropensityFit:
    """Logistic MAP fit of treatment on covariates.

    Scores are clipped to ``[1e-12, 1 - 1e-12]`` before taking the logit.
    """
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = _as_treatment(treatment, X.shape[0])
    if w.min() == w.max():
        raise InvalidDesignError("both treatment arms must be non-empty")
    model = fit_map(X, w, prior, link)
    scores = np.clip(model.predict(X), SCORE_CLIP, 1.0 - SCORE_CLIP)
    return PropensityFit(model, scores, logit(scores))


@dataclass(frozen=True, eq=False)
class SubclassAssignment:
    k_final: int
    labels: np.ndarray
    boundaries: np.ndarray

    def counts(self, treatment) -> np.ndarray:
        """``k_final x 2`` table of (control, treated) counts per subclass."""
        w = np.asarray(treatment).astype(int)
        out = np.zeros((self.k_final, 2), dtype=int)
        np.add.at(out, (self.labels - 1, w), 1)
        return out


def quantile_labels(values, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-probability bins (linear-interpolation quantiles), labels from 1."""
    cuts = np.quantile(values, np.arange(1, k) / k) if k > 1 else np.empty(0)
    labels = np.searchsorted(cuts, values, side="right") + 1
    return labels, cuts


def subclassify(
    scores, treatment, k_init: int = 6, min_per_arm: int = MIN_PER_ARM
) -> SubclassAssignment:
    """Quantile subclasses with the decrement rule.

    Starting from ``k_init`` equal-probability bins, the number of bins is
    reduced until every bin holds at least ``min_per_arm`` units from each
    arm.  The largest feasible ``k`` is returned.
    """
    if k_init < 1:
        raise InvalidInputError("k_init must be at least 1")
    scores = np.asarray(scores, dtype=float).reshape(-1)
    w = _as_treatment(treatment, scores.size)
    n_treated = int(w.sum())
    if min(n_treated, w.size - n_treated) < min_per_arm:
        raise InfeasibleDesignError(
            f"each arm needs at least {min_per_arm} units "
            f"(treated={n_treated}, control={w.size - n_treated})"
        )
    for k in range(k_init, 0, -1):
        labels, cuts = quantile_labels(scores, k)
        treated = np.bincount(labels - 1, weights=w, minlength=k)
        total = np.bincount(labels - 1, minlength=k)
        if treated.min() >= min_per_arm and (total - treated).min() >= min_per_arm:
            if k < k_init:
                logger.info("subclasses decremented from %d to %d", k_init, k)
            return SubclassAssignment(k, labels, cuts)
    raise AssertionError("k = 1 is always feasible")  # pragma: no cover


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Natural cubic spline basis without an intercept column.

    The first column is the logit score itself; the remaining columns are
    the natural-spline curvature functions

        N_k(x) = d_k(u) - d_{K-2}(u),
        d_k(u) = ((u - t_k)^3_+ - (u - t_{K-1})^3_+) / (t_{K-1} - t_k),

    over all ``K`` knots (boundary knots included) with ``u`` the position
    rescaled so the boundary knots map to 0 and 1.  Every column is linear
    outside the boundary knots.  Keeping the linear trend in a single column
    means a shrinkage prior on the other columns pulls the fit towards a
    straight line rather than towards a constant.
    """

    internal_knots: np.ndarray
    boundary_knots: tuple[float, float]

    @property
    def basis_dim(self) -> int:
        return self.internal_knots.size + 1

    @property
    def knots(self) -> np.ndarray:
        lo, hi = self.boundary_knots
        return np.concatenate([[lo], self.internal_knots, [hi]])

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        lo, hi = self.boundary_knots
        u = (x - lo) / (hi - lo)
        t = (self.knots - lo) / (hi - lo)
        last = t.size - 1
        tail = np.clip(u - t[last], 0.0, None) ** 3

        def d(k):
            return (np.clip(u - t[k], 0.0, None) ** 3 - tail) / (t[last] - t[k])

        cols = [x]
        if last >= 2:
            ref = d(last - 1)
            cols.extend(d(k) - ref for k in range(last - 1))
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {
            "internal_knots": [float(k) for k in self.internal_knots],
            "boundary_knots": [float(k) for k in self.boundary_knots],
            "basis_dim": self.basis_dim,
        }


def natural_spline(internal_knots, boundary_knots) -> SplineBasis:
    """Basis object for given knots (internal knots deduplicated)."""
    lo, hi = (float(b) for b in boundary_knots)
    if not hi > lo:
        raise InvalidInputError("boundary knots must satisfy lo < hi")
    knots = np.unique(np.asarray(internal_knots, dtype=float))
    knots = knots[(knots > lo) & (knots < hi)]
    return SplineBasis(knots, (lo, hi))


def build_spline_basis(
    logit_scores, n_internal_knots: int = 5
) -> tuple[SplineBasis, np.ndarray]:
    """Natural cubic spline on the logit propensity score.

    Internal knots sit at the ``j / (n_internal_knots + 1)`` quantiles;
    boundary knots at the minimum and maximum.  Tied quantiles are merged,
    which reduces the basis dimension; with no distinct internal knot the
    basis is the single linear column.
    """
    x = np.asarray(logit_scores, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("logit scores must be finite")
    if n_internal_knots < 0:
        raise InvalidInputError("n_internal_knots must be non-negative")
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise InvalidInputError("logit scores are constant; no spline can be built")
    probs = np.arange(1, n_internal_knots + 1) / (n_internal_knots + 1)
    internal = np.quantile(x, probs) if n_internal_knots else np.empty(0)
    basis = natural_spline(internal, (lo, hi))
    if x.size < basis.basis_dim + 1:
        raise InvalidInputError(
            f"need at least {basis.basis_dim + 1} points for {basis.basis_dim} columns"
        )
    return basis, basis.evaluate(x)


@dataclass(frozen=True, eq=False)
class OutcomeDesign:
    """Shared covariate design for the outcome models of both arms.

    ``shared`` is ``[spline columns, X*]`` where ``X*`` drops the column
    ``omitted_index`` from the covariates.
    """

    propensity: PropensityFit
    subclasses: SubclassAssignment
    spline: SplineBasis
    spline_matrix: np.ndarray
    x_star: np.ndarray
    omitted_index: int | None

    @property
    def shared(self) -> np.ndarray:
        return np.column_stack([self.spline_matrix, self.x_star])

    @property
    def n_spline(self) -> int:
        return self.spline_matrix.shape[1]

    @property
    def n_linear(self) -> int:
        return self.x_star.shape[1]


def build_outcome_design(
    covariates,
    treatment,
    *,
    k_init: int = 6,
    omit_index: int | None = -1,
    propensity_prior: PriorSpec = PriorSpec(),
    propensity: PropensityFit | None = None,
) -> OutcomeDesign:
    """Propensity fit, subclassification and spline columns in one step.

    Internal knots are placed at the subclass boundaries, so ``k_final``
    subclasses give ``k_final - 1`` internal knots.
    """
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if propensity is None:
        propensity = estimate_propensity(X, treatment, propensity_prior)
    sub = subclassify(propensity.scores, treatment, k_init)
    spline, matrix = build_spline_basis(propensity.logit_scores, sub.k_final - 1)
    if omit_index is None:
        x_star = X
    else:
        idx = omit_index % X.shape[1]
        x_star = np.delete(X, idx, axis=1)
        omit_index = idx
    return OutcomeDesign(propensity, sub, spline, matrix, x_star, omit_index)
