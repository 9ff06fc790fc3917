"""Penalized Bernoulli regression: MAP fitting and Laplace posterior draws.

Every conditional model in the pipeline (propensity, adverse event, death)
goes through :func:`fit_map`.  The posterior of a fitted model is
approximated by a multivariate normal centred at the MAP estimate with the
inverse negative Hessian of the log-posterior as covariance, and
:func:`sample_posterior` draws from that approximation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import expit, log_expit

from .errors import InvalidInputError, NumericalError, SingularCurvatureError

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

LAPLACE_SMOOTHING = 1e-8
PSD_TOLERANCE = 1e-8


class LinkKind(str, enum.Enum):
    LOGIT = "logit"
    BURR = "burr"


@dataclass(frozen=True)
class LinkFunction:
    """Inverse link ``F`` mapping a linear predictor to a probability.

    ``Burr`` is ``F_c(x) = 1 - (1 + e^x)^(-c)``; with ``c == 1`` it is the
    logistic function.
    """

    kind: LinkKind = LinkKind.LOGIT
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))
        if not (self.c > 0 and math.isfinite(self.c)):
            raise InvalidInputError(f"Burr shape c must be positive, got {self.c}")

    @classmethod
    def logit(cls) -> "LinkFunction":
        return cls(LinkKind.LOGIT)

    @classmethod
    def burr(cls, c: float) -> "LinkFunction":
        return cls(LinkKind.BURR, float(c))

    @property
    def is_logistic(self) -> bool:
        return self.kind is LinkKind.LOGIT or self.c == 1.0

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_logistic:
            return expit(x)
        # 1 - exp(-c * softplus(x)), written to keep precision near 0
        return -np.expm1(-self.c * np.logaddexp(0.0, x))

    def log_terms(self, eta):
        """Return ``log F``, ``log(1-F)`` and their first two derivatives."""
        eta = np.asarray(eta, dtype=float)
        if self.is_logistic:
            p = expit(eta)
            curv = -p * (1.0 - p)
            return log_expit(eta), log_expit(-eta), 1.0 - p, curv, -p, curv
        c = self.c
        sig = expit(eta)
        u = c * np.logaddexp(0.0, eta)
        du = c * sig
        d2u = c * sig * (1.0 - sig)
        t = np.exp(-u)
        one_minus_t = -np.expm1(-u)
        r = t / one_minus_t  # 1 / (e^u - 1)
        log_f = np.log(one_minus_t)
        d_log_f = du * r
        d2_log_f = d2u * r - du * du * r * (1.0 + r)
        return log_f, -u, d_log_f, d2_log_f, -du, -d2u


def link_inverse(link: LinkFunction, x: float) -> float:
    """Scalar inverse link with input validation."""
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"linear predictor must be finite, got {x}")
    return float(link.inverse(x))


class PriorKind(str, enum.Enum):
    FLAT = "flat"
    CAUCHY = "cauchy"
    RIDGE = "ridge"
    LASSO = "lasso"


_DEFAULT_SCALE = {
    PriorKind.FLAT: 1.0,
    PriorKind.CAUCHY: 2.5,
    PriorKind.RIDGE: 3.0,
    PriorKind.LASSO: 3.0,
}


@dataclass(frozen=True)
class PriorSpec:
    """Independent per-coefficient prior.

    ``RIDGE`` is ``N(location, scale**2 / shrinkage_lambda)``; ``LASSO`` is a
    Laplace density with scale ``scale**2 / shrinkage_lambda``; ``CAUCHY`` uses
    ``scale`` directly.  ``shrinkage_lambda`` is a fixed scalar, not sampled.
    """

    kind: PriorKind = PriorKind.FLAT
    location: float = 0.0
    scale: float | None = None
    shrinkage_lambda: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.scale is None:
            object.__setattr__(self, "scale", _DEFAULT_SCALE[self.kind])
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidInputError(f"prior scale must be positive, got {self.scale}")
        if not (self.shrinkage_lambda > 0 and math.isfinite(self.shrinkage_lambda)):
            raise InvalidInputError("shrinkage_lambda must be positive")

    @classmethod
    def flat(cls) -> "PriorSpec":
        return cls(PriorKind.FLAT)

    @classmethod
    def cauchy(cls, scale: float = 2.5, location: float = 0.0) -> "PriorSpec":
        return cls(PriorKind.CAUCHY, location, scale)

    @classmethod
    def ridge(cls, scale: float = 3.0, shrinkage_lambda: float = 1.0) -> "PriorSpec":
        return cls(PriorKind.RIDGE, 0.0, scale, shrinkage_lambda)

    @classmethod
    def lasso(cls, scale: float = 3.0, shrinkage_lambda: float = 1.0) -> "PriorSpec":
        return cls(PriorKind.LASSO, 0.0, scale, shrinkage_lambda)

    @classmethod
    def normal(cls, sd: float) -> "PriorSpec":
        return cls(PriorKind.RIDGE, 0.0, sd, 1.0)

    @property
    def is_flat(self) -> bool:
        return self.kind is PriorKind.FLAT

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "location": self.location,
            "scale": self.scale,
            "shrinkage_lambda": self.shrinkage_lambda,
        }


class _PriorVector:
    """Vectorized log-density, gradient and Hessian diagonal of a prior list."""

    def __init__(self, priors: Sequence[PriorSpec]):
        self.priors = list(priors)
        kinds = np.array([p.kind.value for p in priors])
        self.loc = np.array([p.location for p in priors], dtype=float)
        scale = np.array([p.scale for p in priors], dtype=float)
        lam = np.array([p.shrinkage_lambda for p in priors], dtype=float)
        self.cauchy = kinds == PriorKind.CAUCHY.value
        self.ridge = kinds == PriorKind.RIDGE.value
        self.lasso = kinds == PriorKind.LASSO.value
        self.cauchy_scale = np.where(self.cauchy, scale, 1.0)
        self.ridge_precision = np.where(self.ridge, lam / scale**2, 0.0)
        self.lasso_rate = np.where(self.lasso, lam / scale**2, 0.0)
        self.all_flat = not (self.cauchy.any() or self.ridge.any() or self.lasso.any())

    def terms(self, beta):
        d = beta - self.loc
        logp = np.zeros_like(beta)
        grad = np.zeros_like(beta)
        hess = np.zeros_like(beta)

        s = self.cauchy_scale
        z2 = (d / s) ** 2
        logp = np.where(self.cauchy, -np.log1p(z2), logp)
        grad = np.where(self.cauchy, -2.0 * d / (s * s + d * d), grad)
        hess = np.where(self.cauchy, -2.0 * (s * s - d * d) / (s * s + d * d) ** 2, hess)

        logp = logp - 0.5 * self.ridge_precision * d * d
        grad = grad - self.ridge_precision * d
        hess = hess - self.ridge_precision

        if self.lasso.any():
            eps2 = LAPLACE_SMOOTHING**2
            root = np.sqrt(d * d + eps2)
            logp = logp - self.lasso_rate * root
            grad = grad - self.lasso_rate * d / root
            hess = hess - self.lasso_rate * eps2 / root**3
        return logp.sum(), grad, hess


def expand_priors(
    prior: PriorSpec | Sequence[PriorSpec],
    n_columns: int,
    intercept: bool,
    intercept_prior: PriorSpec | None = None,
) -> list[PriorSpec]:
    """Build one prior per coefficient (intercept first when present).

    Under ridge/lasso shrinkage the intercept is left flat; under a Cauchy
    prior it receives the same Cauchy density as the slopes.
    """
    if isinstance(prior, PriorSpec):
        column_priors = [prior] * n_columns
    else:
        column_priors = list(prior)
        if len(column_priors) != n_columns:
            raise InvalidInputError(
                f"got {len(column_priors)} priors for {n_columns} design columns"
            )
    if not intercept:
        return column_priors
    if intercept_prior is None:
        first = column_priors[0] if column_priors else PriorSpec.flat()
        intercept_prior = first if first.kind is PriorKind.CAUCHY else PriorSpec.flat()
    return [intercept_prior] + column_priors


@dataclass(frozen=True, eq=False)
class ModelFit:
    """MAP estimate and Laplace covariance of one Bernoulli model.

    ``coefficients`` include the intercept in position 0 when
    ``intercept`` is true.
    """

    coefficients: np.ndarray
    covariance: np.ndarray
    link: LinkFunction = field(default_factory=LinkFunction)
    converged: bool = True
    iterations: int = 0
    intercept: bool = True
    gradient_norm: float = 0.0
    log_posterior: float = float("nan")
    priors: tuple = ()

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (coef.size, coef.size):
            raise InvalidInputError(
                f"covariance shape {cov.shape} does not match {coef.size} coefficients"
            )
        coef.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "covariance", cov)

    @property
    def n_coefficients(self) -> int:
        return self.coefficients.size

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def linear_predictor(self, design, coefficients=None) -> np.ndarray:
        return linear_predictor(
            self.coefficients if coefficients is None else coefficients,
            design,
            self.intercept,
        )

    def predict(self, design, coefficients=None) -> np.ndarray:
        return self.link.inverse(self.linear_predictor(design, coefficients))

    def with_parameters(self, coefficients, covariance=None) -> "ModelFit":
        """Copy with replaced coefficients (covariance zeroed unless given)."""
        coefficients = np.asarray(coefficients, dtype=float)
        if covariance is None:
            covariance = np.zeros((coefficients.size, coefficients.size))
        return ModelFit(
            coefficients,
            covariance,
            self.link,
            True,
            0,
            self.intercept,
            priors=self.priors,
        )


def linear_predictor(coefficients, design, intercept: bool = True) -> np.ndarray:
    """``design @ slopes (+ intercept)`` for one or many coefficient vectors.

    ``coefficients`` may be a vector (``p``) or a matrix of draws
    (``draws x p``); the result is ``n`` or ``draws x n`` respectively.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[None, :]
    coefficients = np.asarray(coefficients, dtype=float)
    offset = 1 if intercept else 0
    if coefficients.shape[-1] != design.shape[1] + offset:
        raise InvalidInputError(
            f"design has {design.shape[1]} columns but model expects "
            f"{coefficients.shape[-1] - offset}"
        )
    slopes = coefficients[..., offset:]
    eta = slopes @ design.T
    if intercept:
        eta = eta + coefficients[..., :1]
    return eta


def _check_inputs(design, response):
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    response = np.asarray(response, dtype=float).reshape(-1)
    if design.shape[0] != response.size:
        raise InvalidInputError(
            f"design has {design.shape[0]} rows but response has {response.size}"
        )
    if response.size < 1:
        raise InvalidInputError("need at least one observation")
    if not np.all(np.isfinite(design)) or not np.all(np.isfinite(response)):
        raise InvalidInputError("design and response must be finite (no NaN/inf)")
    if not np.all((response == 0) | (response == 1)):
        raise InvalidInputError("response must be binary 0/1")
    return design, response


def log_posterior_terms(beta, X, y, link: LinkFunction, prior_vec: _PriorVector):
    """Log-posterior, gradient and Hessian at ``beta`` for a full design ``X``."""
    eta = X @ beta
    log_f, log_s, d_f, d2_f, d_s, d2_s = link.log_terms(eta)
    loglik = float(np.sum(y * log_f + (1.0 - y) * log_s))
    w1 = y * d_f + (1.0 - y) * d_s
    w2 = y * d2_f + (1.0 - y) * d2_s
    grad = X.T @ w1
    hess = (X * w2[:, None]).T @ X
    lp, pg, ph = prior_vec.terms(beta)
    return loglik + lp, grad + pg, hess + np.diag(ph)


def _newton_direction(neg_hess, grad):
    """Solve ``neg_hess @ step = grad``, damping until positive definite."""
    p = grad.size
    scale = max(1.0, float(np.max(np.abs(np.diag(neg_hess)))))
    damping = 0.0
    for _ in range(60):
        try:
            chol = np.linalg.cholesky(neg_hess + damping * np.eye(p))
            z = np.linalg.solve(chol, grad)
            return np.linalg.solve(chol.T, z)
        except np.linalg.LinAlgError:
            damping = 1e-10 * scale if damping == 0.0 else damping * 10.0
    return grad / scale


def fit_map(
    design,
    response,
    prior: PriorSpec | Sequence[PriorSpec] = PriorSpec(),
    link: LinkFunction = LinkFunction(),
    *,
    intercept: bool = True,
    intercept_prior: PriorSpec | None = None,
    max_iter: int = 200,
    tol: float = 1e-8,
    start=None,
) -> ModelFit:
    """Maximize log-likelihood plus log-prior by damped Newton-Raphson.

    Parameters
    ----------
    design : array (n, p)
        Covariate columns; an intercept column is prepended when
        ``intercept`` is true.
    response : array (n,)
        Binary outcome.
    prior : PriorSpec or sequence of PriorSpec
        One prior for every column or a list matching ``design`` columns.
    link : LinkFunction
        Inverse link of the Bernoulli mean.

    Returns
    -------
    ModelFit
        ``converged`` is false (no exception) when ``max_iter`` is reached
        before the gradient norm falls below ``tol``.

    Raises
    ------
    SingularCurvatureError
        Under an all-flat prior when the design is rank deficient or the
        likelihood has no finite maximum (separation).
    """
    X, y = _check_inputs(design, response)
    n, p_cols = X.shape
    priors = expand_priors(prior, p_cols, intercept, intercept_prior)
    if intercept:
        X = np.column_stack([np.ones(n), X])
    prior_vec = _PriorVector(priors)
    p = X.shape[1]

    if prior_vec.all_flat and np.linalg.matrix_rank(X) < p:
        raise SingularCurvatureError(
            "design is rank deficient and the prior is flat; "
            "use a proper prior (e.g. Cauchy or ridge) to regularize the fit"
        )

    beta = np.zeros(p) if start is None else np.asarray(start, dtype=float).copy()
    lp, grad, hess = log_posterior_terms(beta, X, y, link, prior_vec)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            converged = True
            it -= 1
            break
        step = _newton_direction(-hess, grad)
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = beta + t * step
            lp_c, grad_c, hess_c = log_posterior_terms(cand, X, y, link, prior_vec)
            if np.isfinite(lp_c) and lp_c >= lp - 1e-13 * max(1.0, abs(lp)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        beta, lp, grad, hess = cand, lp_c, grad_c, hess_c
        if prior_vec.all_flat and np.max(np.abs(beta)) > 1e3:
            break
    gnorm = float(np.linalg.norm(grad))
    if gnorm <= tol:
        converged = True

    neg_hess = -0.5 * (hess + hess.T)
    eigvals = np.linalg.eigvalsh(neg_hess)
    if prior_vec.all_flat:
        # curvature relative to the Fisher information at beta = 0
        reference = 0.25 * float(np.linalg.eigvalsh(X.T @ X)[0])
        if (
            eigvals[0] <= 1e-7 * reference
            or eigvals[0] <= 1e-12 * float(eigvals[-1])
            or np.max(np.abs(beta)) > 1e3
        ):
            raise SingularCurvatureError(
                "log-likelihood has no finite maximum or singular curvature "
                "(separation or collinearity); use a proper prior such as "
                "Cauchy(0, 2.5) or ridge"
            )
    if eigvals[0] <= 0:
        raise SingularCurvatureError(
            "negative log-posterior Hessian is not positive definite at the mode"
        )
    cov = np.linalg.inv(neg_hess)
    cov = 0.5 * (cov + cov.T)
    return ModelFit(
        coefficients=beta,
        covariance=cov,
        link=link,
        converged=converged,
        iterations=it,
        intercept=intercept,
        gradient_norm=gnorm,
        log_posterior=lp,
        priors=tuple(priors),
    )


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def covariance_factor(cov) -> np.ndarray:
    """Square-root factor ``L`` with ``L @ L.T == cov`` for a PSD matrix."""
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    bound = PSD_TOLERANCE * max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
    if vals.size and vals[0] < -bound:
        raise NumericalError(
            f"covariance is not positive semi-definite (min eigenvalue {vals[0]:.3g})"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_posterior(
    fit: ModelFit,
    count: int,
    rng_seed: SeedLike,
    *,
    allow_unconverged: bool = False,
) -> np.ndarray:
    """Draw ``count`` coefficient vectors from ``N(MAP, covariance)``.

    The same integer seed always yields a bit-identical matrix.
    """
    if count < 1:
        raise InvalidInputError("count must be at least 1")
    if not fit.converged and not allow_unconverged:
        raise NumericalError(
            "fit did not converge; pass allow_unconverged=True to sample anyway"
        )
    factor = covariance_factor(fit.covariance)
    rng = make_rng(rng_seed)
    z = rng.standard_normal((count, fit.n_coefficients))
    return fit.coefficients + z @ factor.T
