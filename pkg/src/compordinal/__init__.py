"""Causal effects on an adverse event and death via a composite ordinal outcome.

Missing potential outcomes are multiply imputed from per-arm Bayesian
logistic models built on a propensity-score spline design; estimands are
computed from the completed data (finite sample) or from parameter draws
(super-population) and pooled with Rubin's rules.
"""

__version__ = "0.1.0"

from .data import StudyData  # noqa: E402
from .errors import (  # noqa: E402
    CompOrdinalError,
    InfeasibleDesignError,
    InvalidConfigError,
    InvalidDesignError,
    InvalidInputError,
    NotSupportedError,
    NumericalError,
    SchemaError,
    SingularCurvatureError,
    StageError,
)
from .estimands import (  # noqa: E402
    EstimandSet,
    Population,
    compose_ordinal,
    estimands_from_joint,
    finite_sample_estimands,
    superpop_estimands,
)
from .glm_core import LinkFunction, PriorSpec, fit_map, sample_posterior  # noqa: E402
from .pooling import PoolMethod, pool, rubin_pool  # noqa: E402

__all__ = [
    "__version__",
    "StudyData",
    "CompOrdinalError",
    "InfeasibleDesignError",
    "InvalidConfigError",
    "InvalidDesignError",
    "InvalidInputError",
    "NotSupportedError",
    "NumericalError",
    "SchemaError",
    "SingularCurvatureError",
    "StageError",
    "EstimandSet",
    "Population",
    "compose_ordinal",
    "estimands_from_joint",
    "finite_sample_estimands",
    "superpop_estimands",
    "LinkFunction",
    "PriorSpec",
    "fit_map",
    "sample_posterior",
    "PoolMethod",
    "pool",
    "rubin_pool",
]
