"""In-memory study table: one row per unit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class StudyData:
    """Observed data: treatment ``w``, adverse event ``a``, death ``d``, covariates.

    ``covariates`` is ``n x P``.  ``standardization`` records the mean and SD
    used for each standardized continuous column (``None`` for untouched
    binary columns).
    """

    w: np.ndarray
    a: np.ndarray
    d: np.ndarray
    covariates: np.ndarray
    ids: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()
    standardization: tuple = ()
    matched: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.w).astype(int).reshape(-1)
        a = np.asarray(self.a).astype(int).reshape(-1)
        d = np.asarray(self.d).astype(int).reshape(-1)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = w.size
        if a.size != n or d.size != n or X.shape[0] != n:
            raise InvalidInputError("w, a, d and covariates must have the same number of rows")
        for name, v in (("w", w), ("a", a), ("d", d)):
            if not np.all((v == 0) | (v == 1)):
                raise InvalidInputError(f"{name} must be binary 0/1")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("covariates must be finite")
        ids = tuple(self.ids) if len(self.ids) else tuple(str(i + 1) for i in range(n))
        names = (
            tuple(self.covariate_names)
            if len(self.covariate_names)
            else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        )
        for arr in (w, a, d, X):
            arr.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.w.size

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def arm_counts(self) -> dict[str, int]:
        return {"n": self.n, "treated": self.n_treated, "control": self.n_control}

    def subset(self, rows) -> "StudyData":
        rows = np.asarray(rows)
        ids = np.asarray(self.ids, dtype=object)[rows]
        return StudyData(
            self.w[rows], self.a[rows], self.d[rows], self.covariates[rows],
            tuple(ids), self.covariate_names, self.standardization, self.matched,
            dict(self.metadata),
        )

    def relabel_arms(self) -> "StudyData":
        """Swap the roles of the two arms (``w -> 1 - w``)."""
        return StudyData(
            1 - self.w, self.a, self.d, self.covariates, self.ids,
            self.covariate_names, self.standardization, self.matched, dict(self.metadata),
        )
