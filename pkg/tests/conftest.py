import numpy as np
import pytest

from compordinal.design import build_outcome_design
from compordinal.glm_core import PriorSpec
from compordinal.outcome_models import OutcomePriors, fit_both_arms
from compordinal.simulation import CASE_STUDY_1, generate_dataset


class Fitted:
    def __init__(self, data, design, fits0, fits1, truth=None):
        self.data = data
        self.design = design
        self.fits0 = fits0
        self.fits1 = fits1
        self.truth = truth

    @property
    def shared(self):
        return self.design.shared


def fit_cohort(data, priors=None):
    design = build_outcome_design(data.covariates, data.w, propensity_prior=PriorSpec.flat())
    fits0, fits1 = fit_both_arms(design, data.w, data.a, data.d,
                                 priors or OutcomePriors.simulation())
    return design, fits0, fits1


@pytest.fixture(scope="session")
def small_cohort():
    """400-unit Case Study 1 cohort with fitted outcome models."""
    import dataclasses

    cfg = dataclasses.replace(CASE_STUDY_1, n=400)
    sim = generate_dataset(cfg, seed=7)
    design, fits0, fits1 = fit_cohort(sim.data)
    return Fitted(sim.data, design, fits0, fits1, sim.truth)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
