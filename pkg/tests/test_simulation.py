import dataclasses
import json
import warnings

import numpy as np
import pytest
import yaml
from scipy import stats
from scipy.special import expit

from compordinal.data import StudyData
from compordinal.errors import InvalidConfigError, NotSupportedError
from compordinal.estimands import finite_sample_estimands
from compordinal.glm_core import LinkFunction
from compordinal.simulation import (
    AIPW,
    AIPW_ESTIMANDS,
    BAYES,
    BURR_LINK,
    CASE_STUDY_1,
    POOL_COLUMNS,
    TARGET_ESTIMANDS,
    SimulationConfig,
    aipw_estimate,
    generate_covariate_pool,
    generate_dataset,
    load_simulation_config,
    run_replications,
    synthetic_application_dataset,
    true_estimands,
)


def _one_covariate(**kw):
    base = dict(name="toy", phi_a=(-0.5, 0.2), phi_d=(-1.0, -0.4), xi_a=((0.8,), (0.5,)),
                xi_d=((0.4,), (-0.3,)), zeta=(0.0, 0.0), alpha=(0.0,), n=100_000)
    base.update(kw)
    return SimulationConfig(**base)


def test_covariate_pool_shape_and_types():
    raw = generate_covariate_pool()
    assert raw.shape == (2016, len(POOL_COLUMNS))
    assert set(np.unique(raw[:, 3])) <= {0.0, 1.0} and set(np.unique(raw[:, 4])) <= {0.0, 1.0}
    np.testing.assert_array_equal(raw, generate_covariate_pool())


def test_generator_matches_its_probabilities():
    cfg = dataclasses.replace(CASE_STUDY_1, n=50_000, alpha=(0.2, -0.1, 0.3, 0.5, -0.4))
    sim = generate_dataset(cfg, seed=3)
    X = sim.data.covariates
    F = cfg.link.inverse
    for arm, (a, d) in ((0, (sim.truth.a0, sim.truth.d0)), (1, (sim.truth.a1, sim.truth.d1))):
        pa = F(cfg.phi_a[arm] + X @ np.asarray(cfg.xi_a[arm]))
        se = np.sqrt((pa * (1 - pa)).sum()) / X.shape[0]
        assert abs(a.mean() - pa.mean()) < 4 * se
        base = cfg.phi_d[arm] + X @ np.asarray(cfg.xi_d[arm])
        pd = F(base + cfg.zeta[arm] * a)
        se = np.sqrt((pd * (1 - pd)).sum()) / X.shape[0]
        assert abs(d.mean() - pd.mean()) < 4 * se
    e = F(X @ np.asarray(cfg.alpha))
    np.testing.assert_allclose(sim.truth.propensity, e)
    assert abs(sim.data.w.mean() - e.mean()) < 4 * np.sqrt((e * (1 - e)).sum()) / X.shape[0]
    treated = sim.data.w == 1
    np.testing.assert_array_equal(sim.data.a[treated], sim.truth.a1[treated])
    np.testing.assert_array_equal(sim.data.d[~treated], sim.truth.d0[~treated])


def test_zero_zeta_decouples_death_from_adverse():
    X = np.repeat([[0.0], [1.0]], 50_000, axis=0)
    sim = generate_dataset(_one_covariate(), seed=4, covariates=X)
    chi2 = 0.0
    for stratum in (0.0, 1.0):
        rows = X[:, 0] == stratum
        table = np.histogram2d(sim.truth.a1[rows], sim.truth.d1[rows], bins=2)[0]
        chi2 += stats.chi2_contingency(table, correction=False)[0]
    assert stats.chi2.sf(chi2, 2) > 0.01


def test_zero_assignment_coefficients_balance_arms():
    cfg = dataclasses.replace(CASE_STUDY_1, alpha=(0.0,) * 5, n=20_000)
    sim = generate_dataset(cfg, seed=5)
    w = sim.data.w
    assert stats.binomtest(int(w.sum()), w.size, 0.5).pvalue > 0.01
    for j in range(5):
        col = sim.data.covariates[:, j]
        assert stats.ttest_ind(col[w == 1], col[w == 0]).pvalue > 0.01 / 5


def test_generator_dimension_check():
    with pytest.raises(InvalidConfigError):
        generate_dataset(CASE_STUDY_1, seed=0, covariates=np.zeros((10, 3)))
    with pytest.raises(InvalidConfigError):
        _one_covariate(xi_d=((0.4, 0.1), (0.3, 0.2)))


def test_truth_for_degenerate_config():
    cfg = _one_covariate(phi_a=(-60.0, -60.0), phi_d=(-60.0, -60.0), xi_a=((0.0,), (0.0,)),
                         xi_d=((0.0,), (0.0,)))
    t = true_estimands(cfg, np.zeros((5, 1)))
    assert t.p_k_w[1, 0] == pytest.approx(1.0) and t.p_k_w[0, 0] == pytest.approx(1.0)
    assert t.itt_adverse == pytest.approx(0, abs=1e-15)
    assert t.kappa_diff == pytest.approx(0, abs=1e-15)


def test_truth_for_symmetric_config():
    cfg = _one_covariate(phi_a=(0.3, 0.3), phi_d=(-0.2, -0.2), xi_a=((0.5,), (0.5,)),
                         xi_d=((-0.7,), (-0.7,)), zeta=(1.0, 1.0))
    t = true_estimands(cfg, np.random.default_rng(6).standard_normal((200, 1)))
    np.testing.assert_allclose(t.delta_j, 0, atol=1e-15)
    assert t.kappa10 == pytest.approx(t.kappa01, abs=1e-15)
    assert t.u10 == pytest.approx(0.5, abs=1e-15)


def test_case_study_one_truth_has_published_signs():
    t = true_estimands(CASE_STUDY_1)
    assert t.itt_adverse > 0 and t.itt_death > 0
    assert t.sace < 0
    assert t.kappa_ratio > 1
    burr = true_estimands(CASE_STUDY_1.with_link(BURR_LINK))
    assert burr.itt_adverse > 0 and burr.kappa_ratio > 1


def test_truth_agrees_with_simulated_potential_outcomes():
    X = np.random.default_rng(7).standard_normal((2000, 1))
    cfg = _one_covariate(n=2000, zeta=(0.7, 1.3))
    t = true_estimands(cfg, X)
    reps = [finite_sample_estimands(generate_dataset(cfg, seed=s, covariates=X).truth)
            for s in range(200)]
    for name in ("itt_adverse", "itt_death", "kappa10", "kappa01"):
        vals = np.array([getattr(r, name) for r in reps])
        assert abs(vals.mean() - getattr(t, name)) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)


def test_config_round_trips(tmp_path):
    cfg = CASE_STUDY_1.with_link(BURR_LINK)
    assert SimulationConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg.to_dict()))
    for name in ("c.json", "c.yaml"):
        loaded = load_simulation_config(tmp_path / name)
        assert loaded.to_dict() == cfg.to_dict()
        assert loaded.link.c == 0.5
    with pytest.raises(InvalidConfigError, match="unknown"):
        SimulationConfig.from_dict({**cfg.to_dict(), "extra": 1})
    bad = cfg.to_dict()
    del bad["zeta"]
    with pytest.raises(InvalidConfigError, match="missing"):
        SimulationConfig.from_dict(bad)


# ---------------------------------------------------------------- AIPW

def test_aipw_rejects_ordinal_comparisons():
    data = synthetic_application_dataset()
    for name in ("sace", "kappa_diff", "kappa_ratio"):
        with pytest.raises(NotSupportedError):
            aipw_estimate(data, name)


def test_aipw_close_to_difference_in_means_when_randomized():
    cfg = dataclasses.replace(CASE_STUDY_1, alpha=(0.0,) * 5)
    data = generate_dataset(cfg, seed=8).data
    res = aipw_estimate(data, "itt_adverse")
    dim = data.a[data.w == 1].mean() - data.a[data.w == 0].mean()
    assert abs(res.point - dim) < 2 * res.se
    assert res.interval[0] < res.point < res.interval[1]


def test_aipw_truncates_extreme_propensity():
    data = synthetic_application_dataset()
    e = np.full(data.n, 0.5)
    e[:3] = 0.001
    with pytest.warns(UserWarning, match="truncated"):
        res = aipw_estimate(data, "itt_death", propensity=e)
    assert res.truncated == 3


def test_aipw_double_robust_with_wrong_outcome_model():
    r = np.random.default_rng(9)
    n = 10_000
    errors, naive = [], []
    for _ in range(10):
        X = r.standard_normal((n, 2))
        e = expit(0.8 * X[:, 0] - 0.5 * X[:, 1])
        w = (r.random(n) < e).astype(int)
        # outcome jumps at X0 = 0.5, which a linear logistic outcome model cannot express
        step = 2.5 * (X[:, 0] > 0.5) - 1.5 * (X[:, 1] < -1.0)
        p1 = expit(-1.0 + step + 0.6)
        p0 = expit(-1.0 + step)
        y = np.where(w == 1, r.random(n) < p1, r.random(n) < p0).astype(int)
        data = StudyData(w, y, np.zeros(n, int), X)
        res = aipw_estimate(data, "itt_adverse")
        errors.append(res.point - (p1 - p0).mean())
        naive.append(y[w == 1].mean() - y[w == 0].mean() - (p1 - p0).mean())
    assert abs(np.mean(errors)) <= 0.01
    assert abs(np.mean(naive)) > 0.01  # the setting is confounded


# ---------------------------------------------------------------- replications

def test_replications_are_reproducible_across_workers(tmp_path):
    cfg = dataclasses.replace(CASE_STUDY_1, n=400)
    one = run_replications(cfg, 3, M=20, seed=2)
    two = run_replications(cfg, 3, M=20, seed=2, n_jobs=2)
    assert [dataclasses.astuple(r) for r in one.rows] == [dataclasses.astuple(r) for r in two.rows]
    assert {r.estimand for r in one.rows if r.method == BAYES} == set(TARGET_ESTIMANDS)
    assert {r.estimand for r in one.rows if r.method == AIPW} == set(AIPW_ESTIMANDS)
    for r in one.rows:
        assert 0 <= r.coverage <= 100 and r.replications + one.failures[r.method] == 3
    path = one.to_csv(tmp_path / "metrics.csv")
    lines = open(path).read().splitlines()
    assert lines[0] == "Estimand,method,Coverage,Bias,IW,RMSE,Replications"
    assert len(lines) == 1 + len(TARGET_ESTIMANDS) + len(AIPW_ESTIMANDS)
    with pytest.raises(InvalidConfigError):
        run_replications(cfg, 0)
    with pytest.raises(InvalidConfigError):
        run_replications(cfg, 1, methods=("nope",), M=2)


def test_application_dataset_layout():
    data = synthetic_application_dataset()
    assert data.n == 2016 and data.w.sum() == 1008
    assert 0.03 < data.a[data.w == 1].mean() < 0.15
