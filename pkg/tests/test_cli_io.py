import csv
import json
import math

import numpy as np
import pytest

from compordinal.cli_io import (
    RunConfig,
    atomic_write_text,
    emit_report,
    format_number,
    ingest_csv,
    read_estimates_csv,
    run_analysis,
    validate_manifest,
    write_study_csv,
)
from compordinal.errors import InvalidConfigError, InvalidInputError, SchemaError, StageError
from compordinal.estimands import Population
from compordinal.simulation import synthetic_application_dataset

FIVE_ROWS = """id,w,a,d,age,female
p1,1,0,0,71.5,1
p2,0,1,0,80.0,0
p3,1,1,1,66.25,1
p4,0,0,1,90.5,0
p5,1,0,0,75.0,1
"""


@pytest.fixture(scope="module")
def application_result():
    data = synthetic_application_dataset()
    cfg = RunConfig(M=500, seed=4, population="treated", ppc_draws=200)
    return data, cfg, run_analysis(cfg, data)


def _write(tmp_path, text, name="in.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_ingest_well_formed_file(tmp_path, caplog):
    caplog.set_level("INFO")
    data = ingest_csv(_write(tmp_path, FIVE_ROWS))
    assert data.n == 5 and data.n_treated == 3 and data.n_control == 2
    assert "treated 3, control 2" in caplog.text
    assert data.ids == ("p1", "p2", "p3", "p4", "p5")
    assert data.covariate_names == ("age", "female")
    age = np.array([71.5, 80.0, 66.25, 90.5, 75.0])
    np.testing.assert_allclose(data.covariates[:, 0], (age - age.mean()) / age.std(ddof=1))
    np.testing.assert_array_equal(data.covariates[:, 1], [1, 0, 1, 0, 1])
    assert data.standardization[0] == pytest.approx((age.mean(), age.std(ddof=1)))
    assert data.standardization[1] is None and not data.matched


def test_non_binary_treatment_cites_row(tmp_path):
    bad = FIVE_ROWS.replace("p3,1,1,1", "p3,2,1,1")
    with pytest.raises(InvalidInputError, match="row 3"):
        ingest_csv(_write(tmp_path, bad))


def test_schema_errors(tmp_path):
    with pytest.raises(SchemaError, match="empty name"):
        ingest_csv(_write(tmp_path, FIVE_ROWS.replace("female", "")))
    with pytest.raises(SchemaError, match="'d'"):
        ingest_csv(_write(tmp_path, "id,w,a,x\n1,1,0,0.5\n"))
    with pytest.raises(SchemaError, match="row 1"):
        ingest_csv(_write(tmp_path, "id,w,a,d,x\n1,1,0,0\n"))
    with pytest.raises(InvalidInputError, match="not a number"):
        ingest_csv(_write(tmp_path, "id,w,a,d,x\n1,1,0,0,abc\n"))
    with pytest.raises(InvalidInputError, match="not found"):
        ingest_csv(tmp_path / "absent.csv")


def test_study_csv_round_trip_and_matched_flag(tmp_path):
    data = synthetic_application_dataset()
    path = tmp_path / "app.csv"
    write_study_csv(data, path)
    back = ingest_csv(path, standardize=False)
    np.testing.assert_array_equal(back.covariates, data.covariates)
    np.testing.assert_array_equal(back.w, data.w)
    assert back.matched == data.matched
    with pytest.raises(FileExistsError):
        write_study_csv(data, path)


def test_format_number_round_trips():
    r = np.random.default_rng(0)
    for v in np.r_[r.standard_normal(200) * 10.0 ** r.integers(-20, 20, 200), 0.1, 1 / 3]:
        assert float(format_number(v)) == v
    assert format_number(float("nan")) in ("nan", "NaN")


def test_atomic_write_refuses_overwrite(tmp_path):
    path = tmp_path / "x.txt"
    atomic_write_text(path, "first")
    with pytest.raises(FileExistsError):
        atomic_write_text(path, "second")
    assert path.read_text() == "first"
    atomic_write_text(path, "third", force=True)
    assert path.read_text() == "third"


def test_run_config_validation(tmp_path):
    assert RunConfig().M == 500
    with pytest.raises(InvalidConfigError):
        RunConfig(M=1)
    with pytest.raises(InvalidConfigError):
        RunConfig(prior_mode="bogus")
    with pytest.raises(InvalidConfigError):
        RunConfig(population="everyone")
    with pytest.raises(InvalidConfigError):
        RunConfig(estimands=["nope"])
    with pytest.raises(InvalidConfigError, match="unknown config keys"):
        RunConfig.from_dict({"MM": 3})
    with pytest.raises(InvalidConfigError, match="does not exist"):
        RunConfig(data=str(tmp_path / "missing.csv")).validate()
    (tmp_path / "c.yaml").write_text("M: 20\nseed: 3\nprior_mode: simulation\n")
    cfg = RunConfig.from_file(tmp_path / "c.yaml")
    assert (cfg.M, cfg.seed) == (20, 3)
    assert cfg.outcome_priors().spline.kind.value == "cauchy"
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_population_default_follows_matching():
    data = synthetic_application_dataset()
    assert RunConfig().resolve_population(data) is (
        Population.TREATED if data.matched else Population.ALL)
    assert RunConfig(population="all").resolve_population(data) is Population.ALL


def test_application_analysis_contract(application_result):
    _, _, result = application_result
    for row in result.estimates:
        if not math.isnan(row.point):
            assert row.lo <= row.point <= row.hi, row
    death = next(r for r in result.estimates if r.estimand == "itt_death" and r.scope == "finite")
    assert death.lo <= 0 <= death.hi and abs(death.point) < 0.05
    assert death.method == "percentile" and death.m_used == 500
    sp = next(r for r in result.estimates if r.estimand == "itt_death" and r.scope == "super")
    assert sp.method == "rubin_t"
    assert len(result.draws) == 1000
    assert {p["level"] for p in result.ppc} == {1, 2, 3, 4}


def test_manifest_records_tunables(application_result):
    _, cfg, result = application_result
    validate_manifest(result.manifest)
    assert result.manifest["config"] == json.loads(json.dumps(cfg.to_dict()))
    assert result.manifest["seed"] == 4 and result.manifest["population"] == "treated"
    bad = dict(result.manifest)
    del bad["seed"]
    with pytest.raises(SchemaError):
        validate_manifest(bad)


def test_report_round_trip_and_overwrite(application_result, tmp_path):
    _, _, result = application_result
    paths = emit_report(result, tmp_path)
    back = read_estimates_csv(paths["estimates.csv"])
    for a, b in zip(result.estimates, back):
        for name in ("point", "se", "lo", "hi", "df"):
            x, y = getattr(a, name), getattr(b, name)
            assert (math.isnan(x) and math.isnan(y)) or x == y
    with open(paths["draws.csv"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["m", "scope"] and len(rows) == 1001
    with pytest.raises(FileExistsError):
        emit_report(result, tmp_path)
    emit_report(result, tmp_path, force=True)


def test_analysis_is_deterministic():
    data = synthetic_application_dataset()
    cfg = RunConfig(M=20, seed=9, ppc_draws=0, superpop=False)
    from compordinal.cli_io import estimates_csv_text

    a = estimates_csv_text(run_analysis(cfg, data).estimates)
    b = estimates_csv_text(run_analysis(cfg, data).estimates)
    assert a == b


def test_stage_errors_name_the_stage():
    data = synthetic_application_dataset()
    import dataclasses

    one_arm = dataclasses.replace(data, w=np.ones(data.n, int))
    with pytest.raises(StageError, match="design"):
        run_analysis(RunConfig(M=2, ppc_draws=0), one_arm)
