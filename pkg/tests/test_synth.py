from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fareaudit.audit import FareAuditConfig
from fareaudit.core import FilterSpec, filter_trips
from fareaudit.exceptions import ConfigError
from fareaudit.ingest import TAXI_FIELD_MAP, ingest_csv, load_survey, load_trips
from fareaudit.synth import (
    MarketSpec,
    StudyResult,
    SurveySpec,
    analytic_power,
    calibration_study,
    default_pricing,
    export_survey_csv,
    export_trips_csv,
    generate_market,
    generate_survey,
    power_curve,
    replicate_audits,
    rush_hour_profile,
    wilson_interval,
    zipf_areas,
)


def test_profiles_are_distributions():
    for p in (rush_hour_profile(), zipf_areas(), zipf_areas(1.4)):
        assert_allclose(p.sum(), 1.0)
        assert (p > 0).all()
    hours = rush_hour_profile()
    assert hours[8] > hours[3] and hours[17] > hours[12]


def test_market_is_reproducible():
    spec = MarketSpec(n_tnp=200, n_taxi=100, seed=9)
    a, b = generate_market(spec), generate_market(spec)
    assert a.tnp == b.tnp and a.taxi == b.taxi
    assert generate_market(replace(spec, seed=10)).tnp != a.tnp


def test_market_passes_default_filters():
    market = generate_market(MarketSpec(n_tnp=500, n_taxi=500, seed=1))
    assert filter_trips(market.tnp, FilterSpec.tnp_default())[1].retained == 500
    assert filter_trips(market.taxi, FilterSpec.taxi_default())[1].retained == 500


def test_common_random_numbers_across_delta():
    spec = MarketSpec(n_tnp=300, n_taxi=100, seed=3, sigma_rideshare=0.5)
    a = generate_market(spec)
    b = generate_market(replace(spec, delta=2.0))
    assert a.taxi == b.taxi
    fa = np.array([t.fare for t in a.tnp])
    fb = np.array([t.fare for t in b.tnp])
    assert_allclose(fb[fa > 0], fa[fa > 0] + 2.0)


def test_noise_free_market_matches_pricing():
    spec = MarketSpec(n_tnp=50, n_taxi=10, sigma_rideshare=0.0, sigma_taxi=0.0, seed=0)
    market = generate_market(spec)
    enc = spec.encoding.encoder().fit()
    assert_allclose([t.fare for t in market.tnp], enc.transform(market.tnp) @ default_pricing())


def test_market_spec_validation():
    with pytest.raises(ConfigError):
        MarketSpec(beta_rideshare=(1.0, 2.0))
    with pytest.raises(ConfigError):
        MarketSpec(area_probs=(1.0,))


def test_csv_roundtrip_is_lossless(tmp_path):
    market = generate_market(MarketSpec(n_tnp=20, n_taxi=20, seed=5))
    path = tmp_path / "taxi.csv"
    export_trips_csv(path, market.taxi, TAXI_FIELD_MAP)
    back = list(load_trips(ingest_csv(path, TAXI_FIELD_MAP, "taxi"), TAXI_FIELD_MAP, "taxi"))
    assert back == market.taxi


def test_survey_roundtrip_and_missingness(tmp_path):
    survey = generate_survey(SurveySpec(n=400, missing_rate=0.2, seed=1))
    path = tmp_path / "survey.csv"
    export_survey_csv(path, survey)
    back, errors = load_survey(ingest_csv(path, kind="survey"))
    assert errors == 0 and back == survey
    missing = np.mean([r.race is None for r in survey])
    assert 0.1 < missing < 0.3


def test_survey_spec_validation():
    with pytest.raises(ConfigError):
        SurveySpec(effects={"race": {"Martian": 1.0}})


def test_wilson_interval():
    lo, hi = wilson_interval(10, 200)
    # reference values from the closed form
    assert_allclose([lo, hi], [0.02743, 0.08950], atol=1e-4)
    assert wilson_interval(0, 50)[0] == 0.0


def test_study_result_rates():
    res = StudyResult(0.05, "independent", 0.0, {"independent": np.array([0.01, 0.2, 0.04, 0.5]), "systematic": np.array([0.3] * 4)})
    assert res.replications == 4 and res.rejections() == 2 and res.rate() == 0.5
    assert res.rate(mode="systematic") == 0.0 and res.rate(alpha=0.3) == 0.75
    assert res.to_dict()["rate_by_mode"] == {"independent": 0.5, "systematic": 0.0}


def test_replications_use_consecutive_seeds():
    spec = MarketSpec(n_tnp=600, n_taxi=200)
    cfg = FareAuditConfig(mode="independent")
    both = replicate_audits(spec, 3, config=cfg, seed0=10)
    tail = replicate_audits(spec, 2, config=cfg, seed0=11)
    assert_allclose(both.p_values["independent"][1:], tail.p_values["independent"])


def test_parallel_matches_serial():
    spec = MarketSpec(n_tnp=500, n_taxi=150)
    serial = replicate_audits(spec, 4, seed0=1)
    parallel = replicate_audits(spec, 4, seed0=1, n_jobs=2)
    assert_allclose(serial.p_values["independent"], parallel.p_values["independent"])


def test_study_guards():
    with pytest.raises(ConfigError):
        calibration_study(MarketSpec(), replications=10)
    with pytest.raises(ConfigError):
        calibration_study(MarketSpec(delta=1.0), replications=60)


def test_power_curve_monotone_with_common_seeds():
    spec = MarketSpec(n_tnp=800, n_taxi=300)
    curve = power_curve(spec, [0.0, 0.5, 1.5], replications=8, seed0=0)
    p = [c.p_values["independent"] for c in curve]
    # same markets, larger overcharge -> smaller one-sided p, replication by replication
    assert (p[1] <= p[0] + 1e-12).all() and (p[2] <= p[1] + 1e-12).all()


def test_analytic_power():
    assert analytic_power(0.0, 2.0, 2.0, 100, 0.05) == pytest.approx(0.05)
    assert analytic_power(1.0, 2.0, 2.0, 2000) > 0.999
    assert analytic_power(1.0, 2.0, 2.0, 10) < analytic_power(1.0, 2.0, 2.0, 40)
