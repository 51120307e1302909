import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal
from sklearn.base import clone

from conftest import make_trip
from fareaudit.core import SurveyResponse, SurveySchema, parse_timestamp
from fareaudit.exceptions import ConfigError, EncodingError
from fareaudit.features import (
    EncodingSpec,
    SurveyEncoder,
    TripEncoder,
    encode_survey,
    encode_trip,
    export_design_csv,
    local_hour_and_day,
)


def test_width_and_names():
    enc = TripEncoder().fit()
    names = list(enc.get_feature_names_out())
    assert enc.n_features_out_ == EncodingSpec().width == 184
    assert names[:3] == ["intercept", "miles", "seconds"]
    assert "hour=3" not in names and "hour=4" in names
    assert "day=Mon" not in names and "day=Sun" in names
    assert "pickup_area=1" not in names and "dropoff_area=77" in names
    assert len(set(names)) == len(names)
    assert EncodingSpec(interactions=True).width == 207
    assert EncodingSpec(include_intercept=False).width == 183


def test_encoder_is_sklearn_estimator():
    enc = TripEncoder(hour_reference=5)
    assert clone(enc).get_params() == enc.get_params()
    with pytest.raises(ConfigError):
        TripEncoder(hour_reference=24).fit()


@given(st.integers(1_600_000_000, 1_800_000_000), st.floats(-12, 12).map(lambda h: round(h * 2) / 2))
def test_local_hour_day_against_datetime(ts, offset):
    hour, day = local_hour_and_day(np.array([ts]), offset)
    local = dt.datetime.fromtimestamp(ts, dt.timezone(dt.timedelta(hours=offset)))
    assert hour[0] == local.hour
    assert day[0] == local.weekday()


def test_reference_levels_encode_to_zero():
    # 2023-06-12 is a Monday; 03:30 local (UTC-6) is 09:30 UTC
    trip = make_trip(start_ts=parse_timestamp("2023-06-12T09:30:00"), pickup_area=1, dropoff_area=1)
    fv = encode_trip(trip)
    assert fv.values.sum() == 1 + trip.miles + trip.seconds
    assert fv.target == trip.fare


@given(
    st.integers(1_672_531_200, 1_704_067_199),
    st.integers(1, 77),
    st.integers(1, 77),
)
@settings(max_examples=100)
def test_one_hot_decode_roundtrip(ts, pick, drop):
    enc = TripEncoder().fit()
    row = enc.transform([make_trip(start_ts=float(ts), pickup_area=pick, dropoff_area=drop)])[0]
    for block, (start, stop) in enc.blocks_.items():
        assert row[start:stop].sum() in (0.0, 1.0)
    hour, day = local_hour_and_day(np.array([ts]), -6)
    assert enc.decode(row) == {"hour": hour[0], "day": day[0], "pickup_area": pick, "dropoff_area": drop}


def test_interactions():
    enc = TripEncoder(interactions=True).fit()
    trip = make_trip(miles=2.5, start_ts=parse_timestamp("2023-06-14T23:00:00"))  # 17:00 local
    row = enc.transform([trip])[0]
    names = list(enc.feature_names_out_)
    assert row[names.index("miles:hour=17")] == 2.5
    assert row[names.index("hour=17")] == 1.0
    assert row[[i for i, n in enumerate(names) if n.startswith("miles:")]].sum() == 2.5


def test_transform_matches_transform_arrays(small_market):
    enc = TripEncoder().fit()
    trips = small_market.taxi[:50]
    cols = [np.array([getattr(t, f) for t in trips]) for f in ("start_ts", "miles", "seconds", "pickup_area", "dropoff_area")]
    assert_array_equal(enc.transform(trips), enc.transform_arrays(*cols))


def test_missing_values_raise():
    enc = TripEncoder().fit()
    with pytest.raises(EncodingError, match="seconds"):
        enc.transform([make_trip(seconds=None)])
    with pytest.raises(EncodingError):
        enc.transform(["not a trip"])
    assert enc.transform([]).shape == (0, 184)


def test_survey_encoder():
    schema = SurveySchema.default()
    enc = SurveyEncoder(["race", "insurance"], schema).fit()
    names = list(enc.feature_names_out_)
    assert names[0] == "intercept"
    assert "race=White" not in names and "race=Asian/Asian American" in names
    resp = SurveyResponse(wage_band="$14-15", race="Asian/Asian American", insurance="Employer")
    row = enc.transform([resp])[0]
    assert row.sum() == 2.0 and row[names.index("race=Asian/Asian American")] == 1.0
    assert enc.targets([resp])[0] == 14.5
    fv = encode_survey(resp, ["race", "insurance"], schema)
    assert_array_equal(fv.values, row)
    with pytest.raises(EncodingError):
        enc.transform([SurveyResponse(race="White")])


def test_export_design_csv(tmp_path):
    X = np.array([[1.0, 0.1], [1.0, 1 / 3]])
    path = tmp_path / "design.csv"
    export_design_csv(path, X, ["intercept", "x"], y=[2.0, 3.0])
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert_array_equal(back[:, :2], X)
    assert path.read_text().splitlines()[0] == "intercept,x,target"
