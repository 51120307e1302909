"""Encoders turning trips and survey responses into design matrices.

Both encoders are scikit-learn transformers, so a fare surrogate is simply
``make_pipeline(TripEncoder(), OLSRegressor())`` fitted on a list of trips.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import N_COMMUNITY_AREAS, SURVEY_FEATURES, SurveyResponse, SurveySchema, TripRecord
from .exceptions import ConfigError, EncodingError

DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
# 1970-01-01 was a Thursday
_EPOCH_WEEKDAY = 3


def schema_hash(feature_names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(feature_names).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EncodingSpec:
    """How trips are encoded; reference levels encode as all-zero blocks."""

    include_intercept: bool = True
    hour_reference: int = 3
    day_reference: int = 0
    pickup_reference: int = 1
    dropoff_reference: int = 1
    local_offset_hours: float = -6.0
    interactions: bool = False

    def __post_init__(self):
        if not 0 <= self.hour_reference < 24:
            raise ConfigError("hour_reference must be in 0..23")
        if not 0 <= self.day_reference < 7:
            raise ConfigError("day_reference must be in 0..6 (Monday = 0)")
        for name in ("pickup_reference", "dropoff_reference"):
            if not 1 <= getattr(self, name) <= N_COMMUNITY_AREAS:
                raise ConfigError(f"{name} must be in 1..{N_COMMUNITY_AREAS}")

    @property
    def width(self) -> int:
        w = int(self.include_intercept) + 2 + 23 + 6 + 2 * (N_COMMUNITY_AREAS - 1)
        return w + (23 if self.interactions else 0)

    def encoder(self) -> "TripEncoder":
        return TripEncoder(**asdict(self))


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    feature_names: tuple
    target: Optional[float] = None

    @property
    def schema(self) -> str:
        return schema_hash(self.feature_names)


def _levels_without(levels, reference):
    return [lv for lv in levels if lv != reference]


def local_hour_and_day(ts, offset_hours):
    """Hour of day (0-23) and weekday (Monday = 0) after a fixed UTC offset."""
    local = np.asarray(ts, dtype=float) + offset_hours * 3600.0
    hour = np.floor(local / 3600.0).astype(np.int64) % 24
    day = (np.floor(local / 86400.0).astype(np.int64) + _EPOCH_WEEKDAY) % 7
    return hour, day


class TripEncoder(TransformerMixin, BaseEstimator):
    """One-hot encode trips: intercept, miles, seconds, hour, weekday, pickup and dropoff areas.

    ``transform`` takes a sequence of :class:`TripRecord`.
    """

    def __init__(
        self,
        include_intercept=True,
        hour_reference=3,
        day_reference=0,
        pickup_reference=1,
        dropoff_reference=1,
        local_offset_hours=-6.0,
        interactions=False,
    ):
        self.include_intercept = include_intercept
        self.hour_reference = hour_reference
        self.day_reference = day_reference
        self.pickup_reference = pickup_reference
        self.dropoff_reference = dropoff_reference
        self.local_offset_hours = local_offset_hours
        self.interactions = interactions

    @property
    def spec(self) -> EncodingSpec:
        return EncodingSpec(**self.get_params())

    def fit(self, X=None, y=None):
        spec = self.spec  # validates the parameters
        self.hour_levels_ = _levels_without(range(24), spec.hour_reference)
        self.day_levels_ = _levels_without(range(7), spec.day_reference)
        self.pickup_levels_ = _levels_without(range(1, N_COMMUNITY_AREAS + 1), spec.pickup_reference)
        self.dropoff_levels_ = _levels_without(range(1, N_COMMUNITY_AREAS + 1), spec.dropoff_reference)
        names = ["intercept"] if spec.include_intercept else []
        names += ["miles", "seconds"]
        names += [f"hour={h}" for h in self.hour_levels_]
        names += [f"day={DAY_NAMES[d]}" for d in self.day_levels_]
        names += [f"pickup_area={a}" for a in self.pickup_levels_]
        names += [f"dropoff_area={a}" for a in self.dropoff_levels_]
        if spec.interactions:
            names += [f"miles:hour={h}" for h in self.hour_levels_]
        self.feature_names_out_ = np.array(names, dtype=object)
        self.n_features_out_ = len(names)
        offset = int(spec.include_intercept) + 2
        self.blocks_ = {}
        for block, levels in (
            ("hour", self.hour_levels_),
            ("day", self.day_levels_),
            ("pickup_area", self.pickup_levels_),
            ("dropoff_area", self.dropoff_levels_),
        ):
            self.blocks_[block] = (offset, offset + len(levels))
            offset += len(levels)
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()

    def _columns(self, trips):
        n = len(trips)
        try:
            ts = np.fromiter((t.start_ts for t in trips), float, n)
            miles = np.fromiter((t.miles for t in trips), float, n)
            secs = np.fromiter((t.seconds for t in trips), float, n)
            pick = np.fromiter((t.pickup_area for t in trips), np.int64, n)
            drop = np.fromiter((t.dropoff_area for t in trips), np.int64, n)
            complete = not (np.isnan(ts).any() or np.isnan(miles).any() or np.isnan(secs).any())
        except (TypeError, AttributeError):
            complete = False
        if not complete:
            # None becomes NaN in float columns; find the offending record
            for t in trips:
                if not isinstance(t, TripRecord):
                    raise EncodingError(f"expected TripRecord, got {type(t).__name__}")
                for name in ("start_ts", "miles", "seconds", "pickup_area", "dropoff_area"):
                    if getattr(t, name) is None:
                        raise EncodingError(f"trip {t.trip_id!r} has no {name}")
            raise EncodingError("trip columns contain non-finite values")
        for name, arr in (("pickup_area", pick), ("dropoff_area", drop)):
            bad = (arr < 1) | (arr > N_COMMUNITY_AREAS)
            if bad.any():
                raise EncodingError(f"{name} {int(arr[bad][0])} outside 1..{N_COMMUNITY_AREAS}")
        return ts, miles, secs, pick, drop

    def transform(self, X):
        check_is_fitted(self, "feature_names_out_")
        trips = list(X)
        if not trips:
            return np.zeros((0, self.n_features_out_))
        return self.transform_arrays(*self._columns(trips))

    def transform_arrays(self, ts, miles, secs, pick, drop):
        """Encode parallel column arrays (the vectorized core of ``transform``)."""
        check_is_fitted(self, "feature_names_out_")
        miles = np.asarray(miles, dtype=float)
        hour, day = local_hour_and_day(ts, self.local_offset_hours)
        n = len(miles)
        out = np.zeros((n, self.n_features_out_))
        col = 0
        if self.include_intercept:
            out[:, 0] = 1.0
            col = 1
        out[:, col] = miles
        out[:, col + 1] = secs
        rows = np.arange(n)
        for block, values, levels in (
            ("hour", hour, self.hour_levels_),
            ("day", day, self.day_levels_),
            ("pickup_area", pick, self.pickup_levels_),
            ("dropoff_area", drop, self.dropoff_levels_),
        ):
            start, _ = self.blocks_[block]
            lookup = np.full(max(levels) + 2, -1, dtype=np.int64)
            lookup[np.asarray(levels)] = np.arange(len(levels))
            pos = lookup[values]
            hit = pos >= 0
            out[rows[hit], start + pos[hit]] = 1.0
        if self.interactions:
            start, stop = self.blocks_["hour"]
            out[:, self.n_features_out_ - (stop - start):] = out[:, start:stop] * miles[:, None]
        return out

    def decode(self, row) -> dict:
        """Recover hour, weekday and areas from one encoded row."""
        check_is_fitted(self, "feature_names_out_")
        row = np.asarray(row)
        out = {}
        refs = {
            "hour": self.hour_reference,
            "day": self.day_reference,
            "pickup_area": self.pickup_reference,
            "dropoff_area": self.dropoff_reference,
        }
        levels = {
            "hour": self.hour_levels_,
            "day": self.day_levels_,
            "pickup_area": self.pickup_levels_,
            "dropoff_area": self.dropoff_levels_,
        }
        for block, (start, stop) in self.blocks_.items():
            hits = np.flatnonzero(row[start:stop])
            out[block] = levels[block][hits[0]] if len(hits) else refs[block]
        return out


def encode_trip(trip: TripRecord, spec: EncodingSpec = EncodingSpec()) -> FeatureVector:
    enc = spec.encoder().fit()
    return FeatureVector(enc.transform([trip])[0], tuple(enc.feature_names_out_), trip.fare)


class SurveyEncoder(TransformerMixin, BaseEstimator):
    """Dummy-code survey answers against each feature's reference level.

    ``transform`` takes a sequence of :class:`SurveyResponse`; use
    :meth:`targets` for the wage-band midpoints.
    """

    def __init__(self, features=SURVEY_FEATURES, schema=None, include_intercept=True):
        self.features = features
        self.schema = schema
        self.include_intercept = include_intercept

    def _schema(self) -> SurveySchema:
        return self.schema if self.schema is not None else SurveySchema.default()

    def fit(self, X=None, y=None):
        schema = self._schema()
        names = ["intercept"] if self.include_intercept else []
        self.blocks_ = {}
        for feature in self.features:
            cat = schema[feature]
            start = len(names)
            names += [f"{feature}={lv}" for lv in cat.levels[1:]]
            self.blocks_[feature] = (start, len(names))
        self.feature_names_out_ = np.array(names, dtype=object)
        self.n_features_out_ = len(names)
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()

    def transform(self, X):
        check_is_fitted(self, "feature_names_out_")
        schema = self._schema()
        responses = list(X)
        out = np.zeros((len(responses), self.n_features_out_))
        if self.include_intercept:
            out[:, 0] = 1.0
        for feature in self.features:
            cat = schema[feature]
            index = {lv: i for i, lv in enumerate(cat.levels)}
            start, _ = self.blocks_[feature]
            for row, resp in enumerate(responses):
                value = getattr(resp, feature)
                if value is None:
                    raise EncodingError(f"response {row} has no {feature}")
                try:
                    pos = index[value]
                except KeyError:
                    raise EncodingError(f"{value!r} is not a level of {feature!r}") from None
                if pos:
                    out[row, start + pos - 1] = 1.0
        return out

    def targets(self, X) -> np.ndarray:
        bands = self._schema().wage_bands
        out = []
        for resp in X:
            if resp.wage_band is None:
                raise EncodingError("response has no wage_band")
            try:
                out.append(bands.midpoint(resp.wage_band))
            except ValueError:
                raise EncodingError(f"{resp.wage_band!r} is not a wage band") from None
        return np.asarray(out, dtype=float)


def encode_survey(response: SurveyResponse, features=SURVEY_FEATURES, schema=None) -> FeatureVector:
    enc = SurveyEncoder(features, schema).fit()
    return FeatureVector(
        enc.transform([response])[0], tuple(enc.feature_names_out_), float(enc.targets([response])[0])
    )


def export_design_csv(path, X, feature_names, y=None):
    """Write a design matrix with a header row; the target, if given, goes last."""
    X = np.asarray(X)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(feature_names) + (["target"] if y is not None else []))
        for i, row in enumerate(X):
            vals = [repr(float(v)) for v in row]
            if y is not None:
                vals.append(repr(float(y[i])))
            writer.writerow(vals)
