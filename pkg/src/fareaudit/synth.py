"""Synthetic two-sided market and driver survey with known ground truth.

Used to check the audit's level and power where the real datasets cannot be
reproduced.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import N_COMMUNITY_AREAS, SURVEY_FEATURES, SurveyResponse, SurveySchema, TripRecord, format_timestamp
from .exceptions import ConfigError
from .features import EncodingSpec
from .ingest import TAXI_FIELD_MAP, TNP_FIELD_MAP, atomic_write
from .stats import normal_ppf

YEAR_START = dt.datetime(2023, 1, 1, tzinfo=dt.timezone.utc).timestamp()
# days 1..363 of 2023 keep every trip inside the filter windows for UTC offsets up to +/-23h
_DAY_RANGE = (1, 364)


def default_pricing(encoding: EncodingSpec = EncodingSpec()) -> np.ndarray:
    """A plausible meter: base fare, per-mile and per-second rates, rush-hour and airport premiums."""
    enc = encoding.encoder().fit()
    beta = np.zeros(enc.n_features_out_)
    premiums = {
        "intercept": 3.0,
        "miles": 1.5,
        "seconds": 0.005,
        "day=Fri": 0.5,
        "day=Sat": 0.75,
        "pickup_area=76": 5.0,
        "pickup_area=56": 3.0,
        "pickup_area=8": 1.0,
        "pickup_area=32": 1.0,
        "dropoff_area=76": 4.0,
        "dropoff_area=56": 2.5,
        "dropoff_area=8": 0.75,
    }
    premiums.update({f"hour={h}": 2.0 for h in (7, 8, 9, 16, 17, 18)})
    premiums.update({f"hour={h}": 1.0 for h in (0, 1, 2)})
    index = {name: i for i, name in enumerate(enc.feature_names_out_)}
    for name, value in premiums.items():
        if name in index:
            beta[index[name]] = value
    return beta


def rush_hour_profile() -> np.ndarray:
    """Bimodal hour-of-day distribution peaking at the morning and evening commutes."""
    h = np.arange(24)
    w = 1.0 + 4.0 * np.exp(-0.5 * ((h - 8.0) / 1.5) ** 2) + 5.0 * np.exp(-0.5 * ((h - 17.5) / 2.0) ** 2)
    w[:5] *= 0.4
    return w / w.sum()


def zipf_areas(exponent: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, N_COMMUNITY_AREAS + 1) ** exponent
    return w / w.sum()


@dataclass(frozen=True)
class MarketSpec:
    """Ground truth for a synthetic market.

    Rideshare fares are ``x . beta_rideshare + delta + noise``; taxi fares
    are ``x . beta_taxi + noise``. ``beta_taxi=None`` means the two share a
    pricing function; ``beta_rideshare=None`` uses :func:`default_pricing`.
    """

    beta_rideshare: Optional[tuple] = None
    beta_taxi: Optional[tuple] = None
    sigma_rideshare: float = 2.0
    sigma_taxi: float = 2.0
    delta: float = 0.0
    n_tnp: int = 5000
    n_taxi: int = 2000
    area_probs: Optional[tuple] = None
    hour_probs: Optional[tuple] = None
    miles_mu: float = 1.1
    miles_sigma: float = 0.7
    max_miles: float = 100.0
    speed_mph: float = 18.0
    speed_sigma: float = 0.3
    encoding: EncodingSpec = field(default_factory=EncodingSpec)
    seed: int = 0

    def __post_init__(self):
        if self.sigma_rideshare < 0 or self.sigma_taxi < 0:
            raise ConfigError("noise sigmas must be >= 0")
        if self.n_tnp < 1 or self.n_taxi < 1:
            raise ConfigError("market sizes must be >= 1")
        width = self.encoding.width
        for name in ("beta_rideshare", "beta_taxi"):
            beta = getattr(self, name)
            if beta is not None:
                beta = tuple(float(b) for b in beta)
                if len(beta) != width:
                    raise ConfigError(f"{name} has {len(beta)} entries, encoding width is {width}")
                object.__setattr__(self, name, beta)
        for name, size in (("area_probs", N_COMMUNITY_AREAS), ("hour_probs", 24)):
            probs = getattr(self, name)
            if probs is not None:
                probs = tuple(float(p) for p in probs)
                if len(probs) != size or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
                    raise ConfigError(f"{name} must be {size} nonnegative probabilities summing to 1")
                object.__setattr__(self, name, probs)

    def rideshare_beta(self) -> np.ndarray:
        if self.beta_rideshare is None:
            return default_pricing(self.encoding)
        return np.asarray(self.beta_rideshare)

    def taxi_beta(self) -> np.ndarray:
        return self.rideshare_beta() if self.beta_taxi is None else np.asarray(self.beta_taxi)


@dataclass(frozen=True)
class Market:
    tnp: list
    taxi: list
    floored: dict

    @property
    def taxi_fares(self) -> np.ndarray:
        return np.array([t.fare for t in self.taxi])


def _covariates(rng, n, spec: MarketSpec):
    areas = np.asarray(spec.area_probs) if spec.area_probs is not None else zipf_areas()
    hours = np.asarray(spec.hour_probs) if spec.hour_probs is not None else rush_hour_profile()
    day = rng.integers(*_DAY_RANGE, size=n)
    hour = rng.choice(24, size=n, p=hours)
    within = rng.integers(0, 3600, size=n)
    local = YEAR_START + day * 86400.0 + hour * 3600.0 + within
    ts = local - spec.encoding.local_offset_hours * 3600.0
    miles = np.clip(rng.lognormal(spec.miles_mu, spec.miles_sigma, size=n), 0.1, spec.max_miles)
    speed = spec.speed_mph * rng.lognormal(0.0, spec.speed_sigma, size=n)
    seconds = miles / speed * 3600.0
    pick = rng.choice(N_COMMUNITY_AREAS, size=n, p=areas) + 1
    drop = rng.choice(N_COMMUNITY_AREAS, size=n, p=areas) + 1
    return ts, miles, seconds, pick, drop


def _records(source, prefix, cols, fares):
    ts, miles, seconds, pick, drop = cols
    return [
        TripRecord(
            source=source,
            trip_id=f"{prefix}-{i:07d}",
            start_ts=float(ts[i]),
            miles=float(miles[i]),
            seconds=float(seconds[i]),
            pickup_area=int(pick[i]),
            dropoff_area=int(drop[i]),
            fare=float(fares[i]),
        )
        for i in range(len(fares))
    ]


def generate_market(spec: MarketSpec) -> Market:
    """Draw rideshare and taxi trips; fares are floored at zero and the floors counted."""
    rng = np.random.default_rng(spec.seed)
    enc = spec.encoding.encoder().fit()
    tnp_cols = _covariates(rng, spec.n_tnp, spec)
    taxi_cols = _covariates(rng, spec.n_taxi, spec)
    tnp_noise = rng.standard_normal(spec.n_tnp)
    taxi_noise = rng.standard_normal(spec.n_taxi)
    tnp_fare = enc.transform_arrays(*tnp_cols) @ spec.rideshare_beta() + spec.delta + spec.sigma_rideshare * tnp_noise
    taxi_fare = enc.transform_arrays(*taxi_cols) @ spec.taxi_beta() + spec.sigma_taxi * taxi_noise
    floored = {"tnp": int(np.sum(tnp_fare < 0)), "taxi": int(np.sum(taxi_fare < 0))}
    tnp_fare = np.maximum(tnp_fare, 0.0)
    taxi_fare = np.maximum(taxi_fare, 0.0)
    return Market(
        tnp=_records("rideshare", f"tnp{spec.seed}", tnp_cols, tnp_fare),
        taxi=_records("taxi", f"taxi{spec.seed}", taxi_cols, taxi_fare),
        floored=floored,
    )


def _trip_row(trip: TripRecord, field_map: dict) -> dict:
    local = {
        "trip_id": trip.trip_id,
        "start_ts": format_timestamp(trip.start_ts),
        "miles": repr(trip.miles),
        "seconds": repr(trip.seconds),
        "pickup_area": str(trip.pickup_area),
        "dropoff_area": str(trip.dropoff_area),
        "fare": repr(trip.fare),
        "additional_charges": repr(trip.additional_charges),
        "tolls": repr(trip.tolls),
        "shared": "true" if trip.shared else "false",
    }
    return {remote: local[name] for remote, name in field_map.items()}


def export_trips_csv(path, trips: Sequence[TripRecord], field_map=None):
    """Write trips in the portal's column schema so they load like ingested data."""
    if field_map is None:
        field_map = TAXI_FIELD_MAP if trips and trips[0].source == "taxi" else TNP_FIELD_MAP
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(field_map), lineterminator="\r\n")
    writer.writeheader()
    for trip in trips:
        writer.writerow(_trip_row(trip, field_map))
    atomic_write(path, buf.getvalue().encode("utf-8"))


DEFAULT_EFFECTS = {
    "race": {"Asian/Asian American": -5.0, "Hispanic/Latino": -1.0},
    "insurance": {"Medicaid/Medicare": -3.0},
    "tenure_band": {"<1 year": -1.5, "10+ years": -1.5},
}


@dataclass(frozen=True)
class SurveySpec:
    """Synthetic driver survey.

    A latent hourly wage ``base_wage + sum(effects) + N(0, noise)`` is cut
    into bands halfway between adjacent band midpoints. With
    ``independent=True`` bands are drawn independently of every feature.
    """

    n: int = 3000
    effects: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_EFFECTS.items()})
    base_wage: float = 16.0
    noise: float = 3.0
    missing_rate: float = 0.0
    independent: bool = False
    schema: SurveySchema = field(default_factory=SurveySchema.default)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("survey size must be >= 1")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        for feature, effects in self.effects.items():
            levels = self.schema[feature].levels
            for level in effects:
                if level not in levels:
                    raise ConfigError(f"{level!r} is not a level of {feature!r}")


def generate_survey(spec: SurveySpec) -> list:
    rng = np.random.default_rng(spec.seed)
    bands = spec.schema.wage_bands
    mids = np.asarray(bands.midpoints)
    edges = (mids[1:] + mids[:-1]) / 2.0
    n = spec.n
    answers = {}
    latent = np.full(n, spec.base_wage)
    for feature in SURVEY_FEATURES:
        levels = spec.schema[feature].levels
        idx = rng.integers(0, len(levels), size=n)
        answers[feature] = [levels[i] for i in idx]
        shift = np.array([spec.effects.get(feature, {}).get(lv, 0.0) for lv in levels])
        latent += shift[idx]
    latent += spec.noise * rng.standard_normal(n)
    if spec.independent:
        band_idx = rng.integers(0, len(bands), size=n)
    else:
        band_idx = np.searchsorted(edges, latent, side="right")
    missing = rng.uniform(size=(n, len(SURVEY_FEATURES))) < spec.missing_rate
    out = []
    for i in range(n):
        values = {"wage_band": bands.labels[band_idx[i]]}
        for j, feature in enumerate(SURVEY_FEATURES):
            values[feature] = None if missing[i, j] else answers[feature][i]
        out.append(SurveyResponse(**values))
    return out


def export_survey_csv(path, responses: Sequence[SurveyResponse]):
    cols = ["wage_band", *SURVEY_FEATURES]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(cols)
    for r in responses:
        writer.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in cols])
    atomic_write(path, buf.getvalue().encode("utf-8"))


def wilson_interval(successes: int, trials: int, level: float = 0.95):
    z = normal_ppf((1.0 + level) / 2.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class StudyResult:
    """Rejection counts of a replicated fare audit.

    ``p_values`` holds one array per test mode, so rates at other levels or
    for the other mode come from :meth:`rate` without re-running.
    """

    alpha: float
    mode: str
    delta: float
    p_values: dict

    @property
    def replications(self) -> int:
        return len(self.p_values[self.mode])

    def rejections(self, alpha=None, mode=None) -> int:
        alpha = self.alpha if alpha is None else alpha
        return int(np.sum(np.asarray(self.p_values[mode or self.mode]) < alpha))

    def rate(self, alpha=None, mode=None) -> float:
        return self.rejections(alpha, mode) / self.replications

    def interval(self, alpha=None, mode=None, level=0.95):
        return wilson_interval(self.rejections(alpha, mode), self.replications, level)

    def to_dict(self) -> dict:
        lo, hi = self.interval()
        return {
            "alpha": self.alpha,
            "mode": self.mode,
            "delta": self.delta,
            "replications": self.replications,
            "rejections": self.rejections(),
            "rate": self.rate(),
            "interval": [lo, hi],
            "rate_by_mode": {m: self.rate(mode=m) for m in self.p_values},
        }


def _replicate(spec: MarketSpec, config, seed: int) -> dict:
    from .audit import run_fare_audit

    market = generate_market(replace(spec, seed=seed))
    report = run_fare_audit(market.tnp, market.taxi, replace(config, seed=seed))
    return {m: r.p_value for m, r in report.t_eff.items()}


def replicate_audits(spec: MarketSpec, replications: int, alpha: float = 0.05, config=None, seed0: int = 0, n_jobs=None) -> StudyResult:
    """Run the full fare audit on ``replications`` fresh markets (seeds ``seed0 + i``)."""
    from .audit import FareAuditConfig

    config = config or FareAuditConfig(mode="independent")
    seeds = [seed0 + i for i in range(replications)]
    if n_jobs and n_jobs != 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(delayed(_replicate)(spec, config, s) for s in seeds)
    else:
        rows = [_replicate(spec, config, s) for s in seeds]
    p_values = {m: np.array([r[m] for r in rows]) for m in rows[0]}
    return StudyResult(alpha=alpha, mode=config.mode, delta=spec.delta, p_values=p_values)


def calibration_study(spec: MarketSpec, replications: int = 200, alpha: float = 0.05, config=None, seed0: int = 0, n_jobs=None) -> StudyResult:
    """Empirical false-rejection rate of the fare audit on a market with no overcharge."""
    if replications < 50:
        raise ConfigError("a calibration study needs at least 50 replications")
    if spec.delta != 0:
        raise ConfigError("calibration requires delta = 0")
    return replicate_audits(spec, replications, alpha, config, seed0, n_jobs)


def power_study(spec: MarketSpec, replications: int = 200, alpha: float = 0.05, config=None, seed0: int = 0, n_jobs=None) -> StudyResult:
    """Empirical rejection rate when rideshare fares carry an overcharge ``delta``."""
    if replications < 50:
        raise ConfigError("a power study needs at least 50 replications")
    return replicate_audits(spec, replications, alpha, config, seed0, n_jobs)


def power_curve(spec: MarketSpec, deltas: Sequence[float], replications: int = 200, alpha: float = 0.05, config=None, seed0: int = 0) -> list:
    """Power at each overcharge in ``deltas`` using common random numbers (shared seeds)."""
    return [replicate_audits(replace(spec, delta=d), replications, alpha, config, seed0) for d in deltas]


def analytic_power(delta: float, sigma_taxi: float, sigma_model: float, n: int, alpha: float = 0.05) -> float:
    """Normal approximation to one-sided power in independent mode."""
    se = math.sqrt((sigma_taxi**2 + sigma_model**2) / n)
    crit = normal_ppf(1.0 - alpha)
    return 1.0 - 0.5 * math.erfc(-(crit - delta / se) / math.sqrt(2.0))


__all__ = [
    "Market",
    "MarketSpec",
    "StudyResult",
    "SurveySpec",
    "analytic_power",
    "calibration_study",
    "default_pricing",
    "export_survey_csv",
    "export_trips_csv",
    "generate_market",
    "generate_survey",
    "power_curve",
    "power_study",
    "replicate_audits",
    "wilson_interval",
]
