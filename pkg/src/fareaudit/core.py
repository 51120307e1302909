"""Domain types for trips and survey responses, and the dataset filters."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Iterator, Optional, Sequence

from .exceptions import ConfigError, ContractError

N_COMMUNITY_AREAS = 77
SOURCES = ("rideshare", "taxi")

SURVEY_FEATURES = (
    "race",
    "insurance",
    "tenure_band",
    "weekly_hours_band",
    "age_band",
    "education",
)


def parse_timestamp(value) -> float:
    """Parse an ISO-8601 timestamp (or epoch seconds) as UTC epoch seconds.

    Naive timestamps are taken to be UTC; local-time bucketing happens later
    with a fixed configured offset.
    """
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return stamp.timestamp()


def format_timestamp(ts: float) -> str:
    """Inverse of :func:`parse_timestamp` in the portal's floating style."""
    stamp = dt.datetime.fromtimestamp(ts, tz=dt.timezone.utc)
    return stamp.strftime("%Y-%m-%dT%H:%M:%S.000")


@dataclass(frozen=True, slots=True)
class TripRecord:
    """One normalized trip.

    ``fare`` is the base trip fare with extras excluded. Optional fields are
    ``None`` when the source row left them blank; the filters decide what to
    do with such records.
    """

    source: str
    trip_id: str
    start_ts: Optional[float]
    miles: Optional[float]
    seconds: Optional[float]
    pickup_area: Optional[int]
    dropoff_area: Optional[int]
    fare: Optional[float]
    additional_charges: float = 0.0
    tolls: float = 0.0
    shared: bool = False

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ContractError(f"unknown trip source {self.source!r}")
        for name in ("miles", "seconds", "fare"):
            value = getattr(self, name)
            if value is not None and not (value >= 0 and math.isfinite(value)):
                raise ContractError(f"{name} must be finite and >= 0, got {value!r}")
        for name in ("pickup_area", "dropoff_area"):
            value = getattr(self, name)
            if value is not None and not 1 <= value <= N_COMMUNITY_AREAS:
                raise ContractError(f"{name} must be in 1..{N_COMMUNITY_AREAS}, got {value!r}")


TRIP_FIELDS = tuple(f.name for f in fields(TripRecord))
OPTIONAL_TRIP_FIELDS = ("start_ts", "miles", "seconds", "pickup_area", "dropoff_area", "fare")


@dataclass(frozen=True)
class WageBandSchema:
    """Ordered hourly-wage bands with the midpoints used as regression targets."""

    labels: tuple
    midpoints: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "midpoints", tuple(float(m) for m in self.midpoints))
        if len(self.labels) != len(self.midpoints):
            raise ConfigError("wage band labels and midpoints differ in length")
        if len(self.labels) < 2:
            raise ConfigError("need at least two wage bands")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("wage band labels must be unique")
        if any(b <= a for a, b in zip(self.midpoints, self.midpoints[1:])):
            raise ConfigError("wage band midpoints must be strictly increasing")

    @classmethod
    def default(cls) -> "WageBandSchema":
        return cls(
            labels=("<$10", "$10-11", "$12-13", "$14-15", "$16-17", "$18-19", "$20+"),
            midpoints=(9.0, 10.5, 12.5, 14.5, 16.5, 18.5, 21.0),
        )

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ContractError(f"unknown wage band {label!r}") from None

    def midpoint(self, label: str) -> float:
        return self.midpoints[self.index(label)]

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class CategorySchema:
    """Declared levels of one survey feature. The first level is the reference."""

    name: str
    levels: tuple
    ordinal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 1:
            raise ConfigError(f"feature {self.name!r} declares no levels")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigError(f"feature {self.name!r} has duplicate levels")

    @property
    def reference(self):
        return self.levels[0]


DEFAULT_LEVELS = {
    "race": (
        ("White", "Black/African American", "Hispanic/Latino", "Asian/Asian American", "Other/Multiracial"),
        False,
    ),
    "insurance": (("Employer", "Marketplace", "Medicaid/Medicare", "Other", "None"), False),
    "tenure_band": (("<1 year", "1-2 years", "3-5 years", "6-10 years", "10+ years"), True),
    "weekly_hours_band": (("<10", "10-19", "20-29", "30-39", "40+"), True),
    "age_band": (("18-29", "30-39", "40-49", "50-59", "60+"), True),
    "education": (("High school or less", "Some college", "Bachelor's", "Graduate"), True),
}


@dataclass(frozen=True)
class SurveySchema:
    """Level sets for every modeled survey feature plus the wage bands."""

    categories: dict
    wage_bands: WageBandSchema = field(default_factory=WageBandSchema.default)

    @classmethod
    def default(cls) -> "SurveySchema":
        cats = {
            name: CategorySchema(name, levels, ordinal)
            for name, (levels, ordinal) in DEFAULT_LEVELS.items()
        }
        return cls(cats, WageBandSchema.default())

    def __getitem__(self, name) -> CategorySchema:
        try:
            return self.categories[name]
        except KeyError:
            raise ConfigError(f"unknown survey feature {name!r}") from None

    def validate(self, response: "SurveyResponse"):
        """Raise ContractError if any present value is outside its schema."""
        for name, cat in self.categories.items():
            value = getattr(response, name)
            if value is not None and value not in cat.levels:
                raise ContractError(f"{value!r} is not a level of {name!r}")
        if response.wage_band is not None:
            self.wage_bands.index(response.wage_band)


@dataclass(frozen=True, slots=True)
class SurveyResponse:
    """One driver's answers to the analyzed survey questions.

    Every field is optional; ``None`` marks non-response.
    """

    wage_band: Optional[str] = None
    race: Optional[str] = None
    insurance: Optional[str] = None
    tenure_band: Optional[str] = None
    weekly_hours_band: Optional[str] = None
    age_band: Optional[str] = None
    education: Optional[str] = None


@dataclass(frozen=True)
class FilterSpec:
    """Predicates a trip must satisfy to enter an analysis.

    ``date_window`` is half-open ``[start, end)`` in UTC epoch seconds.
    A distance is invalid when it is ``<= 0`` (with
    ``require_positive_distance``) or exceeds ``max_miles``.
    """

    date_window: Optional[tuple] = None
    exclude_shared: bool = False
    require_positive_distance: bool = False
    max_miles: Optional[float] = None
    require_zero_tolls: bool = False
    required_fields: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "required_fields", frozenset(self.required_fields))
        unknown = self.required_fields - set(TRIP_FIELDS)
        if unknown:
            raise ConfigError(f"unknown required field(s): {', '.join(sorted(unknown))}")
        if self.date_window is not None:
            start, end = self.date_window
            start, end = parse_timestamp(start), parse_timestamp(end)
            if not start < end:
                raise ConfigError("date_window start must precede end")
            object.__setattr__(self, "date_window", (start, end))
        if self.max_miles is not None and self.max_miles <= 0:
            raise ConfigError("max_miles must be positive")

    @classmethod
    def tnp_default(cls) -> "FilterSpec":
        """Rideshare rules: no pooled trips, nothing after January 2024."""
        return cls(
            date_window=("2023-01-01T00:00:00", "2024-02-01T00:00:00"),
            exclude_shared=True,
            required_fields=frozenset(OPTIONAL_TRIP_FIELDS),
        )

    @classmethod
    def taxi_default(cls) -> "FilterSpec":
        """Taxi rules: 2023 onward, valid distance, no tolls."""
        return cls(
            date_window=("2023-01-01T00:00:00", "2024-01-01T00:00:00"),
            require_positive_distance=True,
            max_miles=150.0,
            require_zero_tolls=True,
            required_fields=frozenset(OPTIONAL_TRIP_FIELDS),
        )

    def effective_required(self) -> frozenset:
        needed = set(self.required_fields)
        if self.date_window is not None:
            needed.add("start_ts")
        if self.require_positive_distance or self.max_miles is not None:
            needed.add("miles")
        return frozenset(needed)

    def first_violation(self, trip: TripRecord) -> Optional[str]:
        """Name of the first rule ``trip`` breaks, or None if it passes."""
        for name in self.effective_required():
            if getattr(trip, name) is None:
                return "missing_fields"
        if self.date_window is not None:
            start, end = self.date_window
            if not start <= trip.start_ts < end:
                return "out_of_window"
        if self.exclude_shared and trip.shared:
            return "shared"
        if self.require_positive_distance and trip.miles <= 0:
            return "invalid_distance"
        if self.max_miles is not None and trip.miles > self.max_miles:
            return "invalid_distance"
        if self.require_zero_tolls and trip.tolls != 0:
            return "tolls"
        return None


FILTER_RULES = ("malformed", "missing_fields", "out_of_window", "shared", "invalid_distance", "tolls")


@dataclass
class FilterStats:
    """Per-rule drop counts. Each dropped record is charged to its first failing rule."""

    input: int = 0
    retained: int = 0
    dropped: dict = field(default_factory=lambda: dict.fromkeys(FILTER_RULES, 0))

    @property
    def shared_dropped(self) -> int:
        return self.dropped["shared"]

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())

    def merge(self, other: "FilterStats") -> "FilterStats":
        out = FilterStats(self.input + other.input, self.retained + other.retained)
        out.dropped = {k: self.dropped[k] + other.dropped[k] for k in FILTER_RULES}
        return out

    def dominant_rule(self) -> Optional[str]:
        """The rule responsible for most drops (first in rule order on ties)."""
        if self.total_dropped == 0:
            return None
        return max(FILTER_RULES, key=lambda k: self.dropped[k])

    def to_dict(self) -> dict:
        return {"input": self.input, "retained": self.retained, "dropped": dict(self.dropped)}


def iter_filter_trips(records: Iterable, spec: FilterSpec, stats: FilterStats) -> Iterator[TripRecord]:
    """Lazily filter ``records``, updating ``stats`` as the stream is consumed.

    Items that are not :class:`TripRecord` instances (e.g. ``None`` from a
    failed parse) count as malformed.
    """
    for record in records:
        stats.input += 1
        if not isinstance(record, TripRecord):
            stats.dropped["malformed"] += 1
            continue
        rule = spec.first_violation(record)
        if rule is None:
            stats.retained += 1
            yield record
        else:
            stats.dropped[rule] += 1


def filter_trips(records: Iterable, spec: FilterSpec) -> tuple[list, FilterStats]:
    """Filter eagerly, returning the retained trips in order and the drop counts."""
    stats = FilterStats()
    kept = list(iter_filter_trips(records, spec, stats))
    return kept, stats


def filter_survey(responses: Iterable[SurveyResponse], features: Sequence[str]) -> Iterator[SurveyResponse]:
    """Keep responses that answered every feature in ``features`` and the wage question."""
    allowed = set(SURVEY_FEATURES) | {"wage_band"}
    for name in features:
        if name not in allowed:
            raise ConfigError(f"unknown survey feature {name!r}")
    needed = tuple(dict.fromkeys(["wage_band", *features]))
    return (r for r in responses if all(getattr(r, n) is not None for n in needed))
