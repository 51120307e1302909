"""Run configuration read from a ``key = value`` file with ``[section]`` headers.

Lists are comma-separated and ``#`` starts a comment. Unknown sections and
keys are rejected so that typos fail loudly.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .audit import FareAuditConfig
from .core import SURVEY_FEATURES, CategorySchema, FilterSpec, OPTIONAL_TRIP_FIELDS, SurveySchema, WageBandSchema
from .exceptions import ConfigError
from .features import EncodingSpec
from .ingest import CHICAGO_PORTAL, SURVEY_FIELD_MAP, DatasetSource
from .synth import MarketSpec, SurveySpec, zipf_areas

FIXTURE_PATH = Path(__file__).with_name("data") / "fixture.cfg"


def _bool(text):
    value = text.strip().lower()
    if value in ("true", "yes", "on", "1"):
        return True
    if value in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _float_list(text):
    return [float(v) for v in _list(text)]


def _optional(parser):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else parser(text)

    return parse


def _field_map(text):
    out = {}
    for pair in _list(text):
        remote, sep, local = pair.partition(":")
        if not sep:
            raise ValueError(f"field_map entry {pair!r} is not remote:local")
        out[remote.strip()] = local.strip()
    return out


_FILTER_KEYS = {
    "date_start": _optional(str),
    "date_end": _optional(str),
    "exclude_shared": _bool,
    "require_positive_distance": _bool,
    "max_miles": _optional(float),
    "require_zero_tolls": _bool,
    "required_fields": _list,
}

_SOURCE_KEYS = {
    "base_url": str,
    "dataset_id": str,
    "format": str,
    "order": _optional(str),
    "page_size": int,
    "app_token": _optional(str),
    "where": _optional(str),
    "max_retries": int,
    "backoff": float,
    "min_delay": float,
    "timeout": float,
    "field_map": _field_map,
}

SCHEMA = {
    "run": {"seed": int},
    "filter.tnp": _FILTER_KEYS,
    "filter.taxi": _FILTER_KEYS,
    "encoding": {
        "include_intercept": _bool,
        "hour_reference": int,
        "day_reference": int,
        "pickup_reference": int,
        "dropoff_reference": int,
        "local_offset_hours": float,
        "interactions": _bool,
    },
    "audit": {
        "test_fraction": float,
        "mode": str,
        "alternative": str,
        "level": float,
        "alpha": float,
        "sample_cap": _optional(int),
        "sigma_override": _optional(float),
        "continuity": _bool,
    },
    "market": {
        "sigma_rideshare": float,
        "sigma_taxi": float,
        "delta": float,
        "n_tnp": int,
        "n_taxi": int,
        "zipf_exponent": float,
        "miles_mu": float,
        "miles_sigma": float,
        "max_miles": float,
        "speed_mph": float,
        "speed_sigma": float,
    },
    "survey_synth": {
        "n": int,
        "base_wage": float,
        "noise": float,
        "missing_rate": float,
        "independent": _bool,
    },
    "study": {
        "kind": str,
        "replications": int,
        "alpha": float,
    },
    "wage_bands": {"labels": _list, "midpoints": _float_list},
    "survey": {
        "features": _list,
        "correction": str,
        "yates": _bool,
        **{name: _list for name in SURVEY_FEATURES},
    },
    "source.tnp": _SOURCE_KEYS,
    "source.taxi": _SOURCE_KEYS,
    "source.survey": _SOURCE_KEYS,
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; accessors build the typed objects each module wants."""

    sections: dict = field(default_factory=dict)
    path: Optional[str] = None
    text: str = ""

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    @property
    def seed(self) -> int:
        return self.get("run", "seed", 0)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def filter_spec(self, kind: str) -> FilterSpec:
        base = FilterSpec.tnp_default() if kind in ("tnp", "rideshare") else FilterSpec.taxi_default()
        sec = self.sections.get("filter.tnp" if kind in ("tnp", "rideshare") else "filter.taxi", {})
        window = base.date_window
        if "date_start" in sec or "date_end" in sec:
            start = sec.get("date_start", window[0] if window else None)
            end = sec.get("date_end", window[1] if window else None)
            window = None if start is None or end is None else (start, end)
        return FilterSpec(
            date_window=window,
            exclude_shared=sec.get("exclude_shared", base.exclude_shared),
            require_positive_distance=sec.get("require_positive_distance", base.require_positive_distance),
            max_miles=sec.get("max_miles", base.max_miles),
            require_zero_tolls=sec.get("require_zero_tolls", base.require_zero_tolls),
            required_fields=frozenset(sec.get("required_fields", OPTIONAL_TRIP_FIELDS)),
        )

    def encoding(self) -> EncodingSpec:
        return EncodingSpec(**self.sections.get("encoding", {}))

    def audit(self, **overrides) -> FareAuditConfig:
        values = dict(self.sections.get("audit", {}))
        values.update({k: v for k, v in overrides.items() if v is not None})
        values.setdefault("seed", self.seed)
        return FareAuditConfig(encoding=self.encoding(), **values)

    def market(self, seed=None) -> MarketSpec:
        values = dict(self.sections.get("market", {}))
        exponent = values.pop("zipf_exponent", None)
        if exponent is not None:
            values["area_probs"] = tuple(zipf_areas(exponent))
        return MarketSpec(encoding=self.encoding(), seed=self.seed if seed is None else seed, **values)

    def survey_schema(self) -> SurveySchema:
        default = SurveySchema.default()
        sec = self.sections.get("survey", {})
        cats = {}
        for name, cat in default.categories.items():
            cats[name] = CategorySchema(name, sec[name], cat.ordinal) if name in sec else cat
        bands = default.wage_bands
        wb = self.sections.get("wage_bands", {})
        if wb:
            bands = WageBandSchema(wb.get("labels", bands.labels), wb.get("midpoints", bands.midpoints))
        return SurveySchema(cats, bands)

    def survey_features(self) -> list:
        return self.get("survey", "features", list(SURVEY_FEATURES))

    def survey_spec(self, seed=None) -> SurveySpec:
        values = dict(self.sections.get("survey_synth", {}))
        return SurveySpec(schema=self.survey_schema(), seed=self.seed if seed is None else seed, **values)

    def source(self, kind: str) -> DatasetSource:
        sec = dict(self.sections.get(f"source.{kind}", {}))
        if kind == "tnp":
            base = DatasetSource.chicago_tnp()
        elif kind == "taxi":
            base = DatasetSource.chicago_taxi()
        elif kind == "survey":
            if "dataset_id" not in sec:
                raise ConfigError("[source.survey] needs a dataset_id")
            base = DatasetSource(CHICAGO_PORTAL, sec["dataset_id"], kind="survey", field_map=dict(SURVEY_FIELD_MAP), order=None)
        else:
            raise ConfigError(f"unknown source {kind!r}")
        return replace(base, **sec)


def parse_config(text: str, path=None) -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",), default_section="__defaults__"
    )
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        keys = SCHEMA[name]
        parsed = {}
        for key, raw in parser.items(name):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                parsed[key] = keys[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key} in [{name}]: {exc}") from None
        sections[name] = parsed
    config = RunConfig(sections, None if path is None else str(path), text)
    # build every typed object once so invalid combinations fail at load time
    config.encoding()
    config.audit()
    config.filter_spec("tnp")
    config.filter_spec("taxi")
    config.survey_schema()
    return config


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` loads the bundled fixture."""
    path = Path(path) if path is not None else FIXTURE_PATH
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path)


__all__ = ["FIXTURE_PATH", "RunConfig", "load_config", "parse_config"]
