"""Acquire trip and survey rows from open-data portals or local CSV files.

Remote datasets are paged with SODA-style ``$offset``/``$limit`` queries and
cached one page per newline-delimited JSON file, so an interrupted sync
resumes where it stopped. Rows stay in the remote schema until they are
converted to domain records at load time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import requests

from .core import SURVEY_FEATURES, SurveyResponse, SurveySchema, TripRecord, parse_timestamp
from .exceptions import (
    CacheCorruptionError,
    ConfigError,
    ContractError,
    SchemaError,
    SourceConfigError,
    TransportError,
)

logger = logging.getLogger(__name__)

TOKEN_ENV = "FAREAUDIT_APP_TOKEN"
CHICAGO_PORTAL = "https://data.cityofchicago.org/resource"

TRIP_MANDATORY = ("trip_id", "start_ts", "miles", "seconds", "pickup_area", "dropoff_area", "fare")
SURVEY_MANDATORY = ("wage_band",)

TNP_FIELD_MAP = {
    "trip_id": "trip_id",
    "trip_start_timestamp": "start_ts",
    "trip_miles": "miles",
    "trip_seconds": "seconds",
    "pickup_community_area": "pickup_area",
    "dropoff_community_area": "dropoff_area",
    "fare": "fare",
    "additional_charges": "additional_charges",
    "shared_trip_authorized": "shared",
}

TAXI_FIELD_MAP = {
    "trip_id": "trip_id",
    "trip_start_timestamp": "start_ts",
    "trip_miles": "miles",
    "trip_seconds": "seconds",
    "pickup_community_area": "pickup_area",
    "dropoff_community_area": "dropoff_area",
    "fare": "fare",
    "extras": "additional_charges",
    "tolls": "tolls",
}

SURVEY_FIELD_MAP = {name: name for name in ("wage_band", *SURVEY_FEATURES)}


@dataclass(frozen=True)
class DatasetSource:
    """Where a dataset lives and how its columns map onto record fields.

    ``field_map`` maps remote column names to local field names. ``kind`` is
    ``rideshare``, ``taxi`` or ``survey``.
    """

    base_url: str
    dataset_id: str
    kind: str = "rideshare"
    format: str = "json-rows"
    field_map: dict = field(default_factory=lambda: dict(TNP_FIELD_MAP))
    order: Optional[str] = "trip_id"
    page_size: int = 50_000
    app_token: Optional[str] = None
    where: Optional[str] = None
    max_retries: int = 3
    backoff: float = 0.5
    min_delay: float = 0.1
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in ("rideshare", "taxi", "survey"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.format not in ("csv", "json-rows"):
            raise ConfigError(f"unknown dataset format {self.format!r}")
        if self.page_size < 1:
            raise ConfigError("page_size must be >= 1")
        mandatory = SURVEY_MANDATORY if self.kind == "survey" else TRIP_MANDATORY
        missing = set(mandatory) - set(self.field_map.values())
        if missing:
            raise ConfigError(f"field_map does not cover: {', '.join(sorted(missing))}")

    @classmethod
    def chicago_tnp(cls, **kw) -> "DatasetSource":
        return cls(CHICAGO_PORTAL, "n26f-ihde", kind="rideshare", field_map=dict(TNP_FIELD_MAP), **kw)

    @classmethod
    def chicago_taxi(cls, **kw) -> "DatasetSource":
        return cls(CHICAGO_PORTAL, "wrvz-psew", kind="taxi", field_map=dict(TAXI_FIELD_MAP), **kw)

    @property
    def url(self) -> str:
        ext = "csv" if self.format == "csv" else "json"
        return f"{self.base_url.rstrip('/')}/{self.dataset_id}.{ext}"

    @property
    def token(self) -> Optional[str]:
        return os.environ.get(TOKEN_ENV) or self.app_token

    def mandatory_columns(self) -> list:
        mandatory = SURVEY_MANDATORY if self.kind == "survey" else TRIP_MANDATORY
        return [remote for remote, local in self.field_map.items() if local in mandatory]


class PortalClient:
    """Sequential page fetcher with retries and a minimum inter-request delay.

    ``retries`` counts transient failures that were retried; ``calls`` logs
    the ``(offset, limit)`` of every successful request.
    """

    def __init__(self, source: DatasetSource, session: Optional[requests.Session] = None, sleep=time.sleep):
        self.source = source
        self.session = session or requests.Session()
        self.sleep = sleep
        self.retries = 0
        self.calls = []
        self._last_request = None

    def _throttle(self):
        if self._last_request is not None and self.source.min_delay > 0:
            wait = self.source.min_delay - (time.monotonic() - self._last_request)
            if wait > 0:
                self.sleep(wait)
        self._last_request = time.monotonic()

    def _get(self, params):
        src = self.source
        headers = {"X-App-Token": src.token} if src.token else {}
        last_error = None
        for attempt in range(src.max_retries + 1):
            if attempt:
                self.retries += 1
                self.sleep(src.backoff * 2 ** (attempt - 1))
            self._throttle()
            try:
                resp = self.session.get(src.url, params=params, headers=headers, timeout=src.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if 400 <= resp.status_code < 500:
                raise SourceConfigError(f"{src.url} rejected the request: HTTP {resp.status_code} {resp.text[:200]}")
            return resp
        raise TransportError(f"{src.url}: giving up after {src.max_retries} retries ({last_error})")

    def fetch_page(self, offset: int, limit: int) -> list:
        src = self.source
        if offset < 0:
            raise ContractError("offset must be >= 0")
        if not 1 <= limit <= src.page_size:
            raise ContractError(f"limit must lie in 1..{src.page_size}")
        params = {"$offset": offset, "$limit": limit}
        if src.order:
            params["$order"] = src.order
        if src.where:
            params["$where"] = src.where
        resp = self._get(params)
        if src.format == "csv":
            rows = list(csv.DictReader(io.StringIO(resp.content.decode("utf-8"))))
        else:
            rows = resp.json()
            if not isinstance(rows, list):
                raise SchemaError(f"{src.url} did not return a list of rows")
        self.calls.append((offset, limit))
        if rows:
            seen = set().union(*(r.keys() for r in rows))
            for col in src.mandatory_columns():
                if col not in seen:
                    raise SchemaError(f"mapped column {col!r} is absent from {src.dataset_id}")
        return rows[:limit]


def fetch_page(source: DatasetSource, offset: int, limit: int, client: Optional[PortalClient] = None) -> list:
    """Fetch one page of raw rows; an empty list means the dataset is exhausted."""
    return (client or PortalClient(source)).fetch_page(offset, limit)


@dataclass
class CacheManifest:
    dataset_id: str
    pages: list = field(default_factory=list)
    row_count: int = 0
    last_offset: int = 0
    complete: bool = False

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "pages": self.pages,
            "row_count": self.row_count,
            "last_offset": self.last_offset,
            "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, data) -> "CacheManifest":
        return cls(data["dataset_id"], list(data["pages"]), data["row_count"], data["last_offset"], data["complete"])


def atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_page(rows) -> bytes:
    return b"".join(
        json.dumps(r, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"
        for r in rows
    )


def _dataset_dir(cache_dir, dataset_id) -> Path:
    return Path(cache_dir) / dataset_id


def load_manifest(cache_dir, dataset_id, verify=True) -> Optional[CacheManifest]:
    path = _dataset_dir(cache_dir, dataset_id) / "manifest.json"
    if not path.exists():
        return None
    manifest = CacheManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    if verify:
        for page in manifest.pages:
            page_path = path.parent / page["file"]
            if not page_path.exists() or hashlib.sha256(page_path.read_bytes()).hexdigest() != page["sha256"]:
                raise CacheCorruptionError(
                    f"cached page {page['file']} of {dataset_id} is missing or altered; "
                    f"delete {path.parent} and sync again"
                )
    return manifest


def sync_dataset(source: DatasetSource, cache_dir, client: Optional[PortalClient] = None, max_pages=None) -> CacheManifest:
    """Download every page not yet cached; safe to re-run after an interruption.

    ``max_pages`` caps the pages fetched by this invocation.
    """
    client = client or PortalClient(source)
    root = _dataset_dir(cache_dir, source.dataset_id)
    root.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(cache_dir, source.dataset_id) or CacheManifest(source.dataset_id)
    fetched = 0
    while not manifest.complete and (max_pages is None or fetched < max_pages):
        rows = client.fetch_page(manifest.last_offset, source.page_size)
        if rows:
            index = len(manifest.pages)
            name = f"page-{index:06d}.ndjson"
            data = _encode_page(rows)
            atomic_write(root / name, data)
            manifest.pages.append(
                {
                    "index": index,
                    "offset": manifest.last_offset,
                    "rows": len(rows),
                    "sha256": hashlib.sha256(data).hexdigest(),
                    "file": name,
                }
            )
            manifest.row_count += len(rows)
            manifest.last_offset += len(rows)
            fetched += 1
            logger.info("cached %s rows at offset %s of %s", len(rows), manifest.pages[-1]["offset"], source.dataset_id)
        if len(rows) < source.page_size:
            manifest.complete = True
        atomic_write(root / "manifest.json", json.dumps(manifest.to_dict(), indent=2, sort_keys=True).encode())
    return manifest


def replay_cache(cache_dir, dataset_id) -> Iterator[dict]:
    """Yield cached raw rows in page order after verifying every digest."""
    manifest = load_manifest(cache_dir, dataset_id)
    if manifest is None:
        raise CacheCorruptionError(f"no cache manifest for {dataset_id} under {cache_dir}")
    root = _dataset_dir(cache_dir, dataset_id)
    for page in manifest.pages:
        with open(root / page["file"], encoding="utf-8") as fh:
            for line in fh:
                yield json.loads(line)


class CsvRows:
    """Iterate a CSV file as raw row dicts, skipping and counting malformed lines.

    The header is checked against ``required`` columns on construction.
    """

    def __init__(self, path, required: Iterable[str] = ()):
        self.path = Path(path)
        self.errors = 0
        self.rows = 0
        try:
            with open(self.path, newline="", encoding="utf-8") as fh:
                self.header = next(csv.reader(fh), [])
        except OSError as exc:
            raise OSError(f"cannot read {self.path}: {exc}") from exc
        missing = [c for c in required if c not in self.header]
        if missing:
            raise SchemaError(f"{self.path} lacks mapped column(s): {', '.join(missing)}")

    def __iter__(self):
        width = len(self.header)
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for values in reader:
                if not values:
                    continue
                if len(values) != width:
                    self.errors += 1
                    continue
                self.rows += 1
                yield dict(zip(self.header, values))


def ingest_csv(path, field_map=None, kind="rideshare") -> CsvRows:
    """Open a local CSV as a stream of raw rows; see :class:`CsvRows`."""
    if field_map is None:
        required = ()
    else:
        mandatory = SURVEY_MANDATORY if kind == "survey" else TRIP_MANDATORY
        required = [remote for remote, local in field_map.items() if local in mandatory]
    return CsvRows(path, required)


_TRUE = {"true", "t", "1", "yes", "y"}
_FALSE = {"false", "f", "0", "no", "n", ""}


def _blank(value):
    return value is None or (isinstance(value, str) and not value.strip())


def _parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_area(value):
    num = float(value)
    if num != int(num):
        raise ValueError(f"community area {value!r} is not an integer")
    return int(num)


_TRIP_PARSERS = {
    "trip_id": str,
    "start_ts": parse_timestamp,
    "miles": float,
    "seconds": float,
    "pickup_area": _parse_area,
    "dropoff_area": _parse_area,
    "fare": float,
    "additional_charges": float,
    "tolls": float,
    "shared": _parse_bool,
}


def trip_from_row(row: dict, field_map: dict, source: str) -> TripRecord:
    """Convert one raw row; raises ValueError on unparseable or invalid values."""
    values = {}
    for remote, local in field_map.items():
        raw = row.get(remote)
        if _blank(raw):
            continue
        values[local] = _TRIP_PARSERS[local](raw)
    return TripRecord(
        source=source,
        trip_id=values.get("trip_id", ""),
        start_ts=values.get("start_ts"),
        miles=values.get("miles"),
        seconds=values.get("seconds"),
        pickup_area=values.get("pickup_area"),
        dropoff_area=values.get("dropoff_area"),
        fare=values.get("fare"),
        additional_charges=values.get("additional_charges", 0.0),
        tolls=values.get("tolls", 0.0),
        shared=values.get("shared", False),
    )


def load_trips(rows: Iterable[dict], field_map: dict, source: str) -> Iterator[Optional[TripRecord]]:
    """Yield a TripRecord per row, or None where the row is malformed."""
    for row in rows:
        try:
            yield trip_from_row(row, field_map, source)
        except (ValueError, TypeError, OverflowError):
            yield None


def survey_from_row(row: dict, field_map: dict, schema: Optional[SurveySchema] = None) -> SurveyResponse:
    values = {}
    for remote, local in field_map.items():
        raw = row.get(remote)
        if not _blank(raw):
            values[local] = str(raw).strip()
    response = SurveyResponse(**values)
    (schema or SurveySchema.default()).validate(response)
    return response


def load_survey(rows: Iterable[dict], field_map=None, schema=None) -> tuple[list, int]:
    """Parse survey rows, returning the valid responses and the count rejected."""
    field_map = field_map or SURVEY_FIELD_MAP
    out, errors = [], 0
    for row in rows:
        try:
            out.append(survey_from_row(row, field_map, schema))
        except (ValueError, TypeError):
            errors += 1
    return out, errors
