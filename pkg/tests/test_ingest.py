import json

import pytest

from fake_portal import FakePortal
from fareaudit.core import SurveySchema
from fareaudit.exceptions import (
    CacheCorruptionError,
    ConfigError,
    SchemaError,
    SourceConfigError,
    TransportError,
)
from fareaudit.ingest import (
    TAXI_FIELD_MAP,
    TNP_FIELD_MAP,
    DatasetSource,
    PortalClient,
    atomic_write,
    fetch_page,
    ingest_csv,
    load_manifest,
    load_survey,
    load_trips,
    replay_cache,
    sync_dataset,
    trip_from_row,
)


def tnp_row(i):
    return {
        "trip_id": f"t{i:05d}",
        "trip_start_timestamp": "2023-05-01T12:15:00.000",
        "trip_miles": str(1 + i % 7),
        "trip_seconds": str(300 + i),
        "pickup_community_area": str(1 + i % 77),
        "dropoff_community_area": str(1 + (i * 7) % 77),
        "fare": f"{7.5 + i % 11}",
        "additional_charges": "1.5",
        "shared_trip_authorized": "false",
    }


ROWS = [tnp_row(i) for i in range(23)]


def source(portal, **kw):
    kw.setdefault("page_size", 5)
    kw.setdefault("min_delay", 0)
    kw.setdefault("backoff", 0)
    return DatasetSource(portal.base_url, "tnp1", field_map=dict(TNP_FIELD_MAP), **kw)


@pytest.fixture
def portal():
    with FakePortal({"tnp1": ROWS}) as p:
        yield p


def test_fetch_page_params(portal):
    rows = fetch_page(source(portal), 10, 5)
    assert [r["trip_id"] for r in rows] == [f"t{i:05d}" for i in range(10, 15)]
    path, query = portal.requests[-1]
    assert path == "/resource/tnp1.json"
    assert query["$order"] == "trip_id"
    assert fetch_page(source(portal), 100, 5) == []


def test_csv_format(portal):
    rows = fetch_page(source(portal, format="csv"), 0, 3)
    assert rows[0]["trip_miles"] == "1"
    assert portal.requests[-1][0].endswith(".csv")


def test_app_token_env_overrides_config(portal, monkeypatch):
    fetch_page(source(portal, app_token="from-config"), 0, 1)
    monkeypatch.setenv("FAREAUDIT_APP_TOKEN", "from-env")
    fetch_page(source(portal, app_token="from-config"), 0, 1)
    assert portal.tokens == ["from-config", "from-env"]


def test_retries_transient_errors(portal):
    portal.fail_next = 2
    sleeps = []
    client = PortalClient(source(portal, backoff=0.25), sleep=sleeps.append)
    assert len(client.fetch_page(0, 5)) == 5
    assert client.retries == 2
    assert sleeps == [0.25, 0.5]  # exponential backoff


def test_retries_exhausted(portal):
    portal.fail_next = 10
    client = PortalClient(source(portal, max_retries=2), sleep=lambda s: None)
    with pytest.raises(TransportError):
        client.fetch_page(0, 5)
    assert client.retries == 2


def test_client_errors_not_retried(portal):
    portal.status_override = 403
    client = PortalClient(source(portal), sleep=lambda s: None)
    with pytest.raises(SourceConfigError):
        client.fetch_page(0, 5)
    assert client.retries == 0 and len(portal.requests) == 1


def test_unreachable_host():
    src = DatasetSource("http://127.0.0.1:9", "x", max_retries=1, backoff=0, min_delay=0, timeout=2)
    with pytest.raises(TransportError):
        PortalClient(src, sleep=lambda s: None).fetch_page(0, 1)


def test_absent_mapped_column(portal):
    fm = dict(TNP_FIELD_MAP)
    fm["trip_distance"] = fm.pop("trip_miles")
    src = DatasetSource(portal.base_url, "tnp1", field_map=fm, min_delay=0, page_size=5)
    with pytest.raises(SchemaError, match="trip_distance"):
        fetch_page(src, 0, 5)


def test_source_validation():
    with pytest.raises(ConfigError):
        DatasetSource("http://x", "d", field_map={"a": "trip_id"})
    with pytest.raises(ConfigError):
        DatasetSource("http://x", "d", format="xml")


def test_sync_interrupt_and_resume(portal, tmp_path):
    src = source(portal)
    first = sync_dataset(src, tmp_path, PortalClient(src), max_pages=2)
    assert not first.complete and first.last_offset == 10
    assert portal.page_requests() == [(0, 5), (5, 5)]

    resumed = sync_dataset(src, tmp_path, PortalClient(src))
    # no page is fetched twice
    assert portal.page_requests() == [(0, 5), (5, 5), (10, 5), (15, 5), (20, 5)]
    assert resumed.complete and resumed.row_count == 23
    assert [r["trip_id"] for r in replay_cache(tmp_path, "tnp1")] == [r["trip_id"] for r in ROWS]

    # a completed cache makes no further requests
    sync_dataset(src, tmp_path, PortalClient(src))
    assert len(portal.requests) == 5


def test_sync_exact_multiple_needs_empty_page(tmp_path):
    with FakePortal({"tnp1": ROWS[:10]}) as p:
        m = sync_dataset(source(p), tmp_path)
        assert m.complete and len(m.pages) == 2
        assert p.page_requests()[-1] == (10, 5)


def test_sync_survives_failure_midway(portal, tmp_path):
    src = source(portal, max_retries=0)
    sync_dataset(src, tmp_path, max_pages=1)
    portal.fail_next = 1
    with pytest.raises(TransportError):
        sync_dataset(src, tmp_path)
    assert load_manifest(tmp_path, "tnp1").last_offset == 5
    assert sync_dataset(src, tmp_path).row_count == 23


def test_corrupted_page_detected(portal, tmp_path):
    sync_dataset(source(portal), tmp_path)
    page = tmp_path / "tnp1" / "page-000001.ndjson"
    page.write_bytes(page.read_bytes().replace(b"t0000", b"x0000"))
    with pytest.raises(CacheCorruptionError, match="page-000001"):
        list(replay_cache(tmp_path, "tnp1"))
    with pytest.raises(CacheCorruptionError):
        sync_dataset(source(portal), tmp_path)


def test_manifest_is_valid_json_after_sync(portal, tmp_path):
    sync_dataset(source(portal), tmp_path)
    data = json.loads((tmp_path / "tnp1" / "manifest.json").read_text())
    assert sum(p["rows"] for p in data["pages"]) == 23
    assert not list((tmp_path / "tnp1").glob(".*"))  # no temp files left behind


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "f.txt"
    target.write_bytes(b"old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr("os.replace", boom)
    with pytest.raises(OSError):
        atomic_write(target, b"new")
    assert target.read_bytes() == b"old"
    assert list(tmp_path.iterdir()) == [target]


# local CSV


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n")


def test_ingest_csv_counts_malformed(tmp_path):
    header = list(TNP_FIELD_MAP)
    good = [tnp_row(4)[c] for c in header]
    path = tmp_path / "tnp.csv"
    write_csv(path, header, [good, good[:-2], good])
    rows = ingest_csv(path, TNP_FIELD_MAP)
    assert len(list(rows)) == 2
    assert rows.errors == 1


def test_ingest_csv_missing_column(tmp_path):
    path = tmp_path / "tnp.csv"
    write_csv(path, ["trip_id", "fare"], [["a", "1"]])
    with pytest.raises(SchemaError, match="trip_miles"):
        ingest_csv(path, TNP_FIELD_MAP)


def test_trip_from_row():
    trip = trip_from_row(tnp_row(3), TNP_FIELD_MAP, "rideshare")
    assert trip.miles == 4.0 and trip.pickup_area == 4 and trip.additional_charges == 1.5
    assert trip.shared is False
    row = dict(tnp_row(3), fare="", pickup_community_area="")
    blank = trip_from_row(row, TNP_FIELD_MAP, "rideshare")
    assert blank.fare is None and blank.pickup_area is None


def test_taxi_row_maps_extras_and_tolls():
    row = {k: v for k, v in tnp_row(1).items() if k in TAXI_FIELD_MAP}
    row.update(extras="2", tolls="0.0")
    trip = trip_from_row(row, TAXI_FIELD_MAP, "taxi")
    assert trip.additional_charges == 2.0 and trip.tolls == 0.0 and trip.source == "taxi"


def test_load_trips_yields_none_for_bad_rows():
    rows = [tnp_row(0), dict(tnp_row(1), trip_miles="-3"), dict(tnp_row(2), pickup_community_area="7.5")]
    out = list(load_trips(rows, TNP_FIELD_MAP, "rideshare"))
    assert out[0] is not None and out[1] is None and out[2] is None


def test_load_survey():
    rows = [
        {"wage_band": "$12-13", "race": "White", "insurance": ""},
        {"wage_band": "$12-13", "race": "Martian"},
    ]
    responses, errors = load_survey(rows, schema=SurveySchema.default())
    assert errors == 1
    assert responses[0].insurance is None and responses[0].race == "White"
