import numpy as np
import pytest

from fareaudit.core import TripRecord, parse_timestamp

TS_2023 = parse_timestamp("2023-06-14T15:30:00")


def make_trip(source="rideshare", trip_id="t0", **kw):
    values = dict(
        start_ts=TS_2023,
        miles=3.0,
        seconds=600.0,
        pickup_area=8,
        dropoff_area=32,
        fare=12.5,
    )
    values.update(kw)
    return TripRecord(source=source, trip_id=trip_id, **values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_market():
    from fareaudit.synth import MarketSpec, generate_market

    return generate_market(MarketSpec(n_tnp=3000, n_taxi=800, seed=7))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
