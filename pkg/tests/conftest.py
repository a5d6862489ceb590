from datetime import datetime, timedelta, timezone

import pytest

from deterrence.geogrid import GridSpec, TimeBinning

EPOCH = datetime(2014, 1, 1, tzinfo=timezone.utc)


@pytest.fixture
def grid5():
    return GridSpec(0.0, 0.0, 5, 5, 1000.0)


@pytest.fixture
def monthly():
    return TimeBinning(EPOCH, 30, 6)


def ts(minutes: float) -> datetime:
    return EPOCH + timedelta(minutes=minutes)
