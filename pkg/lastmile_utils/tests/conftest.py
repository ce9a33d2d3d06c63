import json
import logging

import pytest

from lastmile_utils.findmy import TraceRecord, build_tracks

logger = logging.getLogger("lastmile_utils")

# 2024-12-01T00:00:00Z
START_MS = 1733011200000
DAY_MS = 86_400_000

FLEET_RECORDS = 19629
FLEET_DEVICES = 18
FLEET_DAYS = 7


def make_item(name, lat, lon, timestamp, serial=None, nested=True, **extra):
    """One ``items.data`` item in either the nested or the flattened key form"""
    item = {"name": name}
    if serial is not None:
        item["serialNumber"] = serial
    location = {"latitude": lat, "longitude": lon, "timeStamp": timestamp}
    location.update({k: v for k, v in extra.items() if k in ("altitude", "horizontalAccuracy", "verticalAccuracy")})
    if nested:
        item["location"] = location
    else:
        item.update({f"location|{k}": v for k, v in location.items()})
    item.update({k: v for k, v in extra.items() if k in ("batteryLevel", "batteryStatus", "deviceDiscoveryId")})
    return item


def fleet_counts():
    """Record count per device: 9 devices with 1091 and 9 with 1090"""
    base, extra = divmod(FLEET_RECORDS, FLEET_DEVICES)
    return [base + 1 if d < extra else base for d in range(FLEET_DEVICES)]


def fleet_items():
    items = []
    for d, n in enumerate(fleet_counts()):
        step = FLEET_DAYS * DAY_MS // n
        for k in range(n):
            items.append(
                make_item(
                    f"Tracker {d:02d}",
                    round(34.70 + 0.01 * d, 6),
                    round(-86.50 + 0.0001 * k, 6),
                    START_MS + k * step + d * 1000,
                    serial=f"SN{d:04d}",
                    horizontalAccuracy=10.0,
                )
            )
    return items


@pytest.fixture(scope="session")
def fleet_tracks():
    """18 devices, 19629 distinct fixes spread over 7 UTC days"""
    records = []
    for item in fleet_items():
        loc = item["location"]
        records.append(
            TraceRecord(
                device_key=item["serialNumber"],
                name=item["name"],
                latitude=loc["latitude"],
                longitude=loc["longitude"],
                timestamp=loc["timeStamp"],
                horizontal_accuracy=loc["horizontalAccuracy"],
            )
        )
    tracks = build_tracks(records)
    logger.info(f"Built fleet fixture with {sum(len(t) for t in tracks)} records")
    return tracks


@pytest.fixture(scope="session")
def fleet_document():
    return json.dumps(fleet_items())


@pytest.fixture
def snapshot_dir(tmp_path):
    """Three daily snapshots of one moving device; each repeats the previous fixes and adds one"""
    fixes = [(34.7304 + 0.001 * k, -86.5861 - 0.001 * k, START_MS + k * 3_600_000) for k in range(3)]
    directory = tmp_path / "snapshots"
    directory.mkdir()
    for day in range(3):
        items = [make_item("Lara Croft", lat, lon, ts, serial="SN-LARA") for lat, lon, ts in fixes[: day + 1]]
        (directory / f"day{day}.data").write_text(json.dumps(items), encoding="utf-8")
    return directory
