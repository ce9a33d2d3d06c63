"""Ingest Find My ``items.data`` caches into per-device location tracks

The cache only holds each item's current location, so history is built by
accumulating snapshots: every file is parsed into TraceRecords, records from
all files are merged, and exact duplicates are collapsed.

Both key layouts seen in exported caches are accepted::

    {"serialNumber": "...", "name": "Lara Croft",
     "location": {"latitude": 34.73, "longitude": -86.58, "timeStamp": 1733000000000}}

    {"serialNumber": "...", "name": "Lara Croft",
     "location|latitude": 34.73, "location|longitude": -86.58, "location|timeStamp": 1733000000000}
"""

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import timezone
from pathlib import Path
from typing import Optional, Union

import dateparser
import pandas as pd
from tqdm import tqdm

from lastmile_utils.utils import EmptyDocument, LastMileError, MalformedJson, PathNotFound, clean_text

__all__ = [
    "TraceRecord",
    "DeviceTrack",
    "IngestReport",
    "parse_items_data",
    "build_tracks",
    "ingest_directory",
    "ingest_paths",
    "write_tracks_csv",
    "read_tracks_csv",
    "TRACK_CSV_COLUMNS",
]

logger = logging.getLogger(__name__)

COORD_DECIMALS = 6
MAX_TIMESTAMP_MS = 253402300800000  # 10000-01-01T00:00:00Z

TRACK_CSV_COLUMNS = [
    "device_key",
    "name",
    "timestamp_ms",
    "lat",
    "lon",
    "alt_m",
    "h_acc_m",
    "v_acc_m",
    "battery",
    "floor",
]

KEY_FIELDS = ("serialNumber", "deviceDiscoveryId", "name")
TIMESTAMP_FIELDS = ("timeStamp", "timestamp")

# Absolute dates only, never resolved against the wall clock
DATEPARSER_SETTINGS = {
    "PARSERS": ["timestamp", "custom-formats", "absolute-time"],
    "REQUIRE_PARTS": ["day", "month", "year"],
    "TIMEZONE": "UTC",
    "TO_TIMEZONE": "UTC",
    "RETURN_AS_TIMEZONE_AWARE": True,
}


@dataclass(frozen=True)
class TraceRecord:
    """One normalized location report of one device"""

    device_key: str
    name: str
    latitude: float
    longitude: float
    timestamp: int
    altitude: Optional[float] = None
    horizontal_accuracy: Optional[float] = None
    vertical_accuracy: Optional[float] = None
    battery_level: Optional[Union[float, str]] = None
    floor_level: Optional[int] = None

    @property
    def position_key(self):
        """Timestamp and coordinates rounded to 6 decimal places (about 0.11 m)"""
        return (self.timestamp, round(self.latitude, COORD_DECIMALS), round(self.longitude, COORD_DECIMALS))


@dataclass(frozen=True)
class DeviceTrack:
    device_key: str
    name: str
    records: tuple = ()

    def __len__(self):
        return len(self.records)


@dataclass
class IngestReport:
    """Per-file record counts, warnings and failures of one ingest"""

    files: list = field(default_factory=list)
    record_counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def summary(self):
        n_records = sum(self.record_counts.values())
        return (
            f"{len(self.files)} files, {n_records} records, "
            f"{len(self.warnings)} warnings, {len(self.failures)} failed files"
        )


def _number(value):
    """Finite float from a JSON value, or None (booleans are not numbers)"""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    try:
        value = float(value)
    except OverflowError:
        return None
    if not math.isfinite(value):
        return None
    return value


def _location_field(item, name):
    location = item.get("location")
    if isinstance(location, dict) and name in location:
        return location[name]
    return item.get(f"location|{name}")


def _has_location(item):
    location = item.get("location")
    if isinstance(location, dict) and len(location) > 0:
        return True
    return any(isinstance(key, str) and key.startswith("location|") for key in item)


def _parse_timestamp(value):
    """UTC epoch milliseconds from an epoch-ms number or string, or an absolute date string"""
    if isinstance(value, str):
        text = value.strip()
        if text.lstrip("-").isdigit():
            try:
                value = int(text)
            except ValueError:
                return None
        else:
            try:
                parsed = dateparser.parse(text, settings=DATEPARSER_SETTINGS)
            except Exception as e:
                logger.debug(f"dateparser failed on {text!r}: {e}")
                return None
            if parsed is None:
                return None
            return int(round(parsed.astimezone(timezone.utc).timestamp() * 1000))
    number = _number(value)
    if number is None:
        return None
    return int(round(number))


def _battery(item):
    level = _number(item.get("batteryLevel"))
    if level is not None:
        return level
    status = item.get("batteryStatus")
    if status is not None and not isinstance(status, (dict, list)):
        return f"status:{status}"
    return None


def _device_key(item):
    for key in KEY_FIELDS:
        value = item.get(key)
        if value not in (None, "") and not isinstance(value, (dict, list)):
            text = clean_text(str(value))
            if text != "":
                return text
    return None


def _parse_item(item, index):
    """Return ``(record, warning)``; exactly one of them is None"""
    if not isinstance(item, dict):
        return None, f"item {index}: expected an object, got {type(item).__name__}"

    device_key = _device_key(item)
    name = item.get("name")
    if name in (None, "") or isinstance(name, (dict, list)) or clean_text(str(name)) == "":
        name = device_key
    else:
        name = clean_text(str(name))
    label = name or f"item {index}"
    if device_key is None:
        return None, f"{label}: no serialNumber, deviceDiscoveryId or name to identify the device"
    if not _has_location(item):
        return None, f"{label}: no location in item"

    lat = _number(_location_field(item, "latitude"))
    lon = _number(_location_field(item, "longitude"))
    if lat is None or lon is None or not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
        return None, f"{label}: missing or out-of-range coordinates"

    timestamp = None
    for key in TIMESTAMP_FIELDS:
        raw = _location_field(item, key)
        if raw is not None:
            timestamp = _parse_timestamp(raw)
            break
    if timestamp is None or not 0 < timestamp < MAX_TIMESTAMP_MS:
        return None, f"{label}: missing or invalid location timestamp"

    h_acc = _number(_location_field(item, "horizontalAccuracy"))
    v_acc = _number(_location_field(item, "verticalAccuracy"))
    floor = _number(_location_field(item, "floorLevel"))

    record = TraceRecord(
        device_key=device_key,
        name=name,
        latitude=lat,
        longitude=lon,
        timestamp=timestamp,
        altitude=_number(_location_field(item, "altitude")),
        # Find My reports -1 for an unknown accuracy
        horizontal_accuracy=h_acc if h_acc is not None and h_acc >= 0 else None,
        vertical_accuracy=v_acc if v_acc is not None and v_acc >= 0 else None,
        battery_level=_battery(item),
        floor_level=int(floor) if floor is not None and floor.is_integer() else None,
    )
    return record, None


def _item_list(data):
    if isinstance(data, list):
        return data
    if isinstance(data, dict):
        if isinstance(data.get("items"), list):
            return data["items"]
        lists = [value for value in data.values() if isinstance(value, list)]
        if len(lists) == 1:
            return lists[0]
        if _has_location(data) or _device_key(data) is not None:
            return [data]
        return []
    raise MalformedJson(f"Expected a JSON array or object of items, got {type(data).__name__}")


def parse_items_data(document, source="<document>"):
    """
    Parse one ``items.data`` JSON document into location records

    Parameters
    ----------
    document: str or bytes
        JSON text: an array of item objects, or an object wrapping one
    source: str
        Name used in log messages and warnings

    Returns
    -------
    records: list of TraceRecord
        One record per item with a usable location snapshot
    warnings: list of str
        One entry per item skipped, naming the device where possible

    Raises
    ------
    MalformedJson
        If the document is not parseable JSON
    EmptyDocument
        If the document holds no items at all
    """
    try:
        data = json.loads(document)
    except (ValueError, TypeError, RecursionError) as e:
        msg = f"{source}: not parseable as JSON: {e}"
        logger.error(msg)
        raise MalformedJson(msg) from e

    items = _item_list(data)
    if len(items) == 0:
        msg = f"{source}: no items in document"
        logger.error(msg)
        raise EmptyDocument(msg)

    records, warnings = [], []
    for index, item in enumerate(items):
        record, warning = _parse_item(item, index)
        if warning is not None:
            warnings.append(f"{source}: {warning}")
            logger.warning(f"{source}: {warning}")
        else:
            records.append(record)

    logger.debug(f"{source}: {len(records)} records from {len(items)} items")
    return records, warnings


def build_tracks(records, max_h_acc=None):
    """
    Group records into per-device tracks ordered by timestamp

    Records sharing a timestamp and 6-decimal coordinates collapse to the
    first one seen; records with equal timestamps keep their input order.

    Parameters
    ----------
    records: iterable of TraceRecord
    max_h_acc: float, optional
        Drop records whose horizontal accuracy is known and exceeds this, in m

    Returns
    -------
    list of DeviceTrack
        Ordered by device_key
    """
    grouped = {}
    seen = set()
    dropped = 0
    for record in records:
        if max_h_acc is not None and record.horizontal_accuracy is not None and record.horizontal_accuracy > max_h_acc:
            dropped += 1
            continue
        key = (record.device_key, *record.position_key)
        if key in seen:
            continue
        seen.add(key)
        grouped.setdefault(record.device_key, []).append(record)

    if dropped:
        logger.info(f"Dropped {dropped} records with horizontal accuracy above {max_h_acc} m")

    tracks = []
    for device_key in sorted(grouped):
        device_records = sorted(grouped[device_key], key=lambda r: r.timestamp)
        tracks.append(DeviceTrack(device_key, device_records[-1].name, tuple(device_records)))
    return tracks


def _matching_files(paths, pattern):
    files = set()
    for path in paths:
        path = Path(path)
        if not path.exists():
            msg = f"Path not found: {path}"
            logger.error(msg)
            raise PathNotFound(msg)
        if path.is_dir():
            files.update(p for p in path.glob(pattern) if p.is_file())
        else:
            files.add(path)
    return sorted(files)


def ingest_paths(paths, pattern="*.data", raise_error=False, max_h_acc=None, quiet=True):
    """
    Parse every file among ``paths`` (files, or directories searched with
    ``pattern``) and merge their records into tracks

    Files are merged in sorted path order, so the order in which paths are
    given never changes the result.

    Parameters
    ----------
    paths: list of str or Path
    pattern: str
        Glob applied inside directories
    raise_error: bool, optional
        False (default): a file that cannot be parsed is recorded in the report
        True: raise the parse error
    max_h_acc: float, optional
        See ``build_tracks``
    quiet: bool
        Hide the progress bar

    Returns
    -------
    tracks: list of DeviceTrack
    report: IngestReport

    Raises
    ------
    PathNotFound
        If a given path does not exist
    """
    report = IngestReport()
    files = _matching_files(paths, pattern)
    records = []
    for path in tqdm(files, desc="Ingest", unit="file", disable=quiet):
        report.files.append(str(path))
        try:
            text = path.read_text(encoding="utf-8")
            file_records, warnings = parse_items_data(text, source=str(path))
        except (LastMileError, UnicodeDecodeError, OSError) as e:
            msg = f"{path}: {e}" if not isinstance(e, LastMileError) else str(e)
            if raise_error:
                logger.error(msg)
                if isinstance(e, LastMileError):
                    raise
                raise MalformedJson(msg) from e
            logger.warning(f"Skipping file {msg}")
            report.failures[str(path)] = msg
            report.record_counts[str(path)] = 0
            continue
        report.record_counts[str(path)] = len(file_records)
        report.warnings.extend(warnings)
        records.extend(file_records)

    tracks = build_tracks(records, max_h_acc=max_h_acc)
    logger.info(f"Ingest: {report.summary()}; {len(tracks)} device tracks")
    return tracks, report


def ingest_directory(path, pattern="*.data", raise_error=False, max_h_acc=None):
    """
    Parse every snapshot file in a directory and merge them into tracks

    Returns
    -------
    tracks: list of DeviceTrack
    report: IngestReport

    Raises
    ------
    PathNotFound
        If ``path`` does not exist
    """
    path = Path(path)
    if not path.exists():
        msg = f"Path not found: {path}"
        logger.error(msg)
        raise PathNotFound(msg)
    return ingest_paths([path], pattern=pattern, raise_error=raise_error, max_h_acc=max_h_acc)


def write_tracks_csv(tracks, path=None):
    """
    Write tracks as the normalized CSV, one row per record, absent optionals empty

    Returns the CSV text when ``path`` is None.
    """
    rows = []
    for track in tracks:
        for r in track.records:
            rows.append(
                [
                    r.device_key,
                    r.name,
                    r.timestamp,
                    r.latitude,
                    r.longitude,
                    r.altitude,
                    r.horizontal_accuracy,
                    r.vertical_accuracy,
                    r.battery_level,
                    r.floor_level,
                ]
            )
    df = pd.DataFrame(rows, columns=TRACK_CSV_COLUMNS)
    df["floor"] = df["floor"].astype("Int64")
    df["timestamp_ms"] = df["timestamp_ms"].astype("int64")
    return df.to_csv(path, index=False, na_rep="", lineterminator="\n")


def _optional_float(text):
    return float(text) if text != "" else None


def _battery_from_csv(text):
    if text == "":
        return None
    if text.startswith("status:"):
        return text
    return float(text)


def read_tracks_csv(path):
    """
    Read a normalized track CSV written by ``write_tracks_csv``

    Returns
    -------
    list of DeviceTrack

    Raises
    ------
    PathNotFound
        If ``path`` does not exist
    MalformedJson
        If a column is missing or a value does not parse
    """
    path = Path(path)
    if not path.exists():
        msg = f"Track file not found: {path}"
        logger.error(msg)
        raise PathNotFound(msg)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        logger.warning(f"{path} is empty")
        return []

    missing = [c for c in TRACK_CSV_COLUMNS if c not in df.columns]
    if missing:
        msg = f"{path} is missing normalized columns {missing}"
        logger.error(msg)
        raise MalformedJson(msg)

    records = []
    for line, row in enumerate(df.itertuples(index=False), start=2):
        try:
            records.append(_csv_record(row))
        except ValueError as e:
            msg = f"{path}:{line} has a malformed value: {e}"
            logger.error(msg)
            raise MalformedJson(msg) from e
    return build_tracks(records)


def _csv_record(row):
    return TraceRecord(
        device_key=row.device_key,
        name=row.name,
        latitude=float(row.lat),
        longitude=float(row.lon),
        timestamp=int(row.timestamp_ms),
        altitude=_optional_float(row.alt_m),
        horizontal_accuracy=_optional_float(row.h_acc_m),
        vertical_accuracy=_optional_float(row.v_acc_m),
        battery_level=_battery_from_csv(row.battery),
        floor_level=int(row.floor) if row.floor != "" else None,
    )


