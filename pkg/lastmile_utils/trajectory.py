"""Per-device summaries, update-frequency tables and route factors from device tracks"""

import logging
import math
import numbers
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pandas as pd

from lastmile_utils.findmy import COORD_DECIMALS
from lastmile_utils.utils import ConfigInvalid, DegenerateOD, EmptyTrack, EmptyWindow, round_display

__all__ = [
    "EARTH_RADIUS_KM",
    "DeviceSummary",
    "FrequencyReport",
    "DisplayTable",
    "DwellSegment",
    "haversine_km",
    "device_summary",
    "frequency_report",
    "tracks_span_days",
    "dwell_segments",
    "detour_ratio",
    "speed_profile",
    "daily_update_counts",
    "write_summary_csv",
    "write_frequency_csv",
    "write_dwell_csv",
    "write_speed_csv",
    "write_daily_csv",
]

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
MS_PER_HOUR = 3_600_000

DEFAULT_SPEED_FLOOR_KMH = 0.5
DEFAULT_MIN_DWELL_MIN = 10.0
DEFAULT_BIN_MINUTES = 60

# (overall, per tracker) display decimals of each frequency row
DISPLAY_DECIMALS = {
    "total_updates": (0, 0),
    "updates_per_day": (0, 0),
    "updates_per_hour": (0, 1),
    "updates_per_minute": (2, 2),
}


def _haversine_array(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_km(a, b):
    """
    Great-circle distance between two points on a sphere of radius 6371.0 km

    Parameters
    ----------
    a, b: tuple of float
        (latitude, longitude) in degrees

    Returns
    -------
    float
        Distance in km

    Examples
    --------
    >>> round(haversine_km((0, 0), (0, 1)), 3)
    111.195
    """
    return float(_haversine_array(a[0], a[1], b[0], b[1]))


def _coordinates(track):
    lat = np.array([r.latitude for r in track.records], dtype=float)
    lon = np.array([r.longitude for r in track.records], dtype=float)
    ms = np.array([r.timestamp for r in track.records], dtype=np.int64)
    return lat, lon, ms


def _leg_lengths(lat, lon):
    if len(lat) < 2:
        return np.zeros(0)
    return _haversine_array(lat[:-1], lon[:-1], lat[1:], lon[1:])


@dataclass(frozen=True)
class DeviceSummary:
    device_key: str
    name: str
    distance_km: float
    records: int
    unique_locations: int
    days_active: int


def device_summary(track):
    """
    Distance travelled, record count, unique locations and active days of one track

    Unique locations compare coordinates rounded to 6 decimal places; active
    days are distinct UTC calendar dates with at least one record.

    Raises
    ------
    EmptyTrack
        If the track has no records
    """
    if len(track.records) == 0:
        msg = f"Track {track.device_key} has no records"
        logger.error(msg)
        raise EmptyTrack(msg)

    lat, lon, ms = _coordinates(track)
    unique = {(round(r.latitude, COORD_DECIMALS), round(r.longitude, COORD_DECIMALS)) for r in track.records}
    days = pd.to_datetime(ms, unit="ms", utc=True).normalize().nunique()
    return DeviceSummary(
        device_key=track.device_key,
        name=track.name,
        distance_km=float(np.sum(_leg_lengths(lat, lon))),
        records=len(track.records),
        unique_locations=len(unique),
        days_active=int(days),
    )


@dataclass(frozen=True)
class FrequencyReport:
    """
    Network update frequency over an observation window

    Every rate is an exact Fraction; rounding happens only in ``display``.
    """

    window_days: Fraction
    total_updates: int
    device_count: int

    @property
    def updates_per_day(self):
        return Fraction(self.total_updates) / self.window_days

    @property
    def updates_per_hour(self):
        return self.updates_per_day / 24

    @property
    def updates_per_minute(self):
        return self.updates_per_hour / 60

    def per_tracker(self, metric):
        """Any overall metric divided by the device count"""
        return Fraction(getattr(self, metric)) / self.device_count

    def display(self):
        return DisplayTable.from_report(self)


@dataclass(frozen=True)
class DisplayTable:
    """Table-shaped rendering of a FrequencyReport, one (metric, overall, per_tracker) row per rate"""

    rows: tuple

    @classmethod
    def from_report(cls, report):
        rows = []
        for metric, (overall_decimals, tracker_decimals) in DISPLAY_DECIMALS.items():
            overall = round_display(Fraction(getattr(report, metric)), overall_decimals)
            tracker = round_display(report.per_tracker(metric), tracker_decimals)
            rows.append((metric, overall, tracker))
        return cls(tuple(rows))

    def as_dict(self):
        return {metric: (overall, tracker) for metric, overall, tracker in self.rows}

    def __str__(self):
        lines = [f"{'metric':<20} {'overall':>10} {'per_tracker':>12}"]
        lines += [f"{metric:<20} {str(overall):>10} {str(tracker):>12}" for metric, overall, tracker in self.rows]
        return "\n".join(lines)


def tracks_span_days(tracks):
    """
    Number of UTC calendar dates from the first fix to the last, inclusive

    Raises
    ------
    EmptyWindow
        If no track has any record
    """
    stamps = [r.timestamp for t in tracks for r in t.records]
    if len(stamps) == 0:
        msg = "No records to derive an observation window from"
        logger.error(msg)
        raise EmptyWindow(msg)
    first, last = pd.to_datetime([min(stamps), max(stamps)], unit="ms", utc=True).normalize()
    return (last - first).days + 1


def frequency_report(tracks, window_days):
    """
    Update counts and rates over a window, overall and per tracker

    Parameters
    ----------
    tracks: list of DeviceTrack
    window_days: int, float or Fraction
        Observation window in days, must be positive

    Returns
    -------
    FrequencyReport

    Raises
    ------
    EmptyWindow
        If ``window_days`` is not a finite number greater than 0
    EmptyTrack
        If there are no devices

    Examples
    --------
    >>> from lastmile_utils.findmy import DeviceTrack
    >>> report = frequency_report([DeviceTrack("a", "a", tuple(range(24)))], 1)
    >>> report.updates_per_hour
    Fraction(1, 1)
    """
    if isinstance(window_days, bool) or not isinstance(window_days, numbers.Real) or not math.isfinite(window_days):
        msg = f"Observation window must be a finite number of days, got {window_days!r}"
        logger.error(msg)
        raise EmptyWindow(msg)
    window = Fraction(window_days)
    if window <= 0:
        msg = f"Observation window must be positive, got {window_days} days"
        logger.error(msg)
        raise EmptyWindow(msg)
    if len(tracks) == 0:
        msg = "Frequency report needs at least one device"
        logger.error(msg)
        raise EmptyTrack(msg)
    total = sum(len(t.records) for t in tracks)
    return FrequencyReport(window_days=window, total_updates=total, device_count=len(tracks))


@dataclass(frozen=True)
class DwellSegment:
    device_key: str
    start: int
    end: int
    latitude: float
    longitude: float
    radius_m: float

    @property
    def centroid(self):
        return (self.latitude, self.longitude)

    @property
    def duration_min(self):
        return (self.end - self.start) / 60_000


def _leg_speeds(lat, lon, ms):
    """Speed of each consecutive-fix leg in km/h; zero-time legs are 0 if stationary, else inf"""
    lengths = _leg_lengths(lat, lon)
    hours = np.diff(ms) / MS_PER_HOUR
    speeds = np.full(len(lengths), np.inf)
    moving = hours > 0
    speeds[moving] = lengths[moving] / hours[moving]
    speeds[~moving & (lengths == 0)] = 0.0
    return speeds


def dwell_segments(track, speed_floor_kmh=DEFAULT_SPEED_FLOOR_KMH, min_duration_min=DEFAULT_MIN_DWELL_MIN):
    """
    Stationary stretches of a track

    A segment is a maximal run of fixes whose every consecutive-fix speed is
    below ``speed_floor_kmh`` and which lasts at least ``min_duration_min``.

    Parameters
    ----------
    track: DeviceTrack
    speed_floor_kmh: float
    min_duration_min: float

    Returns
    -------
    list of DwellSegment
        Disjoint and time-ordered; empty for tracks with fewer than two fixes
    """
    if len(track.records) < 2:
        return []
    lat, lon, ms = _coordinates(track)
    slow = _leg_speeds(lat, lon, ms) < speed_floor_kmh

    segments = []
    leg = 0
    while leg < len(slow):
        if not slow[leg]:
            leg += 1
            continue
        first = leg
        while leg < len(slow) and slow[leg]:
            leg += 1
        # legs first..leg-1 span fixes first..leg
        start, end = int(ms[first]), int(ms[leg])
        if end > start and (end - start) >= min_duration_min * 60_000:
            run_lat, run_lon = lat[first : leg + 1], lon[first : leg + 1]
            c_lat, c_lon = float(np.mean(run_lat)), float(np.mean(run_lon))
            radius = float(np.max(_haversine_array(c_lat, c_lon, run_lat, run_lon))) * 1000
            segments.append(DwellSegment(track.device_key, start, end, c_lat, c_lon, radius))

    logger.debug(f"{track.device_key}: {len(segments)} dwell segments")
    return segments


def detour_ratio(track, od_pairs):
    """
    Travelled path length over direct distance for each origin-destination window

    Parameters
    ----------
    track: DeviceTrack
    od_pairs: list of (int, int)
        (start, end) timestamp bounds in UTC ms, inclusive

    Returns
    -------
    list of float
        One ratio per pair, each at least 1 up to rounding

    Raises
    ------
    DegenerateOD
        If a window holds fewer than two fixes or its endpoints coincide
    """
    lat, lon, ms = _coordinates(track)
    ratios = []
    for start, end in od_pairs:
        inside = (ms >= start) & (ms <= end)
        if np.count_nonzero(inside) < 2:
            msg = f"{track.device_key}: fewer than two fixes between {start} and {end}"
            logger.error(msg)
            raise DegenerateOD(msg)
        w_lat, w_lon = lat[inside], lon[inside]
        direct = float(_haversine_array(w_lat[0], w_lon[0], w_lat[-1], w_lon[-1]))
        if direct <= 0:
            msg = f"{track.device_key}: origin and destination coincide between {start} and {end}"
            logger.error(msg)
            raise DegenerateOD(msg)
        ratios.append(float(np.sum(_leg_lengths(w_lat, w_lon))) / direct)
    return ratios


def speed_profile(track, bin_minutes=DEFAULT_BIN_MINUTES):
    """
    Mean consecutive-fix speed per wall-clock time bin

    Each leg is binned by the time of its first fix. Legs with no elapsed
    time are skipped with a warning.

    Parameters
    ----------
    track: DeviceTrack
    bin_minutes: int
        Bin width, bins aligned to the UTC epoch

    Returns
    -------
    pandas.DataFrame
        Columns ``device_key``, ``bin_start`` (UTC), ``mean_speed_kmh``, ``legs``;
        empty for tracks with fewer than two fixes

    Raises
    ------
    ConfigInvalid
        If ``bin_minutes <= 0``
    """
    if not bin_minutes > 0:
        raise ConfigInvalid("bin_minutes", f"must be positive, got {bin_minutes}")
    columns = ["device_key", "bin_start", "mean_speed_kmh", "legs"]
    if len(track.records) < 2:
        return pd.DataFrame(columns=columns)

    lat, lon, ms = _coordinates(track)
    hours = np.diff(ms) / MS_PER_HOUR
    timed = hours > 0
    if not np.all(timed):
        logger.warning(f"{track.device_key}: skipped {np.count_nonzero(~timed)} legs with no elapsed time")

    legs = pd.DataFrame(
        {
            "start": pd.to_datetime(ms[:-1][timed], unit="ms", utc=True),
            "speed": _leg_lengths(lat, lon)[timed] / hours[timed],
        }
    )
    legs["bin_start"] = legs["start"].dt.floor(f"{bin_minutes}min")
    profile = legs.groupby("bin_start", sort=True)["speed"].agg(["mean", "count"]).reset_index()
    profile = profile.rename(columns={"mean": "mean_speed_kmh", "count": "legs"})
    profile.insert(0, "device_key", track.device_key)
    return profile[columns]


def write_summary_csv(summaries, path=None):
    """Columns ``device_key,name,distance_km,records,unique_locations,days_active``"""
    df = pd.DataFrame([vars(s) for s in summaries], columns=list(DeviceSummary.__dataclass_fields__))
    return df.to_csv(path, index=False, float_format="%.3f", lineterminator="\n")


def write_frequency_csv(report, path=None):
    """Display-rounded frequency table, columns ``metric,overall,per_tracker``"""
    rows = [(metric, str(overall), str(tracker)) for metric, overall, tracker in report.display().rows]
    df = pd.DataFrame(rows, columns=["metric", "overall", "per_tracker"])
    return df.to_csv(path, index=False, lineterminator="\n")


def write_dwell_csv(
    segments, path=None, speed_floor_kmh=DEFAULT_SPEED_FLOOR_KMH, min_duration_min=DEFAULT_MIN_DWELL_MIN
):
    """Dwell segments with the thresholds that produced them"""
    columns = ["device_key", "start_ms", "end_ms", "lat", "lon", "radius_m", "speed_floor_kmh", "min_duration_min"]
    rows = [
        [s.device_key, s.start, s.end, s.latitude, s.longitude, s.radius_m, speed_floor_kmh, min_duration_min]
        for s in segments
    ]
    df = pd.DataFrame(rows, columns=columns)
    return df.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def write_speed_csv(profiles, path=None):
    """Concatenated speed profiles, bin start as ISO-8601 UTC"""
    columns = ["device_key", "bin_start", "mean_speed_kmh", "legs"]
    frames = [p for p in profiles if len(p) > 0]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    df = df.assign(bin_start=[ts.strftime("%Y-%m-%dT%H:%M:%SZ") for ts in df["bin_start"]])
    return df.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def daily_update_counts(tracks):
    """
    Update count of each device on each UTC calendar day

    Parameters
    ----------
    tracks: list of DeviceTrack

    Returns
    -------
    pandas.DataFrame
        One row per device ordered by ``device_key``, columns ``device_key``,
        ``name`` and one ``YYYY-MM-DD`` column per date from the first fix to
        the last; days without updates count 0

    Raises
    ------
    EmptyWindow
        If no track has any record
    """
    fixes = pd.DataFrame(
        [(t.device_key, r.timestamp) for t in tracks for r in t.records], columns=["device_key", "timestamp"]
    )
    if len(fixes) == 0:
        msg = "No records to count daily updates from"
        logger.error(msg)
        raise EmptyWindow(msg)

    times = pd.to_datetime(fixes["timestamp"], unit="ms", utc=True)
    fixes["day"] = times.dt.strftime("%Y-%m-%d")
    days = pd.date_range(times.min().normalize(), times.max().normalize(), freq="D").strftime("%Y-%m-%d")
    names = {t.device_key: t.name for t in tracks}

    counts = pd.crosstab(fixes["device_key"], fixes["day"])
    counts = counts.reindex(index=sorted(names), columns=days, fill_value=0)
    counts.index.name = "device_key"
    counts.columns.name = None
    counts.insert(0, "name", [names[key] for key in counts.index])
    return counts.reset_index()


def write_daily_csv(counts, path=None):
    """Daily update counts, columns ``device_key,name`` then one per UTC date"""
    return counts.to_csv(path, index=False, lineterminator="\n")
