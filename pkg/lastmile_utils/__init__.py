from .cost import UNSTABLE, CostParams, classify_grid, congestion_cost, critical_cells, total_cost
from .engine import EventQueue, Payload, RngStream, run_until, sample_exponential
from .findmy import DeviceTrack, TraceRecord, build_tracks, ingest_directory, parse_items_data
from .kml import scenario_to_kml, tracks_to_kml
from .network import HubSpokeModel, NetworkConfig, RoutePolicy, RunMetrics, route_distance, run_scenario
from .sweep import SweepSpec, derive_seed, run_sweep
from .trajectory import (
    daily_update_counts,
    detour_ratio,
    device_summary,
    dwell_segments,
    frequency_report,
    haversine_km,
    speed_profile,
)
from .utils import (
    AxisTooShort,
    ConfigInvalid,
    DegenerateOD,
    EmptyDocument,
    EmptyTrack,
    EmptyWindow,
    LastMileError,
    MalformedJson,
    NonPositiveRate,
    PathNotFound,
    SchedulingInPast,
    km_to_miles,
    miles_to_km,
    read_config,
)
